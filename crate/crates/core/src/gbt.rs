//! Regularized gradient tree boosting with binary logistic loss.
//!
//! Trees are grown depth-first with the second-order split gain
//!
//! ```text
//! gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma
//! ```
//!
//! and leaves take the Newton weight `-eta * G / (H + lambda)`. Each split
//! learns where rows with a missing value go, so prediction never needs
//! imputation.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ada::midpoint;
use crate::dataset::{FeatureVector, Snapshot, NUM_FEATURES};
use crate::error::err;
use crate::math::{derive_seed, exp, improves_min, ln, sigmoid};
use crate::metrics::cross_validate;
use crate::{Result, Scorer};

/// Relative slack under which two gains count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Fraction of feature columns sampled per tree.
    pub colsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            num_trees: 16,
            max_depth: 3,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            colsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(err!(Config, "learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(err!(Config, "lambda {} must be finite and >= 0", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(err!(Config, "gamma {} must be finite and >= 0", self.gamma));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return Err(err!(Config, "min_child_weight {} must be finite and >= 0", self.min_child_weight));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return Err(err!(Config, "colsample {} outside (0, 1]", self.colsample));
        }
        Ok(())
    }

    /// Number of feature columns each tree may split on.
    pub fn columns_per_tree(&self) -> usize {
        (libm::ceil(self.colsample * NUM_FEATURES as f64) as usize).clamp(1, NUM_FEATURES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// A regression tree. Rows with `x[feature] < threshold` go left; missing
/// values follow `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        default: Direction,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        leaf: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf } => return *leaf,
                TreeNode::Split { feature, threshold, default, left, right } => {
                    let go_left = match x.value(*feature) {
                        Some(v) => v < *threshold,
                        None => *default == Direction::Left,
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<f64> {
        match self {
            TreeNode::Leaf { leaf } => alloc::vec![*leaf],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TreeNode::Leaf { leaf } if leaf.is_finite() => Ok(()),
            TreeNode::Leaf { .. } => Err(err!(Config, "leaf score is not finite")),
            TreeNode::Split { feature, threshold, left, right, .. } => {
                if *feature >= NUM_FEATURES {
                    return Err(err!(Config, "split feature {feature} out of range"));
                }
                if !threshold.is_finite() {
                    return Err(err!(Config, "split threshold is not finite"));
                }
                left.validate()?;
                right.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Initial log-odds.
    pub base_score: f64,
    pub params: GbtParams,
    pub trees: Vec<TreeNode>,
}

impl GbtModel {
    pub fn predict_margin(&self, x: &FeatureVector) -> f64 {
        self.staged_margin(x, self.trees.len())
    }

    /// Log-odds after the first `trees` trees.
    pub fn staged_margin(&self, x: &FeatureVector, trees: usize) -> f64 {
        self.base_score
            + self.trees[..trees.min(self.trees.len())]
                .iter()
                .map(|t| t.predict(x))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.predict_margin(x))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_score.is_finite() {
            return Err(err!(Config, "base score is not finite"));
        }
        self.params.validate()?;
        self.trees.iter().try_for_each(TreeNode::validate)
    }
}

impl Scorer for GbtModel {
    fn score(&self, x: &FeatureVector) -> f64 {
        self.predict_proba(x)
    }
}

/// Gradient and hessian of the logistic loss in the log-odds `f`, for a
/// 0/1 target `y`.
pub fn logistic_grad_hess(y: f64, f: f64) -> (f64, f64) {
    let p = sigmoid(f);
    // Keep the hessian strictly positive in the saturated tails.
    (p - y, (p * (1.0 - p)).max(1e-16))
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p = sigmoid(f)`, computed stably.
pub fn logistic_loss(y: f64, f: f64) -> f64 {
    // ln(1 + e^f) - y f
    let softplus = if f > 0.0 { f + libm::log1p(exp(-f)) } else { libm::log1p(exp(f)) };
    softplus - y * f
}

/// Newton leaf weight `-eta * G / (H + lambda)`; zero for a degenerate leaf.
pub fn leaf_score(g: f64, h: f64, lambda: f64, eta: f64) -> f64 {
    let den = h + lambda;
    if den == 0.0 {
        0.0
    } else {
        -eta * g / den
    }
}

fn structure_score(g: f64, h: f64, lambda: f64) -> f64 {
    let den = h + lambda;
    if den > 0.0 {
        g * g / den
    } else {
        0.0
    }
}

/// Regularized split gain for a left/right partition of `(G, H)`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (structure_score(gl, hl, lambda) + structure_score(gr, hr, lambda)
        - structure_score(gl + gr, hl + hr, lambda))
        - gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub default: Direction,
    pub gain: f64,
}

/// Best split of `rows` over `allowed` features, or `None` when no
/// candidate has positive gain with both children meeting
/// `min_child_weight`.
///
/// Every midpoint between consecutive distinct present values is tried
/// with missing rows sent left and then right. Ties go to the lowest
/// feature, then the lowest threshold, then the left default.
pub fn find_best_split(
    data: &[FeatureVector],
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    allowed: &[usize],
) -> Option<SplitCandidate> {
    let mut features: Vec<usize> = allowed.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<SplitCandidate> = None;
    let mut present: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for feature in features {
        present.clear();
        let (mut g_miss, mut h_miss) = (0.0, 0.0);
        let (mut g_all, mut h_all) = (0.0, 0.0);
        for &r in rows {
            g_all += grad[r];
            h_all += hess[r];
            match data[r].value(feature) {
                Some(v) => present.push((v, r)),
                None => {
                    g_miss += grad[r];
                    h_miss += hess[r];
                }
            }
        }
        if present.len() < 2 {
            continue;
        }
        present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let (mut gl, mut hl) = (0.0, 0.0);
        for j in 0..present.len() - 1 {
            let (v, r) = present[j];
            gl += grad[r];
            hl += hess[r];
            let next = present[j + 1].0;
            if next == v {
                continue;
            }
            let threshold = midpoint(v, next);
            for default in [Direction::Left, Direction::Right] {
                let (g_left, h_left) = match default {
                    Direction::Left => (gl + g_miss, hl + h_miss),
                    Direction::Right => (gl, hl),
                };
                let (g_right, h_right) = (g_all - g_left, h_all - h_left);
                if h_left < params.min_child_weight || h_right < params.min_child_weight {
                    continue;
                }
                let gain =
                    split_gain(g_left, h_left, g_right, h_right, params.lambda, params.gamma);
                if !(gain > 0.0) {
                    continue;
                }
                if best.map_or(true, |b| improves_min(-gain, -b.gain, TIE_TOLERANCE)) {
                    best = Some(SplitCandidate { feature, threshold, default, gain });
                }
            }
        }
    }
    best
}

fn grow(
    data: &[FeatureVector],
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    allowed: &[usize],
    depth: usize,
) -> TreeNode {
    let split = if depth < params.max_depth && !rows.is_empty() {
        find_best_split(data, &rows, grad, hess, params, allowed)
    } else {
        None
    };
    match split {
        None => {
            let g: f64 = rows.iter().map(|&r| grad[r]).sum();
            let h: f64 = rows.iter().map(|&r| hess[r]).sum();
            TreeNode::Leaf { leaf: leaf_score(g, h, params.lambda, params.learning_rate) }
        }
        Some(s) => {
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&r| match data[r].value(s.feature) {
                    Some(v) => v < s.threshold,
                    None => s.default == Direction::Left,
                });
            TreeNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                default: s.default,
                left: Box::new(grow(data, left, grad, hess, params, allowed, depth + 1)),
                right: Box::new(grow(data, right, grad, hess, params, allowed, depth + 1)),
            }
        }
    }
}

/// Feature columns available to tree `tree_index`.
pub fn sampled_columns(params: &GbtParams, tree_index: usize) -> Vec<usize> {
    let k = params.columns_per_tree();
    if k == NUM_FEATURES {
        return (0..NUM_FEATURES).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, tree_index as u64));
    let mut cols = index::sample(&mut rng, NUM_FEATURES, k).into_vec();
    cols.sort_unstable();
    cols
}

/// Boosts `params.num_trees` trees starting from the log-odds of the
/// positive rate.
pub fn fit(train: &[Snapshot], params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    let n = train.len();
    let n_pos = train.iter().filter(|s| s.label.is_positive()).count();
    if n_pos == 0 || n_pos == n {
        return Err(err!(Training, "training data must contain both classes"));
    }
    let rate = n_pos as f64 / n as f64;
    let base_score = ln(rate / (1.0 - rate));

    let data: Vec<FeatureVector> = train.iter().map(|s| s.features).collect();
    let targets: Vec<f64> = train.iter().map(|s| s.label.as_binary()).collect();
    let mut margins = alloc::vec![base_score; n];
    let mut grad = alloc::vec![0.0; n];
    let mut hess = alloc::vec![0.0; n];
    let mut trees = Vec::with_capacity(params.num_trees);

    for t in 0..params.num_trees {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(targets[i], margins[i]);
        }
        let allowed = sampled_columns(params, t);
        let tree = grow(&data, (0..n).collect(), &grad, &hess, params, &allowed, 0);
        for (m, x) in margins.iter_mut().zip(&data) {
            *m += tree.predict(x);
        }
        trees.push(tree);
    }
    Ok(GbtModel { base_score, params: *params, trees })
}

/// Mean logistic loss of the first `trees` trees over a data set.
pub fn training_loss(model: &GbtModel, data: &[Snapshot], trees: usize) -> f64 {
    data.iter()
        .map(|s| logistic_loss(s.label.as_binary(), model.staged_margin(&s.features, trees)))
        .sum::<f64>()
        / data.len() as f64
}

/// Ranges sampled by [`random_search`]; each pair is `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub lambda: (f64, f64),
    pub gamma: (f64, f64),
    pub min_child_weight: (f64, f64),
    pub colsample: (f64, f64),
    /// Inclusive.
    pub max_depth: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (0.05, 0.5),
            lambda: (0.0, 5.0),
            gamma: (0.0, 1.0),
            min_child_weight: (0.0, 5.0),
            colsample: (0.5, 1.0),
            max_depth: (2, 5),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(err!(Config, "search range {name} = [{lo}, {hi}] is not a finite interval"))
            }
        };
        ordered("learning_rate", self.learning_rate)?;
        ordered("lambda", self.lambda)?;
        ordered("gamma", self.gamma)?;
        ordered("min_child_weight", self.min_child_weight)?;
        ordered("colsample", self.colsample)?;
        if self.max_depth.0 > self.max_depth.1 {
            return Err(err!(Config, "search range max_depth is empty"));
        }
        // Corners must be valid parameter values.
        for corner in [self.sample_corner(false), self.sample_corner(true)] {
            corner.validate()?;
        }
        Ok(())
    }

    fn sample_corner(&self, high: bool) -> GbtParams {
        let pick = |r: (f64, f64)| if high { r.1 } else { r.0 };
        GbtParams {
            learning_rate: pick(self.learning_rate),
            lambda: pick(self.lambda),
            gamma: pick(self.gamma),
            min_child_weight: pick(self.min_child_weight),
            colsample: pick(self.colsample),
            max_depth: if high { self.max_depth.1 } else { self.max_depth.0 },
            ..GbtParams::default()
        }
    }

    /// Draws trial `trial`; `base` supplies the fields that are not searched.
    pub fn sample(&self, base: &GbtParams, seed: u64, trial: usize) -> GbtParams {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, trial as u64));
        let mut uniform = |(lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let learning_rate = uniform(self.learning_rate);
        let lambda = uniform(self.lambda);
        let gamma = uniform(self.gamma);
        let min_child_weight = uniform(self.min_child_weight);
        let colsample = uniform(self.colsample);
        let max_depth = rng.random_range(self.max_depth.0..=self.max_depth.1);
        GbtParams {
            learning_rate,
            lambda,
            gamma,
            min_child_weight,
            colsample,
            max_depth,
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: GbtParams,
    pub best_mean_auroc: f64,
    /// Every evaluated candidate with its mean validation AUROC, in order.
    pub trials: Vec<(GbtParams, f64)>,
}

/// Cross-validates each candidate on the same folds and keeps the highest
/// mean AUROC; the earliest candidate wins ties.
pub fn select_params(
    train: &[Snapshot],
    candidates: &[GbtParams],
    folds: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(err!(Config, "no candidate parameters"));
    }
    let mut trials = Vec::with_capacity(candidates.len());
    for params in candidates {
        let cv = cross_validate(|fold| fit(fold, params), train, folds, seed)?;
        trials.push((*params, cv.mean_auroc));
    }
    let (best, best_mean_auroc) = trials
        .iter()
        .copied()
        .fold(None::<(GbtParams, f64)>, |acc, (p, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((p, s)),
        })
        .expect("non-empty");
    Ok(SearchOutcome { best, best_mean_auroc, trials })
}

/// Random hyperparameter search scored by patient-disjoint k-fold AUROC.
pub fn random_search(
    train: &[Snapshot],
    base: &GbtParams,
    space: &SearchSpace,
    folds: usize,
    trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(err!(Config, "random search needs at least one trial"));
    }
    space.validate()?;
    let candidates: Vec<GbtParams> = (0..trials).map(|t| space.sample(base, seed, t)).collect();
    select_params(train, &candidates, folds, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use alloc::format;
    use alloc::string::String;
    use proptest::prelude::*;
    use rand::Rng;

    fn snap(hr: Option<f64>, rr: Option<f64>, positive: bool) -> Snapshot {
        Snapshot {
            features: FeatureVector::derive([hr, None, rr, None, None, None], 5.0).unwrap(),
            label: if positive { Label::Transfer } else { Label::NoTransfer },
            encounter_id: String::new(),
            patient_id: String::new(),
        }
    }

    #[test]
    fn grad_hess_examples() {
        assert_eq!(logistic_grad_hess(1.0, 0.0), (-0.5, 0.25));
        assert_eq!(logistic_grad_hess(0.0, 0.0), (0.5, 0.25));
        let (g, h) = logistic_grad_hess(1.0, 2.0);
        assert!((g + 0.119_202_922_022_117_6).abs() < 1e-9);
        assert!((h - 0.104_993_585_403_507_1).abs() < 1e-9);
    }

    #[test]
    fn grad_hess_match_finite_differences() {
        let step = 1e-5;
        for y in [0.0, 1.0] {
            for i in 0..=100 {
                let f = -5.0 + i as f64 * 0.1;
                let (g, h) = logistic_grad_hess(y, f);
                let fd_g = (logistic_loss(y, f + step) - logistic_loss(y, f - step)) / (2.0 * step);
                let fd_h = (logistic_loss(y, f + step) - 2.0 * logistic_loss(y, f)
                    + logistic_loss(y, f - step))
                    / (step * step);
                assert!((g - fd_g).abs() < 1e-6, "g at y={y} f={f}");
                assert!((h - fd_h).abs() < 1e-4, "h at y={y} f={f}");
                // Hessian as the derivative of the analytic gradient.
                let dg = (logistic_grad_hess(y, f + step).0 - logistic_grad_hess(y, f - step).0)
                    / (2.0 * step);
                assert!((h - dg).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn leaf_score_minimises_quadratic() {
        // Grid search over w for g*w + (h + lambda) w^2 / 2.
        let (g, h, lambda) = (-1.0, 0.5, 1.0);
        let (mut best_w, mut best) = (0.0, f64::INFINITY);
        for i in -200_000..=200_000 {
            let w = i as f64 * 1e-5;
            let obj = g * w + 0.5 * (h + lambda) * w * w;
            if obj < best {
                best = obj;
                best_w = w;
            }
        }
        let w = leaf_score(g, h, lambda, 1.0);
        assert!((w - best_w).abs() < 1e-5);
        assert!((w - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(leaf_score(0.0, 0.3, 1.0, 1.0), 0.0);
        assert!(leaf_score(-1.0, 0.5, 1e12, 1.0).abs() < 1e-11);
        assert_eq!(leaf_score(3.0, 0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn larger_lambda_shrinks_leaves() {
        for (g, h) in [(-1.0, 0.5), (2.5, 0.1), (0.3, 3.0)] {
            let mut prev = f64::INFINITY;
            for lambda in [0.0, 0.5, 1.0, 4.0, 100.0] {
                let w = leaf_score(g, h, lambda, 0.7).abs();
                assert!(w <= prev);
                prev = w;
            }
        }
    }

    #[test]
    fn documented_split_example() {
        let data: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&x| FeatureVector::derive([Some(x), None, None, None, None, None], 5.0).unwrap())
            .collect();
        let g = [0.5, 0.5, -0.5, -0.5];
        let h = [0.25; 4];
        let params = GbtParams { lambda: 0.0, gamma: 0.0, min_child_weight: 0.0, ..Default::default() };
        let s = find_best_split(&data, &[0, 1, 2, 3], &g, &h, &params, &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.default, Direction::Left);
        assert!((s.gain - 2.0).abs() < 1e-12);

        let strict = GbtParams { gamma: 2.5, ..params };
        assert_eq!(find_best_split(&data, &[0, 1, 2, 3], &g, &h, &strict, &[0]), None);
    }

    #[test]
    fn all_missing_feature_has_no_split() {
        let data: Vec<_> = (0..4).map(|_| FeatureVector::age_only(5.0).unwrap()).collect();
        let params = GbtParams { min_child_weight: 0.0, ..Default::default() };
        let none = find_best_split(&data, &[0, 1, 2, 3], &[1.0, -1.0, 1.0, -1.0], &[0.25; 4], &params, &[0, 1, 2]);
        assert_eq!(none, None);
    }

    #[test]
    fn missing_rows_pick_their_side() {
        // Missing rows behave like the high values, so they default right.
        let mut data: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&x| FeatureVector::derive([Some(x), None, None, None, None, None], 5.0).unwrap())
            .collect();
        data.push(FeatureVector::age_only(5.0).unwrap());
        let g = [0.5, 0.5, -0.5, -0.5, -0.5];
        let params = GbtParams { lambda: 0.0, min_child_weight: 0.0, ..Default::default() };
        let s = find_best_split(&data, &[0, 1, 2, 3, 4], &g, &[0.25; 5], &params, &[0]).unwrap();
        assert_eq!(s.default, Direction::Right);
        assert_eq!(s.threshold, 2.5);
    }

    fn brute_force(
        data: &[FeatureVector],
        g: &[f64],
        h: &[f64],
        params: &GbtParams,
    ) -> Option<SplitCandidate> {
        let mut best: Option<SplitCandidate> = None;
        for feature in 0..NUM_FEATURES {
            let mut values: Vec<f64> = data.iter().filter_map(|x| x.value(feature)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let threshold = midpoint(w[0], w[1]);
                for default in [Direction::Left, Direction::Right] {
                    let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                    for (i, x) in data.iter().enumerate() {
                        let left = match x.value(feature) {
                            Some(v) => v < threshold,
                            None => default == Direction::Left,
                        };
                        if left {
                            gl += g[i];
                            hl += h[i];
                        } else {
                            gr += g[i];
                            hr += h[i];
                        }
                    }
                    if hl < params.min_child_weight || hr < params.min_child_weight {
                        continue;
                    }
                    let score = |g: f64, h: f64| if h + params.lambda > 0.0 { g * g / (h + params.lambda) } else { 0.0 };
                    let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - params.gamma;
                    if gain > 0.0 && best.map_or(true, |b| gain > b.gain + 1e-12 * b.gain.abs().max(1.0)) {
                        best = Some(SplitCandidate { feature, threshold, default, gain });
                    }
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn split_search_matches_brute_force(
            rows in proptest::collection::vec(
                (proptest::option::weighted(0.7, 0u8..6), proptest::option::weighted(0.7, 0u8..6), -1.0f64..1.0, 0.01f64..0.25),
                1..40,
            ),
            lambda in 0.0f64..2.0,
            gamma in 0.0f64..0.2,
            mcw in 0.0f64..0.5,
        ) {
            let data: Vec<FeatureVector> = rows
                .iter()
                .map(|(a, b, _, _)| {
                    FeatureVector::derive(
                        [a.map(f64::from), None, b.map(|v| f64::from(v) * 3.0), None, None, None],
                        5.0,
                    )
                    .unwrap()
                })
                .collect();
            let g: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let h: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let params = GbtParams { lambda, gamma, min_child_weight: mcw, ..Default::default() };
            let all: Vec<usize> = (0..NUM_FEATURES).collect();
            let idx: Vec<usize> = (0..data.len()).collect();
            let got = find_best_split(&data, &idx, &g, &h, &params, &all);
            let want = brute_force(&data, &g, &h, &params);
            match (got, want) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    prop_assert!((a.gain - b.gain).abs() < 1e-9);
                    prop_assert_eq!((a.feature, a.threshold, a.default), (b.feature, b.threshold, b.default));
                }
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }

    fn xor_data() -> Vec<Snapshot> {
        let mut v = Vec::new();
        for i in 0..40 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            let jitter = i as f64 * 0.001;
            v.push(snap(Some(a + jitter), Some(b + jitter), (a != b) as u8 == 1));
        }
        v
    }

    #[test]
    fn learns_xor() {
        let data = xor_data();
        let params = GbtParams { min_child_weight: 0.0, ..Default::default() };
        let model = fit(&data, &params).unwrap();
        assert_eq!(model.trees.len(), 16);
        for s in &data {
            let p = model.predict_proba(&s.features);
            assert_eq!(p >= 0.5, s.label.is_positive(), "p = {p}");
        }
        assert!(model.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn zero_trees_predict_base_rate() {
        let mut data = xor_data();
        data.truncate(4);
        data.push(snap(Some(9.0), None, true));
        let params = GbtParams { num_trees: 0, ..Default::default() };
        let model = fit(&data, &params).unwrap();
        let p = model.predict_proba(&data[0].features);
        assert!((p - 3.0 / 5.0).abs() < 1e-12);

        let balanced = xor_data();
        let model = fit(&balanced, &params).unwrap();
        assert_eq!(model.base_score, 0.0);
        assert_eq!(model.predict_proba(&balanced[0].features), 0.5);
    }

    #[test]
    fn single_leaf_tree_probability() {
        let model = GbtModel {
            base_score: 0.0,
            params: GbtParams::default(),
            trees: alloc::vec![TreeNode::Leaf { leaf: 0.8 }],
        };
        let x = FeatureVector::age_only(3.0).unwrap();
        assert_eq!(model.predict_proba(&x), sigmoid(0.8));
    }

    #[test]
    fn all_missing_routes_to_a_leaf() {
        let model = fit(&xor_data(), &GbtParams::default()).unwrap();
        let x = FeatureVector::age_only(3.0).unwrap();
        let p = model.predict_proba(&x);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let data = alloc::vec![snap(Some(1.0), None, true), snap(Some(2.0), None, true)];
        assert!(matches!(fit(&data, &GbtParams::default()), Err(crate::Error::Training(_))));
        let bad = GbtParams { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(fit(&xor_data(), &bad), Err(crate::Error::Config(_))));
    }

    #[test]
    fn column_sampling_is_seeded() {
        let p = GbtParams { colsample: 0.3, seed: 5, ..Default::default() };
        assert_eq!(p.columns_per_tree(), 3);
        let a = sampled_columns(&p, 2);
        assert_eq!(a.len(), 3);
        assert_eq!(a, sampled_columns(&p, 2));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    fn noisy_cohort(n: usize, seed: u64) -> Vec<Snapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let shift = if positive { 15.0 } else { 0.0 };
                let hr = rng.random_bool(0.85).then(|| rng.random_range(70.0..130.0) + shift);
                let rr = rng.random_bool(0.85).then(|| rng.random_range(15.0..40.0) + shift / 3.0);
                let mut s = snap(hr, rr, positive);
                s.patient_id = format!("p{i}");
                s
            })
            .collect()
    }

    #[test]
    fn training_loss_is_monotone() {
        let data = noisy_cohort(400, 1);
        let model = fit(&data, &GbtParams::default()).unwrap();
        let mut prev = training_loss(&model, &data, 0);
        for t in 1..=model.trees.len() {
            let cur = training_loss(&model, &data, t);
            assert!(cur <= prev + 1e-12, "tree {t}: {cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn leaves_respect_min_child_weight() {
        let data = noisy_cohort(300, 2);
        let params = GbtParams { min_child_weight: 5.0, max_depth: 4, ..Default::default() };
        let model = fit(&data, &params).unwrap();
        // Replay the first tree's partition at the initial hessian (0.25 each).
        fn check(node: &TreeNode, rows: Vec<usize>, data: &[Snapshot], root: bool) {
            match node {
                TreeNode::Leaf { .. } => assert!(root || rows.len() as f64 * 0.25 >= 5.0),
                TreeNode::Split { feature, threshold, default, left, right } => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| {
                        match data[i].features.value(*feature) {
                            Some(v) => v < *threshold,
                            None => *default == Direction::Left,
                        }
                    });
                    check(left, l, data, false);
                    check(right, r, data, false);
                }
            }
        }
        check(&model.trees[0], (0..data.len()).collect(), &data, true);
        assert!(model.trees.iter().all(|t| t.depth() <= 4));
    }

    #[test]
    fn dominated_candidate_loses() {
        let data = noisy_cohort(120, 3);
        let good = GbtParams { num_trees: 8, ..Default::default() };
        let crippled = GbtParams { gamma: 1e6, ..good };
        let out = select_params(&data, &[crippled, good], 4, 9).unwrap();
        assert_eq!(out.best, good);
        assert_eq!(out.trials[0].1, 0.5);
        assert!(out.best_mean_auroc > 0.6);
    }

    #[test]
    fn random_search_is_deterministic() {
        let data = noisy_cohort(80, 4);
        let base = GbtParams { num_trees: 4, ..Default::default() };
        let space = SearchSpace::default();
        let a = random_search(&data, &base, &space, 3, 3, 17).unwrap();
        let b = random_search(&data, &base, &space, 3, 3, 17).unwrap();
        assert_eq!(a, b);
        let one = random_search(&data, &base, &space, 3, 1, 17).unwrap();
        assert_eq!(one.best, space.sample(&base, 17, 0));
        assert!(random_search(&data, &base, &space, 3, 0, 17).is_err());
        assert_eq!(a.best.num_trees, 4);
    }
}
