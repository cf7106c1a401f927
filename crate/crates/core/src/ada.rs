//! AdaBoost with abstaining decision stumps.
//!
//! Each base classifier looks at one feature inside one age bin and votes
//! +1, -1, or abstains (0) when the feature is missing or the instance is
//! outside the bin. Stumps on the age feature itself cover every age. Each
//! round picks the stump minimising
//!
//! ```text
//! Z = W0 + 2 * sqrt(W+ * W-)
//! ```
//!
//! over the current instance weights, where `W+`, `W-` and `W0` are the
//! weights of correct, wrong and abstained votes, and gives it the smoothed
//! confidence `alpha = 0.5 * ln((W+ + eps) / (W- + eps))`, `eps = 1 / (2n)`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{AgeBins, Feature, FeatureVector, Snapshot};
use crate::error::err;
use crate::math::{exp, improves_min, ln, sigmoid, sqrt};
use crate::{Result, Scorer};

/// Relative slack under which two objective values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Which ages a stump votes on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeScope {
    All,
    Bin(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Votes +1 at or above the threshold.
    Positive,
    /// Votes +1 below the threshold.
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub feature: Feature,
    pub scope: AgeScope,
    pub threshold: f64,
    pub polarity: Polarity,
}

impl Stump {
    /// Vote for an instance whose age bin is already known.
    #[inline]
    pub fn vote_in_bin(&self, x: &FeatureVector, bin: Option<usize>) -> i8 {
        if let AgeScope::Bin(b) = self.scope {
            if bin != Some(b) {
                return 0;
            }
        }
        match x.get(self.feature) {
            None => 0,
            Some(v) if v >= self.threshold => self.polarity.sign(),
            Some(_) => -self.polarity.sign(),
        }
    }

    /// +1, -1, or 0 when the feature is missing or the age is out of scope.
    pub fn vote(&self, x: &FeatureVector, bins: &AgeBins) -> i8 {
        self.vote_in_bin(x, bins.bin(x.age()).ok())
    }
}

/// Free-function form of [`Stump::vote`].
pub fn stump_vote(stump: &Stump, x: &FeatureVector, bins: &AgeBins) -> i8 {
    stump.vote(x, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStump", into = "RawStump")]
pub struct WeightedStump {
    pub stump: Stump,
    pub alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawStump {
    feature: usize,
    bin: Option<usize>,
    threshold: f64,
    polarity: i8,
    alpha: f64,
}

impl From<WeightedStump> for RawStump {
    fn from(ws: WeightedStump) -> Self {
        RawStump {
            feature: ws.stump.feature.index(),
            bin: match ws.stump.scope {
                AgeScope::All => None,
                AgeScope::Bin(b) => Some(b),
            },
            threshold: ws.stump.threshold,
            polarity: ws.stump.polarity.sign(),
            alpha: ws.alpha,
        }
    }
}

impl TryFrom<RawStump> for WeightedStump {
    type Error = crate::Error;

    fn try_from(raw: RawStump) -> Result<Self> {
        let feature = Feature::from_index(raw.feature)
            .ok_or_else(|| err!(Config, "stump feature index {} invalid", raw.feature))?;
        let polarity = match raw.polarity {
            1 => Polarity::Positive,
            -1 => Polarity::Negative,
            p => return Err(err!(Config, "stump polarity {p} is not +1 or -1")),
        };
        if !raw.threshold.is_finite() {
            return Err(err!(Config, "stump threshold is not finite"));
        }
        if !(raw.alpha.is_finite() && raw.alpha > 0.0) {
            return Err(err!(Config, "stump weight {} must be finite and positive", raw.alpha));
        }
        Ok(WeightedStump {
            stump: Stump {
                feature,
                scope: raw.bin.map_or(AgeScope::All, AgeScope::Bin),
                threshold: raw.threshold,
                polarity,
            },
            alpha: raw.alpha,
        })
    }
}

/// Nonnegative per-instance weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> WeightVector {
        WeightVector(alloc::vec![1.0 / n as f64; n])
    }

    pub fn new(weights: Vec<f64>) -> Result<WeightVector> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(err!(Input, "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(err!(Input, "weights sum to {total}, not 1"));
        }
        Ok(WeightVector(weights))
    }

    /// Scales arbitrary nonnegative weights to sum to one.
    pub fn normalized(mut weights: Vec<f64>) -> Result<WeightVector> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(err!(Input, "weights sum to {total}"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        WeightVector::new(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Outcome of one stump search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StumpChoice {
    pub stump: Stump,
    pub z: f64,
    pub alpha: f64,
    pub w_correct: f64,
    pub w_wrong: f64,
    pub w_abstain: f64,
}

/// Instances of one (feature, age scope) pair with the feature present,
/// sorted by value.
struct Cell {
    feature: Feature,
    scope: AgeScope,
    entries: Vec<(f64, usize)>,
}

/// Presorted stump candidates for a fixed training set.
struct StumpSearch {
    cells: Vec<Cell>,
    positive: Vec<bool>,
}

impl StumpSearch {
    fn new(data: &[Snapshot], bins: &AgeBins) -> Result<StumpSearch> {
        let instance_bins = data
            .iter()
            .map(|s| bins.bin(s.features.age()))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for feature in Feature::ALL {
            let scopes: Vec<AgeScope> = if feature == Feature::Age {
                alloc::vec![AgeScope::All]
            } else {
                (0..bins.len()).map(AgeScope::Bin).collect()
            };
            for scope in scopes {
                let mut entries: Vec<(f64, usize)> = data
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| match scope {
                        AgeScope::All => true,
                        AgeScope::Bin(b) => instance_bins[*i] == b,
                    })
                    .filter_map(|(i, s)| s.features.get(feature).map(|v| (v, i)))
                    .collect();
                if entries.is_empty() {
                    continue;
                }
                entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cells.push(Cell { feature, scope, entries });
            }
        }
        Ok(StumpSearch {
            cells,
            positive: data.iter().map(|s| s.label.is_positive()).collect(),
        })
    }

    fn has_candidates(&self) -> bool {
        !self.cells.is_empty()
    }

    /// Best stump with a positive edge (`W+ > W-`), or `None`.
    fn best(&self, w: &[f64]) -> Option<StumpChoice> {
        let n = w.len();
        let eps = 1.0 / (2.0 * n as f64);
        let total: f64 = w.iter().sum();
        let mut best: Option<StumpChoice> = None;

        let mut consider = |stump: Stump, correct: f64, wrong: f64, abstain: f64| {
            if !(correct > wrong) {
                return;
            }
            let z = abstain + 2.0 * sqrt(correct * wrong);
            if best.as_ref().map_or(true, |b| improves_min(z, b.z, TIE_TOLERANCE)) {
                best = Some(StumpChoice {
                    stump,
                    z,
                    alpha: 0.5 * ln((correct + eps) / (wrong + eps)),
                    w_correct: correct,
                    w_wrong: wrong,
                    w_abstain: abstain,
                });
            }
        };

        for cell in &self.cells {
            let (mut pos, mut neg) = (0.0, 0.0);
            for &(_, i) in &cell.entries {
                if self.positive[i] {
                    pos += w[i];
                } else {
                    neg += w[i];
                }
            }
            let abstain = (total - pos - neg).max(0.0);
            let mk = |threshold, polarity| Stump {
                feature: cell.feature,
                scope: cell.scope,
                threshold,
                polarity,
            };

            // Threshold at the minimum: every covered instance votes the same way.
            let lowest = cell.entries[0].0;
            consider(mk(lowest, Polarity::Positive), pos, neg, abstain);
            consider(mk(lowest, Polarity::Negative), neg, pos, abstain);

            let (mut pos_below, mut neg_below) = (0.0, 0.0);
            for j in 0..cell.entries.len() - 1 {
                let (v, i) = cell.entries[j];
                if self.positive[i] {
                    pos_below += w[i];
                } else {
                    neg_below += w[i];
                }
                let next = cell.entries[j + 1].0;
                if next == v {
                    continue;
                }
                let threshold = midpoint(v, next);
                let up = (pos - pos_below) + neg_below;
                let down = (neg - neg_below) + pos_below;
                consider(mk(threshold, Polarity::Positive), up, down, abstain);
                consider(mk(threshold, Polarity::Negative), down, up, abstain);
            }
        }
        best
    }
}

/// Midpoint of `lo < hi` that is guaranteed to be `> lo`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mut m = (lo + hi) / 2.0;
    if !m.is_finite() {
        m = lo / 2.0 + hi / 2.0;
    }
    if m > lo {
        m
    } else {
        hi
    }
}

/// Exhaustive search for the stump minimising `Z` under weights `w`.
///
/// Candidates are, per feature and age scope, the smallest observed value
/// and every midpoint between consecutive distinct values, each with both
/// polarities; only stumps with `W+ > W-` qualify. Ties go to the lowest
/// feature index, then age bin, then threshold, then positive polarity.
pub fn best_stump(data: &[Snapshot], w: &WeightVector, bins: &AgeBins) -> Result<StumpChoice> {
    if data.len() != w.len() {
        return Err(err!(Input, "{} instances but {} weights", data.len(), w.len()));
    }
    let search = StumpSearch::new(data, bins)?;
    if !search.has_candidates() {
        return Err(err!(Training, "every feature is missing for every instance"));
    }
    search
        .best(w.as_slice())
        .ok_or_else(|| err!(Training, "no stump beats chance under the current weights"))
}

/// Ordered weighted stumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaModel {
    pub age_bins: AgeBins,
    /// Rounds requested; `stumps.len()` is smaller if training stopped early.
    pub rounds: usize,
    pub stumps: Vec<WeightedStump>,
}

impl AdaModel {
    pub fn empty(age_bins: AgeBins) -> AdaModel {
        AdaModel { age_bins, rounds: 0, stumps: Vec::new() }
    }

    /// `F(x) = sum of alpha_t * h_t(x)`.
    pub fn predict_margin(&self, x: &FeatureVector) -> f64 {
        self.staged_margin(x, self.stumps.len())
    }

    /// Margin of the first `rounds` stumps.
    pub fn staged_margin(&self, x: &FeatureVector, rounds: usize) -> f64 {
        let bin = self.age_bins.bin(x.age()).ok();
        self.stumps[..rounds.min(self.stumps.len())]
            .iter()
            .map(|ws| ws.alpha * f64::from(ws.stump.vote_in_bin(x, bin)))
            .sum()
    }

    /// Logistic map of twice the margin.
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        margin_to_proba(self.predict_margin(x))
    }

    pub fn validate(&self) -> Result<()> {
        for ws in &self.stumps {
            if let AgeScope::Bin(b) = ws.stump.scope {
                if b >= self.age_bins.len() {
                    return Err(err!(Config, "stump age bin {b} out of range"));
                }
            }
        }
        Ok(())
    }
}

impl Scorer for AdaModel {
    fn score(&self, x: &FeatureVector) -> f64 {
        self.predict_proba(x)
    }
}

pub fn margin_to_proba(margin: f64) -> f64 {
    sigmoid(2.0 * margin)
}

/// Runs up to `rounds` boosting rounds from uniform weights.
///
/// Training stops early when no stump has a positive edge.
pub fn fit(train: &[Snapshot], rounds: usize, bins: &AgeBins) -> Result<AdaModel> {
    let n = train.len();
    let n_pos = train.iter().filter(|s| s.label.is_positive()).count();
    if n_pos == 0 || n_pos == n {
        return Err(err!(Training, "training data must contain both classes"));
    }
    let search = StumpSearch::new(train, bins)?;
    let mut w = alloc::vec![1.0 / n as f64; n];
    let mut stumps = Vec::with_capacity(rounds);
    let instance_bins: Vec<Option<usize>> =
        train.iter().map(|s| bins.bin(s.features.age()).ok()).collect();

    for _ in 0..rounds {
        let Some(choice) = search.best(&w) else { break };
        if !(choice.z < 1.0 && choice.alpha > 0.0) {
            break;
        }
        let mut total = 0.0;
        for (i, s) in train.iter().enumerate() {
            let h = f64::from(choice.stump.vote_in_bin(&s.features, instance_bins[i]));
            w[i] *= exp(-choice.alpha * s.label.sign() * h);
            total += w[i];
        }
        w.iter_mut().for_each(|wi| *wi /= total);
        stumps.push(WeightedStump { stump: choice.stump, alpha: choice.alpha });
    }
    Ok(AdaModel { age_bins: bins.clone(), rounds, stumps })
}

/// Mean of `exp(-y F(x))` over a data set.
pub fn exponential_loss(model: &AdaModel, data: &[Snapshot], rounds: usize) -> f64 {
    let total: f64 = data
        .iter()
        .map(|s| exp(-s.label.sign() * model.staged_margin(&s.features, rounds)))
        .sum();
    total / data.len() as f64
}

/// Lexicographic order used for tie-breaking, exposed for tests and tools.
pub fn candidate_order(a: &Stump, b: &Stump) -> Ordering {
    a.feature
        .cmp(&b.feature)
        .then(a.scope.cmp(&b.scope))
        .then(a.threshold.total_cmp(&b.threshold))
        .then_with(|| match (a.polarity, b.polarity) {
            (x, y) if x == y => Ordering::Equal,
            (Polarity::Positive, _) => Ordering::Less,
            _ => Ordering::Greater,
        })
}
