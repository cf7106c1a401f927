//! Confusion counts, ROC analysis and patient-disjoint cross-validation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{kfold, Label, Snapshot};
use crate::error::err;
use crate::{Result, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// True-positive rate; 0 when there are no positives.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// True-negative rate; 0 when there are no negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

/// Counts with transfer as the positive class.
pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<Confusion> {
    if labels.len() != predictions.len() {
        return Err(err!(
            Input,
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        ));
    }
    if labels.is_empty() {
        return Err(err!(Input, "no instances to count"));
    }
    let mut c = Confusion::default();
    for (y, p) in labels.iter().zip(predictions) {
        match (y.is_positive(), p.is_positive()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn class_counts(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(err!(Input, "{} scores but {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(err!(Input, "scores contain NaN"));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(err!(Metric, "ROC analysis needs both classes"));
    }
    Ok((pos, neg))
}

/// Indices grouped by equal score, groups in descending score order.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(alloc::vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    // Twice the concordant-pair count, kept integral.
    let mut twice: u128 = 0;
    let mut neg_below = neg as u128;
    for group in tie_groups(scores) {
        let gp = group.iter().filter(|&&i| labels[i].is_positive()).count() as u128;
        let gn = group.len() as u128 - gp;
        neg_below -= gn;
        twice += 2 * gp * neg_below + gp * gn;
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// One operating point: instances scoring at or above `threshold` are
/// called positive. The first point has an infinite threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(with = "infinite_as_null")]
    pub threshold: f64,
}

/// ROC curve from `(0, 0)` to `(1, 1)` with one point per distinct score.
pub fn roc_points(scores: &[f64], labels: &[Label]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut points = alloc::vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in tie_groups(scores) {
        for &i in &group {
            if labels[i].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: scores[group[0]],
        });
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Threshold metrics, AUROC and the ROC curve of one scored test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auroc: f64,
    pub threshold: f64,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    pub fn confusion(&self) -> Confusion {
        Confusion { tp: self.tp, fp: self.fp, tn: self.tn, fn_: self.fn_ }
    }
}

/// Classify `score >= threshold` as transfer and summarise.
pub fn evaluate(scores: &[f64], labels: &[Label], threshold: f64) -> Result<EvalReport> {
    let predictions: Vec<Label> = scores
        .iter()
        .map(|&s| if s >= threshold { Label::Transfer } else { Label::NoTransfer })
        .collect();
    let c = confusion(labels, &predictions)?;
    Ok(EvalReport {
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        accuracy: c.accuracy(),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
        auroc: auroc(scores, labels)?,
        threshold,
        roc: roc_points(scores, labels)?,
    })
}

/// Scores every snapshot with `model` and evaluates at `threshold`.
pub fn evaluate_model<S: Scorer + ?Sized>(
    model: &S,
    data: &[Snapshot],
    threshold: f64,
) -> Result<EvalReport> {
    let scores: Vec<f64> = data.iter().map(|s| model.score(&s.features)).collect();
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    evaluate(&scores, &labels, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub fold_auroc: Vec<f64>,
    pub mean_auroc: f64,
}

/// Fits `trainer` on each training side of a patient-disjoint k-fold split
/// and reports validation AUROC per fold and on average.
pub fn cross_validate<S, F>(mut trainer: F, cohort: &[Snapshot], k: usize, seed: u64) -> Result<CvResult>
where
    S: Scorer,
    F: FnMut(&[Snapshot]) -> Result<S>,
{
    let folds = kfold(cohort, k, seed)?;
    let mut fold_auroc = Vec::with_capacity(k);
    for fold in &folds {
        let model = trainer(&fold.train_set(cohort))?;
        let (scores, labels): (Vec<f64>, Vec<Label>) = fold
            .validation
            .iter()
            .map(|&i| (model.score(&cohort[i].features), cohort[i].label))
            .unzip();
        fold_auroc.push(auroc(&scores, &labels)?);
    }
    let mean_auroc = fold_auroc.iter().sum::<f64>() / fold_auroc.len() as f64;
    Ok(CvResult { fold_auroc, mean_auroc })
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
