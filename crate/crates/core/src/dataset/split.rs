use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::err;
use crate::Result;

use super::Snapshot;

/// Indices of one cross-validation fold into the cohort it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Fold {
    pub fn train_set(&self, cohort: &[Snapshot]) -> Vec<Snapshot> {
        self.train.iter().map(|&i| cohort[i].clone()).collect()
    }

    pub fn validation_set(&self, cohort: &[Snapshot]) -> Vec<Snapshot> {
        self.validation.iter().map(|&i| cohort[i].clone()).collect()
    }
}

/// Instance indices per patient, keyed by first appearance.
fn patient_groups(cohort: &[Snapshot]) -> Vec<Vec<usize>> {
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in cohort.iter().enumerate() {
        let g = *slot.entry(s.patient_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

fn round_count(fraction: f64, n: usize) -> usize {
    libm::round(fraction * n as f64) as usize
}

/// Stratified, patient-disjoint hold-out split.
///
/// Each class contributes `round(test_fraction * class size)` instances to
/// the test side. Patients that end up on both sides move wholly to train;
/// whole single-side patients from train then top the test side back up to
/// its per-class targets. Both outputs keep cohort order.
pub fn split_train_test(
    cohort: &[Snapshot],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Snapshot>, Vec<Snapshot>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(err!(Range, "test fraction {test_fraction} outside (0, 1)"));
    }
    let groups = patient_groups(cohort);
    if groups.len() < 2 {
        return Err(err!(Split, "cannot split a cohort with fewer than two patients"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..cohort.len()).partition(|&i| cohort[i].label.is_positive());
    let pos_target = round_count(test_fraction, pos.len());
    let neg_target = round_count(test_fraction, neg.len());
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut in_test = alloc::vec![false; cohort.len()];
    for &i in pos[..pos_target].iter().chain(&neg[..neg_target]) {
        in_test[i] = true;
    }

    // Straddling patients go to train and stay there.
    let mut straddles = alloc::vec![false; groups.len()];
    for (g, members) in groups.iter().enumerate() {
        let n_test = members.iter().filter(|&&i| in_test[i]).count();
        if n_test > 0 && n_test < members.len() {
            straddles[g] = true;
            for &i in members {
                in_test[i] = false;
            }
        }
    }

    let count = |in_test: &[bool], positive: bool| {
        (0..cohort.len())
            .filter(|&i| in_test[i] && cohort[i].label.is_positive() == positive)
            .count()
    };
    let mut pos_test = count(&in_test, true);
    let mut neg_test = count(&in_test, false);

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    for g in order {
        if pos_test == pos_target && neg_test == neg_target {
            break;
        }
        let members = &groups[g];
        if straddles[g] || in_test[members[0]] {
            continue;
        }
        let gp = members.iter().filter(|&&i| cohort[i].label.is_positive()).count();
        let gn = members.len() - gp;
        if pos_test + gp <= pos_target && neg_test + gn <= neg_target {
            for &i in members {
                in_test[i] = true;
            }
            pos_test += gp;
            neg_test += gn;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in cohort.iter().enumerate() {
        if in_test[i] {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, test))
}

/// Patient-disjoint k-fold partition.
///
/// Patients are shuffled and those with any positive instance are dealt
/// first, each to the fold holding the fewest positives; the remaining
/// patients go to the fold holding the fewest negatives. Ties go to the
/// smaller fold, then the lower index. Every fold therefore sees both classes
/// whenever each class spans at least `k` patients.
pub fn kfold(cohort: &[Snapshot], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(err!(Split, "k = {k}: need at least two folds"));
    }
    let mut groups = patient_groups(cohort);
    if k > groups.len() {
        return Err(err!(Split, "k = {k} exceeds the {} distinct patients", groups.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let positives_in = |g: &Vec<usize>| g.iter().filter(|&&i| cohort[i].label.is_positive()).count();
    groups.sort_by_key(|g| positives_in(g) == 0);

    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    let mut positives = alloc::vec![0usize; k];
    for g in &groups {
        let gp = positives_in(g);
        let f = (0..k)
            .min_by_key(|&f| {
                let class_count = if gp > 0 { positives[f] } else { members[f].len() - positives[f] };
                (class_count, members[f].len(), f)
            })
            .expect("k >= 2");
        members[f].extend_from_slice(g);
        positives[f] += gp;
    }

    let mut fold_of = alloc::vec![0usize; cohort.len()];
    for (f, m) in members.iter().enumerate() {
        for &i in m {
            fold_of[i] = f;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (validation, train) = (0..cohort.len()).partition(|&i| fold_of[i] == f);
            Fold { train, validation }
        })
        .collect())
}
