use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::err;
use crate::Result;

use super::{AgeBins, Encounter, FeatureVector, Label, Snapshot, Timestamp, SECONDS_PER_HOUR};

/// Observation window length in hours.
pub const WINDOW_HOURS: f64 = 6.0;
/// Gap between the end of a transfer encounter's window and the transfer.
pub const LEAD_HOURS: f64 = 2.0;

/// How non-transfer encounters are paired with transfer encounters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchPolicy {
    /// Uniform sampling without replacement.
    #[default]
    Uniform,
    /// For each transfer, a random unused non-transfer encounter from the
    /// same default age bin; the nearest age when that bin is exhausted.
    AgeMatched,
}

/// Last value of each vital inside `[window_end - window_hours, window_end]`
/// (both ends inclusive), plus derived features. Vitals without an event in
/// the window are missing.
pub fn extract_snapshot(
    encounter: &Encounter,
    window_end: Timestamp,
    window_hours: f64,
) -> Result<Snapshot> {
    let start = window_end.offset_hours(-window_hours);
    let mut vitals = [None; 6];
    for event in encounter.events() {
        if event.time > window_end {
            break;
        }
        if event.time >= start {
            vitals[event.vital.index()] = Some(event.value);
        }
    }
    Ok(Snapshot {
        features: FeatureVector::derive(vitals, encounter.age)?,
        label: if encounter.transferred() { Label::Transfer } else { Label::NoTransfer },
        encounter_id: encounter.encounter_id.clone(),
        patient_id: encounter.patient_id.clone(),
    })
}

/// Window end for a transfer encounter: two hours before the transfer.
pub fn transfer_window_end(transfer_time: Timestamp) -> Timestamp {
    transfer_time.offset_hours(-LEAD_HOURS)
}

/// A random window end whose six-hour window starts uniformly within
/// `[first event, last event - 6h]`. Stays shorter than the window use the
/// whole stay.
pub fn random_window_end<R: Rng + ?Sized>(encounter: &Encounter, rng: &mut R) -> Timestamp {
    let (Some(first), Some(last)) = (encounter.first_event_time(), encounter.last_event_time())
    else {
        return Timestamp::default();
    };
    let window = libm::round(WINDOW_HOURS * SECONDS_PER_HOUR as f64) as i64;
    if last.0 - first.0 <= window {
        return last;
    }
    let start = rng.random_range(first.0..=last.0 - window);
    Timestamp(start + window)
}

/// Balanced snapshot cohort with uniformly sampled negatives.
pub fn build_cohort(encounters: &[Encounter], seed: u64) -> Result<Vec<Snapshot>> {
    build_cohort_with(encounters, seed, MatchPolicy::Uniform)
}

/// One snapshot per transfer encounter from its `[T-8h, T-2h]` window, and
/// the same number of snapshots from distinct non-transfer encounters,
/// each from a random six-hour window. Positives come first, in input order.
pub fn build_cohort_with(
    encounters: &[Encounter],
    seed: u64,
    policy: MatchPolicy,
) -> Result<Vec<Snapshot>> {
    let (positives, negatives): (Vec<&Encounter>, Vec<&Encounter>) =
        encounters.iter().partition(|e| e.transferred());
    if positives.is_empty() {
        return Err(err!(Data, "no transferred encounters"));
    }
    if negatives.len() < positives.len() {
        return Err(err!(
            Data,
            "{} non-transfer encounters cannot match {} transfers",
            negatives.len(),
            positives.len()
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&Encounter> = match policy {
        MatchPolicy::Uniform => index::sample(&mut rng, negatives.len(), positives.len())
            .into_iter()
            .map(|i| negatives[i])
            .collect(),
        MatchPolicy::AgeMatched => age_matched(&positives, &negatives, &mut rng)?,
    };

    let mut cohort = Vec::with_capacity(2 * positives.len());
    for enc in &positives {
        let t = enc.transfer_time.expect("partitioned on transfer");
        cohort.push(extract_snapshot(enc, transfer_window_end(t), WINDOW_HOURS)?);
    }
    for enc in chosen {
        let end = random_window_end(enc, &mut rng);
        cohort.push(extract_snapshot(enc, end, WINDOW_HOURS)?);
    }
    Ok(cohort)
}

fn age_matched<'a>(
    positives: &[&Encounter],
    negatives: &[&'a Encounter],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a Encounter>> {
    let bins = AgeBins::default();
    let neg_bins = negatives.iter().map(|e| bins.bin(e.age)).collect::<Result<Vec<_>>>()?;
    let mut used = alloc::vec![false; negatives.len()];
    let mut chosen = Vec::with_capacity(positives.len());
    for pos in positives {
        let bin = bins.bin(pos.age)?;
        let same: Vec<usize> = (0..negatives.len())
            .filter(|&i| !used[i] && neg_bins[i] == bin)
            .collect();
        let pick = if same.is_empty() {
            (0..negatives.len())
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let da = (negatives[a].age - pos.age).abs();
                    let db = (negatives[b].age - pos.age).abs();
                    da.total_cmp(&db)
                })
                .expect("enough negatives checked by caller")
        } else {
            same[rng.random_range(0..same.len())]
        };
        used[pick] = true;
        chosen.push(negatives[pick]);
    }
    Ok(chosen)
}
