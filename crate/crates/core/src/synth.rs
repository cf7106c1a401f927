//! Seeded synthetic ward encounters.
//!
//! Each encounter gets an age, a stay length and a baseline offset per vital.
//! Measurements arrive in rounds from a Poisson process; in each round every
//! vital is recorded unless it is independently dropped. Encounters that end
//! in a transfer drift away from their age norms over the final hours and
//! may be measured more often.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Encounter, Timestamp, Vital, VitalEvent, MAX_AGE_YEARS, MIN_AGE_YEARS};
use crate::error::err;
use crate::math::{derive_seed, sqrt};
use crate::Result;

/// 2021-01-01T00:00:00Z; encounters start within the following year.
const EPOCH: i64 = 1_609_459_200;
const START_SPREAD_SECONDS: i64 = 365 * 24 * 3600;

/// Mean and standard deviation of one vital.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub mean: f64,
    pub sd: f64,
}

const fn norm(mean: f64, sd: f64) -> Norm {
    Norm { mean, sd }
}

/// Vital-sign norms for ages below `upper_years` (and at or above the
/// previous band's bound). Arrays follow [`Vital::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeNorms {
    pub upper_years: f64,
    pub vitals: [Norm; 6],
}

/// Signal strength of deterioration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    /// Shift reached at transfer, in standard deviations, per vital.
    pub drift_sd: [f64; 6],
    /// The drift ramps linearly from zero over this many hours before
    /// transfer.
    pub onset_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_encounters: usize,
    pub transfer_prevalence: f64,
    pub age_norms: Vec<AgeNorms>,
    pub effects: Effects,
    /// Measurement rounds per hour for stays without a transfer.
    pub base_rate: f64,
    /// Measurement rounds per hour for stays ending in a transfer.
    pub deteriorating_rate: f64,
    /// Probability that a vital is skipped in a round.
    pub missingness: [f64; 6],
    /// Share of each vital's variance that is a per-encounter offset.
    pub between_encounter_share: f64,
    pub stay_hours: (f64, f64),
    /// Probability that an encounter belongs to an earlier patient.
    pub patient_reuse: f64,
    /// Hard clipping bounds per vital.
    pub bounds: [(f64, f64); 6],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        // HR, O2, RR, Temp, dBP, sBP
        let band = |upper_years, hr, rr, dbp, sbp| AgeNorms {
            upper_years,
            vitals: [hr, norm(98.0, 1.5), rr, norm(37.0, 0.4), dbp, sbp],
        };
        SynthConfig {
            n_encounters: 1000,
            transfer_prevalence: 0.026,
            age_norms: alloc::vec![
                band(0.25, norm(140.0, 15.0), norm(45.0, 8.0), norm(45.0, 6.0), norm(72.0, 8.0)),
                band(1.0, norm(128.0, 14.0), norm(38.0, 7.0), norm(52.0, 6.0), norm(88.0, 8.0)),
                band(4.0, norm(110.0, 13.0), norm(28.0, 5.0), norm(58.0, 6.0), norm(98.0, 8.0)),
                band(12.0, norm(90.0, 12.0), norm(22.0, 4.0), norm(64.0, 7.0), norm(105.0, 9.0)),
                band(20.0, norm(78.0, 11.0), norm(16.0, 3.0), norm(70.0, 8.0), norm(115.0, 10.0)),
            ],
            effects: Effects {
                drift_sd: [1.8, -1.5, 1.8, 1.2, -1.0, -1.2],
                onset_hours: 12.0,
            },
            base_rate: 0.5,
            deteriorating_rate: 0.8,
            missingness: [0.05, 0.1, 0.1, 0.3, 0.35, 0.35],
            between_encounter_share: 0.36,
            stay_hours: (12.0, 72.0),
            patient_reuse: 0.15,
            bounds: [
                (30.0, 250.0),
                (50.0, 100.0),
                (4.0, 100.0),
                (34.0, 42.0),
                (15.0, 140.0),
                (35.0, 220.0),
            ],
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The same configuration with every deterioration effect removed:
    /// no drift and identical measurement rates for both outcomes.
    pub fn null_signal(mut self) -> SynthConfig {
        self.effects.drift_sd = [0.0; 6];
        self.deteriorating_rate = self.base_rate;
        self
    }

    /// Number of encounters that end in a transfer.
    pub fn n_transfers(&self) -> usize {
        libm::round(self.n_encounters as f64 * self.transfer_prevalence) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_encounters == 0 {
            return Err(err!(Config, "n_encounters must be positive"));
        }
        let p = self.transfer_prevalence;
        if !(p > 0.0 && p < 1.0) {
            return Err(err!(Config, "transfer_prevalence {p} outside (0, 1)"));
        }
        for (name, rate) in [("base_rate", self.base_rate), ("deteriorating_rate", self.deteriorating_rate)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(err!(Config, "{name} {rate} must be positive"));
            }
        }
        for (v, &m) in Vital::ALL.iter().zip(&self.missingness) {
            if !(0.0..=1.0).contains(&m) {
                return Err(err!(Config, "missingness for {v} is {m}, outside [0, 1]"));
            }
        }
        for (name, q) in [
            ("patient_reuse", self.patient_reuse),
            ("between_encounter_share", self.between_encounter_share),
        ] {
            if !(0.0..=1.0).contains(&q) {
                return Err(err!(Config, "{name} {q} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.stay_hours;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(err!(Config, "stay_hours ({lo}, {hi}) must satisfy 0 < min <= max"));
        }
        if !(self.effects.onset_hours > 0.0 && self.effects.onset_hours.is_finite()) {
            return Err(err!(Config, "effects.onset_hours must be positive"));
        }
        if self.effects.drift_sd.iter().any(|d| !d.is_finite()) {
            return Err(err!(Config, "effects.drift_sd must be finite"));
        }
        for (v, &(lo, hi)) in Vital::ALL.iter().zip(&self.bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(err!(Config, "bounds for {v} ({lo}, {hi}) must satisfy min < max"));
            }
            if *v == Vital::OxygenSaturation && (lo < 0.0 || hi > 100.0) {
                return Err(err!(Config, "bounds for O2 must lie within [0, 100]"));
            }
        }
        if self.age_norms.is_empty() {
            return Err(err!(Config, "age_norms is empty"));
        }
        let mut prev = 0.0;
        for band in &self.age_norms {
            if !(band.upper_years > prev) {
                return Err(err!(Config, "age_norms bounds must increase"));
            }
            prev = band.upper_years;
            for (v, n) in Vital::ALL.iter().zip(&band.vitals) {
                if !(n.mean.is_finite() && n.sd > 0.0 && n.sd.is_finite()) {
                    return Err(err!(Config, "norm for {v} below {} years needs a positive sd", band.upper_years));
                }
            }
        }
        if prev < MAX_AGE_YEARS {
            return Err(err!(Config, "age_norms must reach {MAX_AGE_YEARS} years"));
        }
        Ok(())
    }

    fn norms_for(&self, age: f64) -> &AgeNorms {
        let i = self
            .age_norms
            .partition_point(|b| b.upper_years <= age)
            .min(self.age_norms.len() - 1);
        &self.age_norms[i]
    }
}

/// Encounter plan decided before any vitals are drawn.
struct Plan {
    patient: usize,
    age: f64,
    transfer: bool,
}

fn plan(config: &SynthConfig) -> Vec<Plan> {
    let n = config.n_encounters;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut transfer = alloc::vec![false; n];
    for i in index::sample(&mut rng, n, config.n_transfers().min(n)) {
        transfer[i] = true;
    }
    let mut plans: Vec<Plan> = Vec::with_capacity(n);
    let mut patients = 0;
    for (i, &transfer) in transfer.iter().enumerate() {
        if i > 0 && rng.random_bool(config.patient_reuse) {
            let earlier = &plans[rng.random_range(0..i)];
            let age = (earlier.age + rng.random_range(0.0..0.5)).min(MAX_AGE_YEARS - 1e-6);
            plans.push(Plan { patient: earlier.patient, age, transfer });
        } else {
            let age = rng.random_range(MIN_AGE_YEARS..MAX_AGE_YEARS);
            plans.push(Plan { patient: patients, age, transfer });
            patients += 1;
        }
    }
    plans
}

fn round_value(vital: Vital, value: f64) -> f64 {
    match vital {
        Vital::Temperature => libm::round(value * 10.0) / 10.0,
        _ => libm::round(value),
    }
}

fn encounter(config: &SynthConfig, index: usize, plan: &Plan) -> Result<Encounter> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index as u64));
    let norms = config.norms_for(plan.age);
    let (stay_lo, stay_hi) = config.stay_hours;
    let stay = if stay_lo < stay_hi { rng.random_range(stay_lo..stay_hi) } else { stay_lo };
    let start = Timestamp(EPOCH + rng.random_range(0..START_SPREAD_SECONDS));
    let end = start.offset_hours(stay);

    let share = config.between_encounter_share;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let offsets: [f64; 6] = core::array::from_fn(|_| sqrt(share) * unit.sample(&mut rng));
    let noise = sqrt(1.0 - share);

    let rate = if plan.transfer { config.deteriorating_rate } else { config.base_rate };
    let gap = Exp::new(rate).map_err(|_| err!(Config, "measurement rate {rate} must be positive"))?;
    let onset = config.effects.onset_hours;

    let mut events = Vec::new();
    let mut hours = gap.sample(&mut rng);
    while hours < stay {
        let time = start.offset_hours(hours);
        let ramp = if plan.transfer {
            ((hours - (stay - onset)) / onset).clamp(0.0, 1.0)
        } else {
            0.0
        };
        for (k, &vital) in Vital::ALL.iter().enumerate() {
            let z = offsets[k] + noise * unit.sample(&mut rng);
            if rng.random_bool(config.missingness[k]) {
                continue;
            }
            let n = norms.vitals[k];
            let (lo, hi) = config.bounds[k];
            let raw = n.mean + n.sd * (z + ramp * config.effects.drift_sd[k]);
            let value = round_value(vital, raw.clamp(lo, hi)).clamp(lo, hi);
            events.push(VitalEvent { time, vital, value });
        }
        hours += gap.sample(&mut rng);
    }

    Encounter::new(
        format!("E{index:06}"),
        format!("P{:06}", plan.patient),
        plan.age,
        plan.transfer.then_some(end),
        events,
    )
}

/// Generates `config.n_encounters` encounters, exactly
/// `round(n * prevalence)` of which end in a transfer at the close of the
/// stay. Output is a pure function of the configuration.
pub fn generate(config: &SynthConfig) -> Result<Vec<Encounter>> {
    config.validate()?;
    plan(config)
        .iter()
        .enumerate()
        .map(|(i, p)| encounter(config, i, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_cohort;
    use alloc::collections::BTreeSet;

    fn config(n: usize, prevalence: f64, seed: u64) -> SynthConfig {
        SynthConfig { n_encounters: n, transfer_prevalence: prevalence, seed, ..SynthConfig::default() }
    }

    #[test]
    fn transfer_count_is_rounded_prevalence() {
        let encs = generate(&config(1000, 0.026, 7)).unwrap();
        assert_eq!(encs.len(), 1000);
        assert_eq!(encs.iter().filter(|e| e.transferred()).count(), 26);
        let encs = generate(&config(30, 0.05, 1)).unwrap();
        // 1.5 rounds away from zero.
        assert_eq!(encs.iter().filter(|e| e.transferred()).count(), 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&config(200, 0.1, 3)).unwrap();
        let b = generate(&config(200, 0.1, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&config(200, 0.1, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SynthConfig { transfer_prevalence: 1.5, ..SynthConfig::default() },
            SynthConfig { transfer_prevalence: 0.0, ..SynthConfig::default() },
            SynthConfig { base_rate: 0.0, ..SynthConfig::default() },
            SynthConfig { missingness: [0.1, 0.1, 1.2, 0.1, 0.1, 0.1], ..SynthConfig::default() },
            SynthConfig { n_encounters: 0, ..SynthConfig::default() },
            SynthConfig { stay_hours: (10.0, 5.0), ..SynthConfig::default() },
        ];
        for cfg in &bad {
            assert!(matches!(generate(cfg), Err(crate::Error::Config(_))), "{cfg:?}");
        }
        let msg = format!("{}", generate(&bad[0]).unwrap_err());
        assert!(msg.contains("transfer_prevalence"));
    }

    #[test]
    fn values_respect_bounds_and_ages() {
        let mut cfg = config(400, 0.2, 9);
        // Large drift pushes values into the clipping bounds.
        cfg.effects.drift_sd = [8.0, -20.0, 8.0, 8.0, -8.0, -8.0];
        for e in generate(&cfg).unwrap() {
            assert!((MIN_AGE_YEARS..MAX_AGE_YEARS).contains(&e.age));
            for ev in e.events() {
                let (lo, hi) = cfg.bounds[ev.vital.index()];
                assert!(ev.value >= lo && ev.value <= hi, "{ev:?}");
            }
        }
    }

    #[test]
    fn transfers_end_at_transfer_time_with_events_before() {
        for e in generate(&config(300, 0.2, 11)).unwrap() {
            let last = e.last_event_time().unwrap();
            if let Some(t) = e.transfer_time {
                assert!(last <= t);
                assert!(e.first_event_time().unwrap() < t);
            }
        }
    }

    #[test]
    fn marginal_missingness_matches_config() {
        let cfg = config(600, 0.026, 5);
        let encs = generate(&cfg).unwrap();
        let mut rounds = 0usize;
        let mut seen = [0usize; 6];
        for e in &encs {
            let times: BTreeSet<i64> = e.events().iter().map(|ev| ev.time.0).collect();
            rounds += times.len();
            for ev in e.events() {
                seen[ev.vital.index()] += 1;
            }
        }
        assert!(rounds > 5000);
        for (k, &count) in seen.iter().enumerate() {
            let missing = 1.0 - count as f64 / rounds as f64;
            assert!((missing - cfg.missingness[k]).abs() < 0.02, "vital {k}: {missing}");
        }
    }

    fn events_per_hour(encs: &[Encounter], transferred: bool) -> f64 {
        let (mut events, mut hours) = (0usize, 0.0);
        for e in encs.iter().filter(|e| e.transferred() == transferred && e.events().len() > 1) {
            let times: BTreeSet<i64> = e.events().iter().map(|ev| ev.time.0).collect();
            events += times.len();
            hours += e.last_event_time().unwrap().hours_since(e.first_event_time().unwrap());
        }
        events as f64 / hours
    }

    #[test]
    fn deteriorating_patients_are_measured_more_often() {
        let encs = generate(&config(1000, 0.5, 2)).unwrap();
        assert!(events_per_hour(&encs, true) > events_per_hour(&encs, false) * 1.2);
        let encs = generate(&config(1000, 0.5, 2).null_signal()).unwrap();
        let ratio = events_per_hour(&encs, true) / events_per_hour(&encs, false);
        assert!((ratio - 1.0).abs() < 0.08, "{ratio}");
    }

    #[test]
    fn transfer_snapshots_drift_in_the_configured_direction() {
        let encs = generate(&config(2000, 0.5, 8)).unwrap();
        let cohort = build_cohort(&encs, 1).unwrap();
        let mean = |positive: bool, vital: Vital| {
            let vals: Vec<f64> = cohort
                .iter()
                .filter(|s| s.label.is_positive() == positive)
                .filter_map(|s| {
                    let n = cfg_norm(s.features.age(), vital);
                    s.features.vital(vital).map(|v| (v - n.mean) / n.sd)
                })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean(true, Vital::HeartRate) > mean(false, Vital::HeartRate) + 0.5);
        assert!(mean(true, Vital::RespiratoryRate) > mean(false, Vital::RespiratoryRate) + 0.5);
        assert!(mean(true, Vital::SystolicBp) < mean(false, Vital::SystolicBp) - 0.3);
        assert!(mean(true, Vital::OxygenSaturation) < mean(false, Vital::OxygenSaturation) - 0.3);
    }

    fn cfg_norm(age: f64, vital: Vital) -> Norm {
        SynthConfig::default().norms_for(age).vitals[vital.index()]
    }

    #[test]
    fn patients_are_reused() {
        let encs = generate(&config(1000, 0.1, 6)).unwrap();
        let distinct: BTreeSet<&str> = encs.iter().map(|e| e.patient_id.as_str()).collect();
        assert!(distinct.len() < 950 && distinct.len() > 750, "{}", distinct.len());
    }
}
