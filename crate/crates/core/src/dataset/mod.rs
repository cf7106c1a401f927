//! Snapshot construction, cohort balancing and patient-disjoint splitting.

mod age;
mod cohort;
mod split;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::err;
use crate::Result;

pub use age::{age_bin, AgeBins};
pub use cohort::{
    build_cohort, build_cohort_with, extract_snapshot, random_window_end, transfer_window_end,
    MatchPolicy, LEAD_HOURS, WINDOW_HOURS,
};
pub use split::{kfold, split_train_test, Fold};

/// Youngest admissible age in years (one month).
pub const MIN_AGE_YEARS: f64 = 1.0 / 12.0;
/// Ages must be strictly below this.
pub const MAX_AGE_YEARS: f64 = 20.0;

pub const SECONDS_PER_HOUR: i64 = 3600;

/// Seconds since the Unix epoch, UTC.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn offset_hours(self, hours: f64) -> Timestamp {
        Timestamp(self.0 + libm::round(hours * SECONDS_PER_HOUR as f64) as i64)
    }

    pub fn hours_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / SECONDS_PER_HOUR as f64
    }
}

/// Directly measured vital signs, in the column order of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vital {
    #[serde(rename = "HR")]
    HeartRate,
    #[serde(rename = "O2")]
    OxygenSaturation,
    #[serde(rename = "RR")]
    RespiratoryRate,
    #[serde(rename = "Temp")]
    Temperature,
    #[serde(rename = "dBP")]
    DiastolicBp,
    #[serde(rename = "sBP")]
    SystolicBp,
}

impl Vital {
    pub const ALL: [Vital; 6] = [
        Vital::HeartRate,
        Vital::OxygenSaturation,
        Vital::RespiratoryRate,
        Vital::Temperature,
        Vital::DiastolicBp,
        Vital::SystolicBp,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Vital::HeartRate => "HR",
            Vital::OxygenSaturation => "O2",
            Vital::RespiratoryRate => "RR",
            Vital::Temperature => "Temp",
            Vital::DiastolicBp => "dBP",
            Vital::SystolicBp => "sBP",
        }
    }

    pub fn from_code(code: &str) -> Option<Vital> {
        Vital::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn feature(self) -> Feature {
        Feature::ALL[self.index()]
    }
}

impl fmt::Display for Vital {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// The ten model inputs, in their fixed column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    HeartRate,
    OxygenSaturation,
    RespiratoryRate,
    Temperature,
    DiastolicBp,
    SystolicBp,
    Age,
    PulsePressure,
    MeanArterialPressure,
    ShockIndex,
}

pub const NUM_FEATURES: usize = 10;

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::HeartRate,
        Feature::OxygenSaturation,
        Feature::RespiratoryRate,
        Feature::Temperature,
        Feature::DiastolicBp,
        Feature::SystolicBp,
        Feature::Age,
        Feature::PulsePressure,
        Feature::MeanArterialPressure,
        Feature::ShockIndex,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Feature> {
        Feature::ALL.get(index).copied()
    }

    /// Column name used in snapshot files.
    pub fn column(self) -> &'static str {
        match self {
            Feature::HeartRate => "hr",
            Feature::OxygenSaturation => "o2",
            Feature::RespiratoryRate => "rr",
            Feature::Temperature => "temp",
            Feature::DiastolicBp => "dbp",
            Feature::SystolicBp => "sbp",
            Feature::Age => "age",
            Feature::PulsePressure => "pp",
            Feature::MeanArterialPressure => "map",
            Feature::ShockIndex => "si",
        }
    }
}

/// Outcome class of a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Transferred to intensive care.
    Transfer,
    NoTransfer,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Transfer => 1.0,
            Label::NoTransfer => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Option<Label> {
        match sign {
            1 => Some(Label::Transfer),
            -1 => Some(Label::NoTransfer),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Transfer
    }

    /// 1 for transfer, 0 otherwise.
    pub fn as_binary(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Ten optional feature values; age is always present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    values: [Option<f64>; NUM_FEATURES],
}

impl FeatureVector {
    /// Builds a vector from raw vitals and age, computing pulse pressure,
    /// approximate mean arterial pressure and shock index.
    ///
    /// Each derived value is missing whenever one of its inputs is; the shock
    /// index is also missing when systolic pressure is zero.
    pub fn derive(vitals: [Option<f64>; 6], age: f64) -> Result<FeatureVector> {
        for (vital, value) in Vital::ALL.iter().zip(vitals.iter()) {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(err!(Input, "{vital} value {v} is not finite"));
                }
            }
        }
        check_age(age)?;

        let [hr, o2, rr, temp, dbp, sbp] = vitals;
        let pulse_pressure = match (sbp, dbp) {
            (Some(s), Some(d)) => Some(s - d),
            _ => None,
        };
        let mean_arterial = match (sbp, dbp) {
            (Some(s), Some(d)) => Some(2.0 / 3.0 * d + 1.0 / 3.0 * s),
            _ => None,
        };
        let shock_index = match (hr, sbp) {
            (Some(h), Some(s)) if s != 0.0 => Some(h / s),
            _ => None,
        };
        Ok(FeatureVector {
            values: [
                hr,
                o2,
                rr,
                temp,
                dbp,
                sbp,
                Some(age),
                pulse_pressure,
                mean_arterial,
                shock_index,
            ],
        })
    }

    /// Only age present.
    pub fn age_only(age: f64) -> Result<FeatureVector> {
        FeatureVector::derive([None; 6], age)
    }

    /// Wraps already-computed values, e.g. read back from a snapshot file.
    /// Age must be present and in range; present values must be finite.
    pub fn from_values(values: [Option<f64>; NUM_FEATURES]) -> Result<FeatureVector> {
        for (feature, value) in Feature::ALL.iter().zip(values.iter()) {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(err!(Input, "{} value {v} is not finite", feature.column()));
                }
            }
        }
        match values[Feature::Age.index()] {
            Some(age) => check_age(age)?,
            None => return Err(err!(Input, "age is required")),
        }
        Ok(FeatureVector { values })
    }

    #[inline]
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature.index()]
    }

    #[inline]
    pub fn value(&self, index: usize) -> Option<f64> {
        self.values[index]
    }

    pub fn values(&self) -> &[Option<f64>; NUM_FEATURES] {
        &self.values
    }

    pub fn age(&self) -> f64 {
        // Present by construction.
        self.values[Feature::Age.index()].unwrap_or(f64::NAN)
    }

    pub fn vital(&self, vital: Vital) -> Option<f64> {
        self.values[vital.index()]
    }

    /// Replaces one value without re-deriving the others.
    pub fn with_value(mut self, feature: Feature, value: Option<f64>) -> Result<FeatureVector> {
        self.values[feature.index()] = value;
        FeatureVector::from_values(self.values)
    }
}

fn check_age(age: f64) -> Result<()> {
    if !age.is_finite() {
        return Err(err!(Input, "age {age} is not finite"));
    }
    if !(MIN_AGE_YEARS..MAX_AGE_YEARS).contains(&age) {
        return Err(err!(Range, "age {age} outside [1/12, 20) years"));
    }
    Ok(())
}

/// A labelled training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub features: FeatureVector,
    pub label: Label,
    pub encounter_id: String,
    pub patient_id: String,
}

/// One timestamped vital-sign measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VitalEvent {
    pub time: Timestamp,
    pub vital: Vital,
    pub value: f64,
}

impl VitalEvent {
    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(err!(Input, "{} value {} is not finite", self.vital, self.value));
        }
        if self.vital == Vital::OxygenSaturation && !(0.0..=100.0).contains(&self.value) {
            return Err(err!(Range, "O2 saturation {} outside [0, 100]", self.value));
        }
        Ok(())
    }
}

/// A ward stay with its measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Encounter {
    pub encounter_id: String,
    pub patient_id: String,
    pub age: f64,
    /// Present iff the encounter ended in a transfer.
    pub transfer_time: Option<Timestamp>,
    events: Vec<VitalEvent>,
}

impl Encounter {
    /// Validates the age and every event, then orders events by time
    /// (stable, so same-instant events keep their input order).
    pub fn new(
        encounter_id: impl Into<String>,
        patient_id: impl Into<String>,
        age: f64,
        transfer_time: Option<Timestamp>,
        mut events: Vec<VitalEvent>,
    ) -> Result<Encounter> {
        check_age(age)?;
        for event in &events {
            event.validate()?;
        }
        events.sort_by_key(|e| e.time);
        Ok(Encounter {
            encounter_id: encounter_id.into(),
            patient_id: patient_id.into(),
            age,
            transfer_time,
            events,
        })
    }

    pub fn transferred(&self) -> bool {
        self.transfer_time.is_some()
    }

    pub fn events(&self) -> &[VitalEvent] {
        &self.events
    }

    pub fn first_event_time(&self) -> Option<Timestamp> {
        self.events.first().map(|e| e.time)
    }

    pub fn last_event_time(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.time)
    }
}
