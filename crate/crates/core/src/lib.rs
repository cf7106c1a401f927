//! Early-deterioration prediction for pediatric ward patients.
//!
//! The crate covers the whole modelling path from timestamped vital signs to
//! an evaluated classifier:
//!
//! - [`dataset`]: windowed last-value snapshots, derived features, cohort
//!   balancing and patient-disjoint splits.
//! - [`ada`]: AdaBoost with abstaining, age-scoped decision stumps.
//! - [`gbt`]: second-order regularized gradient tree boosting with learned
//!   default directions for missing values.
//! - [`ensemble`]: probability averaging of the two boosting models.
//! - [`pews`]: a modified Bedside PEWS baseline with cutoff selection.
//! - [`metrics`]: confusion counts, ROC/AUROC and cross-validation.
//! - [`synth`]: a seeded synthetic cohort generator.
//!
//! Everything here is `no_std` + `alloc`; file formats and the command line
//! live in the `wardwatch` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ada;
pub mod dataset;
pub mod ensemble;
mod error;
pub mod gbt;
pub(crate) mod math;
pub mod metrics;
pub mod pews;
pub mod synth;

pub use error::{Error, Result};

pub use dataset::{
    AgeBins, Encounter, Feature, FeatureVector, Label, Snapshot, Timestamp, Vital, VitalEvent,
};

/// Anything that maps a feature vector to a real-valued risk score, higher
/// meaning more likely to transfer.
pub trait Scorer {
    fn score(&self, x: &FeatureVector) -> f64;
}

impl<F> Scorer for F
where
    F: Fn(&FeatureVector) -> f64,
{
    fn score(&self, x: &FeatureVector) -> f64 {
        self(x)
    }
}
