//! Probability averaging of the two boosting models.

use serde::{Deserialize, Serialize};

use crate::ada::AdaModel;
use crate::dataset::{FeatureVector, Label};
use crate::error::err;
use crate::gbt::GbtModel;
use crate::{Result, Scorer};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub threshold: f64,
    pub ada: AdaModel,
    pub gbt: GbtModel,
}

impl EnsembleModel {
    pub fn new(ada: AdaModel, gbt: GbtModel, threshold: f64) -> Result<EnsembleModel> {
        let model = EnsembleModel { threshold, ada, gbt };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(err!(Config, "decision threshold {} outside (0, 1)", self.threshold));
        }
        self.ada.validate()?;
        self.gbt.validate()
    }

    /// Mean of the two sub-model probabilities.
    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        average(self.ada.predict_proba(x), self.gbt.predict_proba(x))
    }

    /// Transfer iff the averaged probability reaches the threshold.
    pub fn classify(&self, x: &FeatureVector) -> Label {
        classify_at(self.predict_proba(x), self.threshold)
    }
}

impl Scorer for EnsembleModel {
    fn score(&self, x: &FeatureVector) -> f64 {
        self.predict_proba(x)
    }
}

pub fn average(p_ada: f64, p_gbt: f64) -> f64 {
    (p_ada + p_gbt) / 2.0
}

/// `p >= threshold` is a transfer.
pub fn classify_at(p: f64, threshold: f64) -> Label {
    if p >= threshold {
        Label::Transfer
    } else {
        Label::NoTransfer
    }
}
