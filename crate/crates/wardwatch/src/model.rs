//! Versioned JSON documents for trained models.
//!
//! Every document is an object with `version` and `model` keys next to the
//! model's own fields. An ensemble embeds complete ada and gbt documents.
//! Floats are written with the shortest representation that parses back to
//! the same bits.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use wardwatch_core::ada::AdaModel;
use wardwatch_core::ensemble::EnsembleModel;
use wardwatch_core::gbt::GbtModel;
use wardwatch_core::pews::{PewsBaseline, PewsTable};
use wardwatch_core::{FeatureVector, Scorer};

use crate::error::{Error, Result};
use crate::formats::{read_text, write_text};

pub const FORMAT_VERSION: u32 = 1;

/// Default modified Bedside PEWS sub-score table.
pub const DEFAULT_PEWS_TABLE: &str = include_str!("../config/pews_bedside.json");

pub fn default_pews_table() -> PewsTable {
    serde_json::from_str(DEFAULT_PEWS_TABLE).expect("bundled PEWS table is valid")
}

pub fn load_pews_table(path: &Path) -> Result<PewsTable> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Ada,
    Gbt,
    Ensemble,
    Pews,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ada => "ada",
            ModelKind::Gbt => "gbt",
            ModelKind::Ensemble => "ensemble",
            ModelKind::Pews => "pews",
        }
    }
}

/// Record of a hyperparameter search stored alongside a gbt model.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SearchRecord {
    pub trials: usize,
    pub folds: usize,
    pub best_mean_auroc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ada(AdaModel),
    Gbt { model: GbtModel, search: Option<SearchRecord> },
    Ensemble(EnsembleModel),
    Pews(PewsBaseline),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Ada(_) => ModelKind::Ada,
            Model::Gbt { .. } => ModelKind::Gbt,
            Model::Ensemble(_) => ModelKind::Ensemble,
            Model::Pews(_) => ModelKind::Pews,
        }
    }

    /// Probability of transfer, or the raw integer score for PEWS.
    pub fn score(&self, x: &FeatureVector) -> f64 {
        match self {
            Model::Ada(m) => m.score(x),
            Model::Gbt { model, .. } => model.score(x),
            Model::Ensemble(m) => m.score(x),
            Model::Pews(m) => Scorer::score(m, x),
        }
    }

    /// Score at or above which a snapshot is classified as a transfer.
    pub fn threshold(&self) -> f64 {
        match self {
            Model::Ensemble(m) => m.threshold,
            Model::Pews(m) => f64::from(m.cutoff),
            Model::Ada(_) | Model::Gbt { .. } => wardwatch_core::ensemble::DEFAULT_THRESHOLD,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Model::Ada(m) => document("ada", m),
            Model::Gbt { model, search } => {
                let mut doc = document("gbt", model);
                if let (Some(s), Value::Object(map)) = (search, &mut doc) {
                    map.insert("search".into(), to_value(s));
                }
                doc
            }
            Model::Ensemble(m) => {
                let mut map = header("ensemble");
                map.insert("threshold".into(), to_value(&m.threshold));
                map.insert("ada".into(), document("ada", &m.ada));
                map.insert("gbt".into(), document("gbt", &m.gbt));
                Value::Object(map)
            }
            Model::Pews(m) => document("pews", m),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("models serialize");
        s.push('\n');
        s
    }

    pub fn from_value(value: Value) -> std::result::Result<Model, String> {
        let (kind, body) = open(value)?;
        let model = match kind.as_str() {
            "ada" => Model::Ada(parse::<AdaModel>(body)?),
            "gbt" => {
                let mut body = body;
                let search = match body.remove("search") {
                    Some(v) => Some(serde_json::from_value(v).map_err(|e| format!("search: {e}"))?),
                    None => None,
                };
                Model::Gbt { model: parse::<GbtModel>(body)?, search }
            }
            "ensemble" => {
                let mut body = body;
                let mut sub = |key: &str, want: &str| -> std::result::Result<Map<String, Value>, String> {
                    let v = body.remove(key).ok_or_else(|| format!("missing `{key}` document"))?;
                    let (k, b) = open(v).map_err(|e| format!("{key}: {e}"))?;
                    if k != want {
                        return Err(format!("{key}: expected a {want} document, found {k}"));
                    }
                    Ok(b)
                };
                let ada = parse::<AdaModel>(sub("ada", "ada")?)?;
                let gbt = parse::<GbtModel>(sub("gbt", "gbt")?)?;
                let threshold = body
                    .remove("threshold")
                    .and_then(|v| v.as_f64())
                    .ok_or("missing numeric `threshold`")?;
                Model::Ensemble(EnsembleModel { threshold, ada, gbt })
            }
            "pews" => Model::Pews(parse::<PewsBaseline>(body)?),
            other => return Err(format!("unknown model kind `{other}`")),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn from_json(text: &str) -> std::result::Result<Model, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Model::from_value(value)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let r = match self {
            Model::Ada(m) => m.validate(),
            Model::Gbt { model, .. } => model.validate(),
            Model::Ensemble(m) => m.validate(),
            Model::Pews(_) => Ok(()),
        };
        r.map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_json(&read_text(path)?)
            .map_err(|message| Error::Json { path: path.to_path_buf(), message })
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("models serialize")
}

fn header(kind: &str) -> Map<String, Value> {
    let mut map = Map::new();
    map.insert("version".into(), Value::from(FORMAT_VERSION));
    map.insert("model".into(), Value::from(kind));
    map
}

fn document<T: Serialize>(kind: &str, body: &T) -> Value {
    let mut map = header(kind);
    if let Value::Object(fields) = to_value(body) {
        map.extend(fields);
    }
    Value::Object(map)
}

/// Checks the version and splits off the model kind.
fn open(value: Value) -> std::result::Result<(String, Map<String, Value>), String> {
    let Value::Object(mut map) = value else {
        return Err("model document must be a JSON object".into());
    };
    match map.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(format!("unsupported model version {v} (expected {FORMAT_VERSION})")),
        None => return Err("missing numeric `version`".into()),
    }
    let kind = match map.remove("model") {
        Some(Value::String(s)) => s,
        _ => return Err("missing `model` kind".into()),
    };
    Ok((kind, map))
}

fn parse<T: DeserializeOwned>(body: Map<String, Value>) -> std::result::Result<T, String> {
    serde_json::from_value(Value::Object(body)).map_err(|e| e.to_string())
}
