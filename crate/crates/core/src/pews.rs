//! Modified Bedside PEWS baseline.
//!
//! Only heart rate, systolic pressure, respiratory rate and oxygen
//! saturation are scored; capillary refill, respiratory effort and oxygen
//! therapy are not part of the input. Sub-score tables are configuration.
//! A missing item scores 0.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureVector, Label, Snapshot, Vital, MAX_AGE_YEARS};
use crate::error::err;
use crate::{Result, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PewsItem {
    #[serde(rename = "HR")]
    HeartRate,
    #[serde(rename = "sBP")]
    SystolicBp,
    #[serde(rename = "RR")]
    RespiratoryRate,
    #[serde(rename = "O2")]
    OxygenSaturation,
}

impl PewsItem {
    pub const ALL: [PewsItem; 4] = [
        PewsItem::HeartRate,
        PewsItem::SystolicBp,
        PewsItem::RespiratoryRate,
        PewsItem::OxygenSaturation,
    ];

    pub fn vital(self) -> Vital {
        match self {
            PewsItem::HeartRate => Vital::HeartRate,
            PewsItem::SystolicBp => Vital::SystolicBp,
            PewsItem::RespiratoryRate => Vital::RespiratoryRate,
            PewsItem::OxygenSaturation => Vital::OxygenSaturation,
        }
    }
}

/// Half-open value interval `[lo, hi)` with its sub-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInterval {
    pub lo: f64,
    pub hi: f64,
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBand {
    pub lo_years: f64,
    pub hi_years: f64,
    pub intervals: Vec<ScoreInterval>,
}

impl AgeBand {
    /// Values below the first interval take its score, values at or above
    /// the last take the last score.
    fn lookup(&self, value: f64) -> u32 {
        let idx = self
            .intervals
            .partition_point(|iv| iv.hi <= value)
            .min(self.intervals.len() - 1);
        self.intervals[idx].score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTable {
    pub name: PewsItem,
    pub age_bands: Vec<AgeBand>,
}

impl ItemTable {
    fn band(&self, age: f64) -> &AgeBand {
        let idx = self
            .age_bands
            .partition_point(|b| b.hi_years <= age)
            .min(self.age_bands.len() - 1);
        &self.age_bands[idx]
    }

    fn validate(&self) -> Result<()> {
        let name = self.name.vital();
        let bands = &self.age_bands;
        if bands.is_empty() {
            return Err(err!(Config, "{name}: no age bands"));
        }
        if bands[0].lo_years != 0.0 || bands[bands.len() - 1].hi_years != MAX_AGE_YEARS {
            return Err(err!(Config, "{name}: age bands must cover [0, 20)"));
        }
        for (i, band) in bands.iter().enumerate() {
            if !(band.lo_years < band.hi_years) {
                return Err(err!(Config, "{name}: empty age band {}", band.lo_years));
            }
            if i > 0 && bands[i - 1].hi_years != band.lo_years {
                return Err(err!(
                    Config,
                    "{name}: gap or overlap between age bands at {}",
                    band.lo_years
                ));
            }
            let ivs = &band.intervals;
            if ivs.is_empty() {
                return Err(err!(Config, "{name}: age band {} has no intervals", band.lo_years));
            }
            for (j, iv) in ivs.iter().enumerate() {
                if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi) {
                    return Err(err!(Config, "{name}: bad interval [{}, {})", iv.lo, iv.hi));
                }
                if j > 0 && ivs[j - 1].hi != iv.lo {
                    return Err(err!(
                        Config,
                        "{name}: gap or overlap between intervals at {} (age band {})",
                        iv.lo,
                        band.lo_years
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Age-banded sub-score lookup for the scored items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct PewsTable {
    items: Vec<ItemTable>,
}

#[derive(Deserialize)]
struct RawTable {
    items: Vec<ItemTable>,
}

impl TryFrom<RawTable> for PewsTable {
    type Error = crate::Error;

    fn try_from(raw: RawTable) -> Result<PewsTable> {
        PewsTable::new(raw.items)
    }
}

impl PewsTable {
    /// Rejects duplicate items, age-band gaps/overlaps and interval
    /// gaps/overlaps.
    pub fn new(items: Vec<ItemTable>) -> Result<PewsTable> {
        for (i, item) in items.iter().enumerate() {
            if items[..i].iter().any(|other| other.name == item.name) {
                return Err(err!(Config, "item {} listed twice", item.name.vital()));
            }
            item.validate()?;
        }
        Ok(PewsTable { items })
    }

    pub fn items(&self) -> &[ItemTable] {
        &self.items
    }

    pub fn item(&self, item: PewsItem) -> Option<&ItemTable> {
        self.items.iter().find(|t| t.name == item)
    }

    /// Sub-score of one item; 0 when the value is missing or the item is not
    /// configured.
    pub fn item_subscore(&self, item: PewsItem, value: Option<f64>, age: f64) -> u32 {
        match (self.item(item), value) {
            (Some(table), Some(v)) => table.band(age).lookup(v),
            _ => 0,
        }
    }

    pub fn score(&self, x: &FeatureVector) -> u32 {
        PewsItem::ALL
            .iter()
            .map(|&item| self.item_subscore(item, x.vital(item.vital()), x.age()))
            .sum()
    }

    /// Largest attainable total.
    pub fn max_score(&self) -> u32 {
        self.items
            .iter()
            .map(|t| {
                t.age_bands
                    .iter()
                    .flat_map(|b| b.intervals.iter().map(|iv| iv.score))
                    .max()
                    .unwrap_or(0)
            })
            .sum()
    }
}

/// Free-function form of [`PewsTable::score`].
pub fn pews_score(table: &PewsTable, x: &FeatureVector) -> u32 {
    table.score(x)
}

/// Integer cutoff whose rule "transfer iff score >= c" best balances
/// sensitivity and specificity.
///
/// Candidates run from 0 to the largest observed score plus one. The winner
/// minimises |sensitivity - specificity|, then maximises sensitivity, then
/// takes the smallest c. Comparisons are exact (integer cross-products).
pub fn select_cutoff_from_scores(scores: &[u32], labels: &[Label]) -> Result<u32> {
    if scores.len() != labels.len() {
        return Err(err!(Input, "{} scores but {} labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count() as i128;
    let neg = labels.len() as i128 - pos;
    if pos == 0 || neg == 0 {
        return Err(err!(Data, "cutoff selection needs both classes"));
    }
    let top = scores.iter().copied().max().unwrap_or(0);
    let mut best: Option<(i128, i128, u32)> = None;
    for c in 0..=top + 1 {
        let (mut tp, mut tn) = (0i128, 0i128);
        for (&s, l) in scores.iter().zip(labels) {
            match (s >= c, l.is_positive()) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                _ => {}
            }
        }
        // |tp/P - tn/N| scaled by P*N; sensitivity compared through tp.
        let imbalance = (tp * neg - tn * pos).abs();
        let better = match best {
            None => true,
            Some((bi, btp, _)) => imbalance < bi || (imbalance == bi && tp > btp),
        };
        if better {
            best = Some((imbalance, tp, c));
        }
    }
    Ok(best.expect("at least one candidate").2)
}

pub fn select_cutoff(table: &PewsTable, train: &[Snapshot]) -> Result<u32> {
    let scores: Vec<u32> = train.iter().map(|s| table.score(&s.features)).collect();
    let labels: Vec<Label> = train.iter().map(|s| s.label).collect();
    select_cutoff_from_scores(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PewsBaseline {
    pub cutoff: u32,
    pub table: PewsTable,
}

impl PewsBaseline {
    pub fn fit(table: PewsTable, train: &[Snapshot]) -> Result<PewsBaseline> {
        let cutoff = select_cutoff(&table, train)?;
        Ok(PewsBaseline { cutoff, table })
    }

    pub fn score(&self, x: &FeatureVector) -> u32 {
        self.table.score(x)
    }

    /// Transfer iff the score matches or exceeds the cutoff.
    pub fn classify(&self, x: &FeatureVector) -> Label {
        if self.score(x) >= self.cutoff {
            Label::Transfer
        } else {
            Label::NoTransfer
        }
    }
}

impl Scorer for PewsBaseline {
    fn score(&self, x: &FeatureVector) -> f64 {
        f64::from(PewsBaseline::score(self, x))
    }
}

/// Short description of a table for logs.
pub fn describe(table: &PewsTable) -> String {
    let names: Vec<&str> = table.items.iter().map(|t| t.name.vital().code()).collect();
    alloc::format!("PEWS items [{}], max score {}", names.join(", "), table.max_score())
}
