use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::err;
use crate::Result;

use super::MAX_AGE_YEARS;

/// Contiguous half-open age intervals `[lo, hi)` in years covering `[0, 20)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct AgeBins {
    edges: Vec<f64>,
}

impl Default for AgeBins {
    /// Quarter-year bins through the first year, then 1.5-year bins from
    /// age 1, the last one truncated at 20: 17 bins in total.
    fn default() -> Self {
        let mut edges = alloc::vec![0.0, 0.25, 0.5, 0.75];
        let mut lo = 1.0;
        while lo < MAX_AGE_YEARS {
            edges.push(lo);
            lo += 1.5;
        }
        edges.push(MAX_AGE_YEARS);
        AgeBins { edges }
    }
}

impl AgeBins {
    /// Bins from their boundaries: `edges[i]..edges[i + 1]` is bin `i`.
    /// The first edge must be 0, the last 20, strictly increasing.
    pub fn from_edges(edges: Vec<f64>) -> Result<AgeBins> {
        if edges.len() < 2 {
            return Err(err!(Config, "age bins need at least two edges"));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != MAX_AGE_YEARS {
            return Err(err!(Config, "age bins must span [0, 20)"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(err!(Config, "age bin edges must be strictly increasing"));
        }
        Ok(AgeBins { edges })
    }

    /// A single bin spanning every age.
    pub fn single() -> AgeBins {
        AgeBins { edges: alloc::vec![0.0, MAX_AGE_YEARS] }
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self, bin: usize) -> (f64, f64) {
        (self.edges[bin], self.edges[bin + 1])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Index of the bin containing `age`.
    pub fn bin(&self, age: f64) -> Result<usize> {
        if !(0.0..MAX_AGE_YEARS).contains(&age) {
            return Err(err!(Range, "age {age} outside [0, 20)"));
        }
        // First edge strictly greater than age, minus one.
        Ok(self.edges.partition_point(|&e| e <= age) - 1)
    }
}

/// Free-function form of [`AgeBins::bin`].
pub fn age_bin(age: f64, bins: &AgeBins) -> Result<usize> {
    bins.bin(age)
}

impl TryFrom<Vec<[f64; 2]>> for AgeBins {
    type Error = crate::Error;

    fn try_from(intervals: Vec<[f64; 2]>) -> Result<AgeBins> {
        let mut edges = Vec::with_capacity(intervals.len() + 1);
        for (i, [lo, hi]) in intervals.iter().copied().enumerate() {
            if i == 0 {
                edges.push(lo);
            } else if edges.last() != Some(&lo) {
                return Err(err!(Config, "age bins not contiguous at {lo}"));
            }
            edges.push(hi);
        }
        AgeBins::from_edges(edges)
    }
}

impl From<AgeBins> for Vec<[f64; 2]> {
    fn from(bins: AgeBins) -> Self {
        bins.edges.windows(2).map(|w| [w[0], w[1]]).collect()
    }
}
