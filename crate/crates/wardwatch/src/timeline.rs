//! Prediction trajectories: one score per measurement.

use wardwatch_core::dataset::{extract_snapshot, transfer_window_end, WINDOW_HOURS};
use wardwatch_core::{Encounter, Timestamp};

use crate::error::Result;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    pub encounter_id: String,
    pub time: Timestamp,
    pub score: f64,
}

/// Default end of the displayed window: the end of the snapshot window for
/// transferred encounters, otherwise the last measurement.
pub fn default_window_end(encounter: &Encounter) -> Timestamp {
    match encounter.transfer_time {
        Some(t) => transfer_window_end(t),
        None => encounter.last_event_time().unwrap_or_default(),
    }
}

/// Scores the encounter as of every event in `[end - window_hours, end]`.
///
/// The snapshot at an event's time uses the six hours up to and including
/// that time, so events sharing a timestamp produce identical rows.
pub fn timeline(
    model: &Model,
    encounter: &Encounter,
    end: Timestamp,
    window_hours: f64,
) -> Result<Vec<TimelineRow>> {
    let start = end.offset_hours(-window_hours);
    encounter
        .events()
        .iter()
        .filter(|e| e.time >= start && e.time <= end)
        .map(|e| {
            let snap = extract_snapshot(encounter, e.time, WINDOW_HOURS)?;
            Ok(TimelineRow {
                encounter_id: encounter.encounter_id.clone(),
                time: e.time,
                score: model.score(&snap.features),
            })
        })
        .collect()
}
