//! CSV files for events, encounters, snapshots and ROC curves.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};
use wardwatch_core::dataset::Feature;
use wardwatch_core::metrics::RocPoint;
use wardwatch_core::{Encounter, FeatureVector, Label, Snapshot, Timestamp, Vital, VitalEvent};

use crate::error::{Error, Result};

pub const EVENTS_HEADER: [&str; 5] = ["encounter_id", "patient_id", "time", "vital", "value"];
pub const ENCOUNTERS_HEADER: [&str; 5] =
    ["encounter_id", "patient_id", "age_years", "transferred", "transfer_time"];
pub const SNAPSHOT_HEADER: [&str; 13] = [
    "hr", "o2", "rr", "temp", "dbp", "sbp", "age", "pp", "map", "si", "label", "encounter_id",
    "patient_id",
];
pub const ROC_HEADER: [&str; 3] = ["fpr", "tpr", "threshold"];

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_time(t: Timestamp) -> String {
    match DateTime::<Utc>::from_timestamp(t.0, 0) {
        Some(dt) => dt.format(TIME_FORMAT).to_string(),
        None => t.0.to_string(),
    }
}

/// Accepts RFC 3339 with any offset, or a naive `YYYY-MM-DDTHH:MM:SS[Z]`
/// read as UTC. Fractional seconds are truncated.
pub fn parse_time(s: &str) -> Option<Timestamp> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(Timestamp(dt.timestamp()));
    }
    let naive = s.strip_suffix('Z').unwrap_or(s);
    NaiveDateTime::parse_from_str(naive, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|dt| Timestamp(dt.and_utc().timestamp()))
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv { path: path.to_path_buf(), line: 0, message: format!("{other:?}") },
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows of a CSV file with a fixed header, with the line number of each.
struct Rows {
    path: PathBuf,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> Result<Rows> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let found = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
        let found: Vec<&str> = found.iter().map(str::trim).collect();
        if found != header {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
            });
        }
        Ok(Rows { path: path.to_path_buf(), reader })
    }

    fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        let mut line = 1;
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    line = record.position().map(|p| p.line()).unwrap_or(line + 1);
                    f(&Row { path: &self.path, line, record: &record })?;
                }
                Err(e) => return Err(csv_error(&self.path, line + 1, e)),
            }
        }
    }
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    Error::Csv { path: path.to_path_buf(), line, message: e.to_string() }
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Csv { path: self.path.to_path_buf(), line: self.line, message: message.into() }
    }

    fn get(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("").trim()
    }

    fn text(&self, i: usize, name: &str) -> Result<String> {
        match self.get(i) {
            "" => Err(self.fail(format!("{name} is empty"))),
            s => Ok(s.to_string()),
        }
    }

    fn number(&self, i: usize, name: &str) -> Result<f64> {
        let s = self.get(i);
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.fail(format!("{name} `{s}` is not a finite number")))
    }

    fn optional_number(&self, i: usize, name: &str) -> Result<Option<f64>> {
        if self.get(i).is_empty() {
            Ok(None)
        } else {
            self.number(i, name).map(Some)
        }
    }

    fn time(&self, i: usize, name: &str) -> Result<Timestamp> {
        let s = self.get(i);
        parse_time(s).ok_or_else(|| self.fail(format!("{name} `{s}` is not an ISO-8601 timestamp")))
    }

    fn flag(&self, i: usize, name: &str) -> Result<bool> {
        match self.get(i).to_ascii_lowercase().as_str() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            s => Err(self.fail(format!("{name} `{s}` is not a boolean"))),
        }
    }

    fn check(&self, r: wardwatch_core::Result<()>) -> Result<()> {
        r.map_err(|e| self.fail(e.to_string()))
    }
}

pub fn write_events(path: &Path, encounters: &[Encounter]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(EVENTS_HEADER).map_err(|e| write_err(path, e))?;
    for enc in encounters {
        for ev in enc.events() {
            w.write_record([
                enc.encounter_id.as_str(),
                enc.patient_id.as_str(),
                &format_time(ev.time),
                ev.vital.code(),
                &ev.value.to_string(),
            ])
            .map_err(|e| write_err(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_encounters(path: &Path, encounters: &[Encounter]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(ENCOUNTERS_HEADER).map_err(|e| write_err(path, e))?;
    for enc in encounters {
        w.write_record([
            enc.encounter_id.as_str(),
            enc.patient_id.as_str(),
            &enc.age.to_string(),
            if enc.transferred() { "true" } else { "false" },
            &enc.transfer_time.map(format_time).unwrap_or_default(),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    finish(path, w)
}

struct EncounterRow {
    patient_id: String,
    age: f64,
    transfer_time: Option<Timestamp>,
    line: u64,
}

/// Joins an encounters file with its events file. Encounters keep file
/// order; events may appear in any order.
pub fn read_encounters(encounters_path: &Path, events_path: &Path) -> Result<Vec<Encounter>> {
    let mut order: Vec<String> = Vec::new();
    let mut meta: HashMap<String, EncounterRow> = HashMap::new();
    Rows::open(encounters_path, &ENCOUNTERS_HEADER)?.for_each(|row| {
        let id = row.text(0, "encounter_id")?;
        let patient_id = row.text(1, "patient_id")?;
        let age = row.number(2, "age_years")?;
        let transferred = row.flag(3, "transferred")?;
        let transfer_time = match (transferred, row.get(4)) {
            (true, "") => return Err(row.fail("transferred encounter without transfer_time")),
            (true, _) => Some(row.time(4, "transfer_time")?),
            (false, "") => None,
            (false, _) => return Err(row.fail("transfer_time given for a non-transferred encounter")),
        };
        if meta.contains_key(&id) {
            return Err(row.fail(format!("duplicate encounter_id `{id}`")));
        }
        order.push(id.clone());
        meta.insert(id, EncounterRow { patient_id, age, transfer_time, line: row.line });
        Ok(())
    })?;

    let mut events: BTreeMap<String, Vec<VitalEvent>> = BTreeMap::new();
    Rows::open(events_path, &EVENTS_HEADER)?.for_each(|row| {
        let id = row.text(0, "encounter_id")?;
        let Some(enc) = meta.get(&id) else {
            return Err(row.fail(format!("unknown encounter_id `{id}`")));
        };
        if row.get(1) != enc.patient_id {
            return Err(row.fail(format!(
                "patient_id `{}` differs from `{}` in the encounters file",
                row.get(1),
                enc.patient_id
            )));
        }
        let time = row.time(2, "time")?;
        let code = row.get(3);
        let vital = Vital::from_code(code)
            .ok_or_else(|| row.fail(format!("unknown vital `{code}` (expected HR, O2, RR, Temp, dBP or sBP)")))?;
        let value = row.number(4, "value")?;
        let event = VitalEvent { time, vital, value };
        row.check(event.validate())?;
        events.entry(id).or_default().push(event);
        Ok(())
    })?;

    order
        .into_iter()
        .map(|id| {
            let m = meta.remove(&id).expect("recorded above");
            let evs = events.remove(&id).unwrap_or_default();
            Encounter::new(id, m.patient_id, m.age, m.transfer_time, evs).map_err(|e| Error::Csv {
                path: encounters_path.to_path_buf(),
                line: m.line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_snapshots(path: &Path, snapshots: &[Snapshot]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(SNAPSHOT_HEADER).map_err(|e| write_err(path, e))?;
    for s in snapshots {
        let mut record: Vec<String> = s.features.values().iter().map(|v| opt(*v)).collect();
        record.push(if s.label.is_positive() { "1" } else { "0" }.to_string());
        record.push(s.encounter_id.clone());
        record.push(s.patient_id.clone());
        w.write_record(&record).map_err(|e| write_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    Rows::open(path, &SNAPSHOT_HEADER)?.for_each(|row| {
        let mut values = [None; 10];
        for f in Feature::ALL {
            values[f.index()] = row.optional_number(f.index(), f.column())?;
        }
        let features = FeatureVector::from_values(values).map_err(|e| row.fail(e.to_string()))?;
        let label = if row.flag(10, "label")? { Label::Transfer } else { Label::NoTransfer };
        out.push(Snapshot {
            features,
            label,
            encounter_id: row.text(11, "encounter_id")?,
            patient_id: row.text(12, "patient_id")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// The leading `+inf` threshold is written as `inf`.
pub fn write_roc(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(ROC_HEADER).map_err(|e| write_err(path, e))?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])
            .map_err(|e| write_err(path, e))?;
    }
    finish(path, w)
}

/// Writes `contents` to `path`, reporting the path on failure.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
