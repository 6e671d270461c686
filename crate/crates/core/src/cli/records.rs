//! CSV forms of trial data: patient records (`stage,z,arm,outcome`) and the
//! per-block allocation probability sidecar (`stage,p0,p1,...`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TrialResult;
use crate::error::{Error, Result};
use crate::outcome::PatientRecord;

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    stage: usize,
    z: u8,
    arm: usize,
    outcome: u8,
}

pub fn read_records(path: &Path) -> Result<Vec<PatientRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| with_path(e, path))?;
        if row.stage == 0 || row.z > 1 || row.outcome > 1 {
            return Err(Error::InvalidData(format!(
                "{}: row {}: stage must be >= 1 and z, outcome must be 0 or 1",
                path.display(),
                i + 2
            )));
        }
        out.push(PatientRecord {
            stage: row.stage,
            z: row.z,
            arm: row.arm,
            outcome: row.outcome,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: no records",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| with_path(e, path))?;
    for r in records {
        w.serialize(RecordRow {
            stage: r.stage,
            z: r.z,
            arm: r.arm,
            outcome: r.outcome,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_probabilities(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    let headers = reader.headers().map_err(|e| with_path(e, path))?.clone();
    let arms = headers.len().saturating_sub(1);
    if arms < 2 || &headers[0] != "stage" {
        return Err(Error::InvalidData(format!(
            "{}: expected header `stage,p0,p1,...`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| with_path(e, path))?;
        let stage: usize = rec[0].trim().parse().map_err(|_| {
            Error::InvalidData(format!("{}: row {}: bad stage", path.display(), i + 2))
        })?;
        if stage != i + 1 {
            return Err(Error::InvalidData(format!(
                "{}: row {}: stages must run 1, 2, ... in order",
                path.display(),
                i + 2
            )));
        }
        let probs = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidData(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        out.push(probs);
    }
    Ok(out)
}

pub fn write_probabilities(path: &Path, blocks: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| with_path(e, path))?;
    let arms = blocks.first().map_or(0, Vec::len);
    let mut header = vec!["stage".to_string()];
    header.extend((0..arms).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (j, p) in blocks.iter().enumerate() {
        let mut row = vec![(j + 1).to_string()];
        row.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reassembles a trial from its records and sidecar; the block size is the
/// number of records in stage 1.
pub fn read_trial(records: &Path, probabilities: &Path) -> Result<TrialResult> {
    let recs = read_records(records)?;
    let probs = read_probabilities(probabilities)?;
    let block = recs.iter().filter(|r| r.stage == 1).count();
    let arms = probs.first().map_or(0, Vec::len);
    TrialResult::from_records(recs, probs, block, arms)
}

fn with_path(e: csv::Error, path: &Path) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::InvalidData(format!("{}: {e}", path.display())),
    }
}
