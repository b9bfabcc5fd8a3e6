use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStatus {
    #[default]
    Pending,
    Detected,
    Missing,
}

/// One extracted video frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub patient_id: String,
    pub captured_at: DateTime<Utc>,
    pub image_path: String,
    #[serde(default)]
    pub landmarks: LandmarkStatus,
}

impl FrameRecord {
    pub fn new(
        frame_id: impl Into<String>,
        patient_id: impl Into<String>,
        captured_at: DateTime<Utc>,
        image_path: impl Into<String>,
    ) -> Self {
        Self {
            frame_id: frame_id.into(),
            patient_id: patient_id.into(),
            captured_at,
            image_path: image_path.into(),
            landmarks: LandmarkStatus::Pending,
        }
    }
}

/// A patient's self-reported DVPRS score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PainReport {
    pub patient_id: String,
    pub reported_at: DateTime<Utc>,
    pub dvprs: u8,
}

impl PainReport {
    pub fn new(patient_id: impl Into<String>, reported_at: DateTime<Utc>, dvprs: u8) -> Result<Self> {
        let r = Self {
            patient_id: patient_id.into(),
            reported_at,
            dvprs,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dvprs > 10 {
            return Err(DataError::Dvprs(self.dvprs));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    frame_id: String,
    patient_id: String,
    captured_at: DateTime<Utc>,
    image_path: String,
}

/// Reads a `frame_id,patient_id,captured_at,image_path` manifest.
/// Frame ids must be unique.
pub fn read_manifest(reader: impl Read) -> Result<Vec<FrameRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<ManifestRow>() {
        let row = row?;
        if row.frame_id.is_empty() {
            return Err(DataError::Empty("frame_id"));
        }
        if !seen.insert(row.frame_id.clone()) {
            return Err(DataError::DuplicateFrame(row.frame_id));
        }
        out.push(FrameRecord::new(
            row.frame_id,
            row.patient_id,
            row.captured_at,
            row.image_path,
        ));
    }
    Ok(out)
}

pub fn write_manifest(writer: impl Write, frames: &[FrameRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for f in frames {
        w.serialize(ManifestRow {
            frame_id: f.frame_id.clone(),
            patient_id: f.patient_id.clone(),
            captured_at: f.captured_at,
            image_path: f.image_path.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `patient_id,reported_at,dvprs` file, validating every score.
pub fn read_reports(reader: impl Read) -> Result<Vec<PainReport>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<PainReport>() {
        let row = row?;
        row.validate()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_reports(writer: impl Write, reports: &[PainReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
