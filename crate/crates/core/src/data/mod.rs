//! Frame and pain-report ingestion, segment scheduling, patient splits and
//! the annotation document store.

mod annotation;
mod records;
mod schedule;
mod split;
mod store;

use thiserror::Error;

use crate::au::AuId;

pub use annotation::{consolidate_labels, AnnotationDoc, AuLabel, MAX_INTENSITY};
pub use records::{
    read_manifest, read_reports, write_manifest, write_reports, FrameRecord, LandmarkStatus, PainReport,
};
pub use schedule::{frames_near_report, schedule_segments, RecordingSpan, Segment, SegmentOptions};
pub use split::{split_by_patient, DatasetSplit};
pub use store::{AnnotationStore, LabelMatrix, Progress, UpsertOutcome};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("AU {0} is not in the annotated AU set")]
    UnknownAu(AuId),
    #[error("AU {au}: intensity {value} out of range")]
    Intensity { au: AuId, value: u8 },
    #[error("AU {0}: intensity given for an absent AU")]
    IntensityWithoutPresence(AuId),
    #[error("DVPRS score {0} outside 0..=10")]
    Dvprs(u8),
    #[error("duplicate frame id {0}")]
    DuplicateFrame(String),
    #[error("unknown frame id {0}")]
    UnknownFrame(String),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("recording span ends before it starts")]
    InvalidSpan,
    #[error("split needs at least 2 patients, got {0}")]
    TooFewPatients(usize),
    #[error("split ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("no annotation documents to consolidate")]
    NoDocuments,
    #[error("journal line {line}: {source}")]
    Journal { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
