//! PSPI scoring, DVPRS pain categories and AU-presence-by-pain-category tables.

mod association;
mod pspi;

use thiserror::Error;

use crate::au::AuId;

pub use association::{
    association_table, labeled_frames, AssociationCell, AssociationOptions, AssociationTable, Attribution, LabeledFrame,
};
pub use pspi::{dvprs_category, pspi, IntensityVector, PainCategory, PSPI_AUS, PSPI_MAX};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("missing intensity for AU {0}")]
    MissingIntensity(AuId),
    #[error("AU {0} is not part of the PSPI score")]
    UnexpectedAu(AuId),
    #[error("AU {au} intensity {value} out of range")]
    Intensity { au: AuId, value: u8 },
    #[error("DVPRS score {0} outside 0..=10")]
    Dvprs(u8),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;
