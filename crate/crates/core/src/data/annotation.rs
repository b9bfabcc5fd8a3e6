use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::au::{is_pain_icu_au, AuId, PAIN_ICU_AUS};

pub const MAX_INTENSITY: u8 = 5;

/// Eyes Closed is scored as a binary intensity.
const BINARY_AU: AuId = 43;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuLabel {
    pub present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<u8>,
}

impl AuLabel {
    pub fn present() -> Self {
        Self {
            present: true,
            intensity: None,
        }
    }

    pub fn absent() -> Self {
        Self {
            present: false,
            intensity: None,
        }
    }

    pub fn with_intensity(intensity: u8) -> Self {
        Self {
            present: true,
            intensity: Some(intensity),
        }
    }
}

/// One annotator's labels for one frame. AUs missing from `labels` are
/// read as absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub frame_id: String,
    pub annotator_id: String,
    pub labels: BTreeMap<AuId, AuLabel>,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationDoc {
    pub fn new(
        frame_id: impl Into<String>,
        annotator_id: impl Into<String>,
        labels: BTreeMap<AuId, AuLabel>,
        submitted_at: DateTime<Utc>,
    ) -> Result<Self> {
        let doc = Self {
            frame_id: frame_id.into(),
            annotator_id: annotator_id.into(),
            labels,
            submitted_at,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_id.is_empty() {
            return Err(DataError::Empty("frame_id"));
        }
        if self.annotator_id.is_empty() {
            return Err(DataError::Empty("annotator_id"));
        }
        for (&au, label) in &self.labels {
            if !is_pain_icu_au(au) {
                return Err(DataError::UnknownAu(au));
            }
            if let Some(value) = label.intensity {
                if !label.present {
                    return Err(DataError::IntensityWithoutPresence(au));
                }
                let max = if au == BINARY_AU { 1 } else { MAX_INTENSITY };
                if value > max {
                    return Err(DataError::Intensity { au, value });
                }
            }
        }
        Ok(())
    }

    pub fn is_present(&self, au: AuId) -> bool {
        self.labels.get(&au).is_some_and(|l| l.present)
    }
}

/// Per-AU majority vote across the documents of one frame; a tie is absent.
/// Covers every annotated AU.
pub fn consolidate_labels(docs: &[AnnotationDoc]) -> Result<BTreeMap<AuId, bool>> {
    if docs.is_empty() {
        return Err(DataError::NoDocuments);
    }
    Ok(PAIN_ICU_AUS
        .iter()
        .map(|&(au, _)| {
            let yes = docs.iter().filter(|d| d.is_present(au)).count();
            (au, 2 * yes > docs.len())
        })
        .collect())
}
