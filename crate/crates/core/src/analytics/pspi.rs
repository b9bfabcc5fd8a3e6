use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Result};
use crate::au::AuId;

pub const PSPI_AUS: [AuId; 6] = [4, 6, 7, 9, 10, 43];
pub const PSPI_MAX: u8 = 16;

/// Intensities for exactly the six PSPI AUs: 0–5 each, AU43 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<AuId, u8>", into = "BTreeMap<AuId, u8>")]
pub struct IntensityVector {
    values: [u8; 6],
}

impl IntensityVector {
    /// Values in `PSPI_AUS` order.
    pub fn from_array(values: [u8; 6]) -> Result<Self> {
        for (&au, &v) in PSPI_AUS.iter().zip(&values) {
            let max = if au == 43 { 1 } else { 5 };
            if v > max {
                return Err(AnalyticsError::Intensity { au, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn from_map(map: &BTreeMap<AuId, u8>) -> Result<Self> {
        if let Some(&au) = map.keys().find(|au| !PSPI_AUS.contains(au)) {
            return Err(AnalyticsError::UnexpectedAu(au));
        }
        let mut values = [0; 6];
        for (slot, au) in values.iter_mut().zip(PSPI_AUS) {
            *slot = *map.get(&au).ok_or(AnalyticsError::MissingIntensity(au))?;
        }
        Self::from_array(values)
    }

    pub fn get(&self, au: AuId) -> Option<u8> {
        PSPI_AUS.iter().position(|&a| a == au).map(|i| self.values[i])
    }

    pub fn values(&self) -> [u8; 6] {
        self.values
    }
}

impl TryFrom<BTreeMap<AuId, u8>> for IntensityVector {
    type Error = AnalyticsError;

    fn try_from(map: BTreeMap<AuId, u8>) -> Result<Self> {
        Self::from_map(&map)
    }
}

impl From<IntensityVector> for BTreeMap<AuId, u8> {
    fn from(v: IntensityVector) -> Self {
        PSPI_AUS.into_iter().zip(v.values).collect()
    }
}

/// `AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43`.
pub fn pspi(v: &IntensityVector) -> u8 {
    let [au4, au6, au7, au9, au10, au43] = v.values;
    au4 + au6.max(au7) + au9.max(au10) + au43
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PainCategory {
    Mild,
    Moderate,
    High,
}

impl PainCategory {
    pub const ALL: [PainCategory; 3] = [PainCategory::Mild, PainCategory::Moderate, PainCategory::High];

    pub fn as_str(self) -> &'static str {
        match self {
            PainCategory::Mild => "mild",
            PainCategory::Moderate => "moderate",
            PainCategory::High => "high",
        }
    }
}

impl fmt::Display for PainCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mild 0–4, moderate 5–6, high 7–10.
pub fn dvprs_category(score: u8) -> Result<PainCategory> {
    match score {
        0..=4 => Ok(PainCategory::Mild),
        5..=6 => Ok(PainCategory::Moderate),
        7..=10 => Ok(PainCategory::High),
        _ => Err(AnalyticsError::Dvprs(score)),
    }
}
