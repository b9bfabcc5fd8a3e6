//! Facial action-unit inventory and the AU sets predicted per dataset.

use serde::{Deserialize, Serialize};

/// FACS action unit number.
pub type AuId = u8;

/// Action units annotated in the ICU cohort, with their FACS names.
pub const PAIN_ICU_AUS: [(AuId, &str); 12] = [
    (4, "Brow Lowerer"),
    (6, "Cheek Raiser"),
    (7, "Lid Tightener"),
    (9, "Nose Wrinkler"),
    (10, "Upper Lip Raiser"),
    (12, "Lip Corner Puller"),
    (20, "Lip Stretcher"),
    (24, "Lip Pressor"),
    (25, "Lips Part"),
    (26, "Jaw Drop"),
    (27, "Mouth Stretch"),
    (43, "Eyes Closed"),
];

const DESCRIPTIONS: [(AuId, &str); 19] = [
    (1, "Inner Brow Raiser"),
    (2, "Outer Brow Raiser"),
    (4, "Brow Lowerer"),
    (5, "Upper Lid Raiser"),
    (6, "Cheek Raiser"),
    (7, "Lid Tightener"),
    (9, "Nose Wrinkler"),
    (10, "Upper Lip Raiser"),
    (12, "Lip Corner Puller"),
    (14, "Dimpler"),
    (15, "Lip Corner Depressor"),
    (17, "Chin Raiser"),
    (20, "Lip Stretcher"),
    (23, "Lip Funneler"),
    (24, "Lip Pressor"),
    (25, "Lips Part"),
    (26, "Jaw Drop"),
    (27, "Mouth Stretch"),
    (43, "Eyes Closed"),
];

pub fn description(au: AuId) -> Option<&'static str> {
    DESCRIPTIONS.iter().find(|(id, _)| *id == au).map(|(_, d)| *d)
}

pub fn is_pain_icu_au(au: AuId) -> bool {
    PAIN_ICU_AUS.iter().any(|(id, _)| *id == au)
}

/// Which AU set a classification head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetTag {
    Bp4d,
    DisfaPlus,
    /// The three AUs reported for the ICU test partition.
    PainIcu,
    /// All twelve annotated ICU AUs.
    PainIcuFull,
}

impl DatasetTag {
    pub fn au_ids(self) -> &'static [AuId] {
        match self {
            DatasetTag::Bp4d => &[1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24],
            DatasetTag::DisfaPlus => &[1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26],
            DatasetTag::PainIcu => &[25, 26, 43],
            DatasetTag::PainIcuFull => &[4, 6, 7, 9, 10, 12, 20, 24, 25, 26, 27, 43],
        }
    }

    pub fn num_aus(self) -> usize {
        self.au_ids().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::Bp4d => "bp4d",
            DatasetTag::DisfaPlus => "disfa-plus",
            DatasetTag::PainIcu => "pain-icu",
            DatasetTag::PainIcuFull => "pain-icu-full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Bp4d, Self::DisfaPlus, Self::PainIcu, Self::PainIcuFull]
            .into_iter()
            .find(|t| t.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icu_set_has_descriptions() {
        for (id, name) in PAIN_ICU_AUS {
            assert_eq!(description(id), Some(name));
        }
        assert!(is_pain_icu_au(43));
        assert!(!is_pain_icu_au(99));
    }

    #[test]
    fn head_sizes() {
        assert_eq!(DatasetTag::Bp4d.num_aus(), 12);
        assert_eq!(DatasetTag::PainIcu.num_aus(), 3);
        assert!(DatasetTag::Bp4d
            .au_ids()
            .iter()
            .all(|a| !DatasetTag::PainIcu.au_ids().contains(a)));
        assert_eq!(DatasetTag::from_name("disfa-plus"), Some(DatasetTag::DisfaPlus));
    }
}
