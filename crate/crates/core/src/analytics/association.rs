use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::pspi::{dvprs_category, PainCategory};
use super::Result;
use crate::au::{AuId, PAIN_ICU_AUS};
use crate::data::{AnnotationStore, FrameRecord, PainReport};

/// A frame with its consolidated AU presence labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub frame_id: String,
    pub patient_id: String,
    pub captured_at: DateTime<Utc>,
    pub labels: BTreeMap<AuId, bool>,
}

impl LabeledFrame {
    pub fn new(frame: &FrameRecord, labels: BTreeMap<AuId, bool>) -> Self {
        Self {
            frame_id: frame.frame_id.clone(),
            patient_id: frame.patient_id.clone(),
            captured_at: frame.captured_at,
            labels,
        }
    }

    pub fn is_present(&self, au: AuId) -> bool {
        self.labels.get(&au).copied().unwrap_or(false)
    }
}

/// Consolidated labels for every annotated frame in the store, in frame-id order.
pub fn labeled_frames(store: &AnnotationStore) -> Result<Vec<LabeledFrame>> {
    let mut out = Vec::new();
    for frame in store.frames() {
        if let Some(labels) = store.consolidated(&frame.frame_id)? {
            out.push(LabeledFrame::new(frame, labels));
        }
    }
    Ok(out)
}

/// How a frame near several reports is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// Once for every report whose window contains it.
    #[default]
    PerReport,
    /// Only for the closest report; ties go to the earlier one.
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationOptions {
    pub radius: Duration,
    pub attribution: Attribution,
    pub aus: Vec<AuId>,
}

impl Default for AssociationOptions {
    fn default() -> Self {
        Self {
            radius: Duration::minutes(60),
            attribution: Attribution::PerReport,
            aus: PAIN_ICU_AUS.iter().map(|(id, _)| *id).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationCell {
    pub au_id: AuId,
    pub category: PainCategory,
    pub present_count: u64,
    pub denominator: u64,
    /// `100 × present / denominator` to one decimal; null when the denominator is 0.
    pub percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationTable {
    pub radius_minutes: i64,
    pub attribution: Attribution,
    pub reports: BTreeMap<PainCategory, u64>,
    /// Ordered by AU, then mild, moderate, high.
    pub cells: Vec<AssociationCell>,
}

impl AssociationTable {
    pub fn cell(&self, au: AuId, category: PainCategory) -> Option<&AssociationCell> {
        self.cells.iter().find(|c| c.au_id == au && c.category == category)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["au_id", "category", "present_count", "denominator", "percentage"])?;
        for c in &self.cells {
            w.write_record([
                c.au_id.to_string(),
                c.category.to_string(),
                c.present_count.to_string(),
                c.denominator.to_string(),
                c.percentage.map(|p| format!("{p:.1}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Tallies AU presence among frames within `radius` of each same-patient
/// report, grouped by the report's DVPRS category.
pub fn association_table(
    frames: &[LabeledFrame],
    reports: &[PainReport],
    opts: &AssociationOptions,
) -> Result<AssociationTable> {
    let categories = reports
        .iter()
        .map(|r| dvprs_category(r.dvprs))
        .collect::<Result<Vec<_>>>()?;

    let mut by_patient: HashMap<&str, Vec<&LabeledFrame>> = HashMap::new();
    for f in frames {
        by_patient.entry(&f.patient_id).or_default().push(f);
    }
    for list in by_patient.values_mut() {
        list.sort_by_key(|f| f.captured_at);
    }

    // (frame, report index) pairs that count
    let mut hits: Vec<(&LabeledFrame, usize)> = Vec::new();
    for (ri, r) in reports.iter().enumerate() {
        let Some(list) = by_patient.get(r.patient_id.as_str()) else {
            continue;
        };
        let lo = list.partition_point(|f| f.captured_at < r.reported_at - opts.radius);
        let hi = list.partition_point(|f| f.captured_at <= r.reported_at + opts.radius);
        hits.extend(list[lo..hi].iter().map(|f| (*f, ri)));
    }
    if opts.attribution == Attribution::Nearest {
        let key = |&(f, ri): &(&LabeledFrame, usize)| {
            let r = &reports[ri];
            ((f.captured_at - r.reported_at).abs(), r.reported_at, ri)
        };
        let mut best: HashMap<*const LabeledFrame, (&LabeledFrame, usize)> = HashMap::new();
        for h in hits {
            let slot = best.entry(h.0 as *const _).or_insert(h);
            if key(&h) < key(slot) {
                *slot = h;
            }
        }
        hits = best.into_values().collect();
    }

    let mut denominators: BTreeMap<PainCategory, u64> = BTreeMap::new();
    let mut present: BTreeMap<(AuId, PainCategory), u64> = BTreeMap::new();
    for (f, ri) in hits {
        let cat = categories[ri];
        *denominators.entry(cat).or_default() += 1;
        for &au in &opts.aus {
            if f.is_present(au) {
                *present.entry((au, cat)).or_default() += 1;
            }
        }
    }

    let mut report_counts: BTreeMap<PainCategory, u64> = PainCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for &c in &categories {
        *report_counts.entry(c).or_default() += 1;
    }

    let mut cells = Vec::with_capacity(opts.aus.len() * 3);
    for &au in &opts.aus {
        for cat in PainCategory::ALL {
            let denominator = denominators.get(&cat).copied().unwrap_or(0);
            let present_count = present.get(&(au, cat)).copied().unwrap_or(0);
            let percentage = (denominator > 0).then(|| round1(100.0 * present_count as f64 / denominator as f64));
            cells.push(AssociationCell {
                au_id: au,
                category: cat,
                present_count,
                denominator,
                percentage,
            });
        }
    }
    Ok(AssociationTable {
        radius_minutes: opts.radius.num_minutes(),
        attribution: opts.attribution,
        reports: report_counts,
        cells,
    })
}
