use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::records::{FrameRecord, PainReport};
use super::{DataError, Result};

/// Time range covered by one patient's recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingSpan {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl RecordingSpan {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end <= start {
            return Err(DataError::InvalidSpan);
        }
        Ok(Self { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentOptions {
    pub length: Duration,
    /// Shift of the segment centre relative to the report time.
    pub offset: Duration,
    pub radius: Duration,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            length: Duration::minutes(15),
            offset: Duration::zero(),
            radius: Duration::minutes(60),
        }
    }
}

/// A video segment to extract, with the indices of the reports it serves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub reports: Vec<usize>,
}

impl Segment {
    pub fn duration(&self) -> Duration {
        self.end - self.start
    }
}

/// One segment per report, centred on `reported_at + offset`, clipped to the
/// recording and to the report's radius window.
///
/// Overlaps are merged by letting each later segment start where the
/// previous one ends, so the union of time covered equals the union of the
/// raw segments while no single segment grows beyond `length`. A segment
/// swallowed entirely by its predecessor is folded into it.
pub fn schedule_segments(reports: &[PainReport], span: RecordingSpan, opts: &SegmentOptions) -> Vec<Segment> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| (reports[i].reported_at, i));

    let half = opts.length / 2;
    let mut out: Vec<Segment> = Vec::new();
    for i in order {
        let r = reports[i].reported_at;
        let centre = r + opts.offset;
        let start = (centre - half).max(span.start).max(r - opts.radius);
        let end = (centre - half + opts.length).min(span.end).min(r + opts.radius);
        if end <= start {
            continue;
        }
        let prev_end = out.last().map(|p| p.end);
        match prev_end {
            Some(pe) if end <= pe => out.last_mut().expect("previous segment").reports.push(i),
            Some(pe) if start < pe => out.push(Segment {
                start: pe,
                end,
                reports: vec![i],
            }),
            _ => out.push(Segment {
                start,
                end,
                reports: vec![i],
            }),
        }
    }
    out
}

/// The patient's frames with `|captured_at − reported_at| ≤ radius`,
/// ordered by capture time then frame id.
pub fn frames_near_report(frames: &[FrameRecord], report: &PainReport, radius: Duration) -> Vec<FrameRecord> {
    let mut out: Vec<FrameRecord> = frames
        .iter()
        .filter(|f| f.patient_id == report.patient_id && (f.captured_at - report.reported_at).abs() <= radius)
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        a.captured_at
            .cmp(&b.captured_at)
            .then_with(|| a.frame_id.cmp(&b.frame_id))
    });
    out
}
