use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use chrono::{DateTime, Duration, Utc};
use icuau_core::data::{frames_near_report, schedule_segments, PainReport, RecordingSpan, SegmentOptions};
use serde::Serialize;

use crate::config::{required, RunConfig};
use crate::pipeline::{load_manifest, load_reports, output};
use crate::SampleArgs;

#[derive(Serialize)]
struct SegmentLine<'a> {
    patient_id: &'a str,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    reports: Vec<&'a PainReport>,
    frames: Vec<String>,
}

pub fn run(args: SampleArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if args.manifest.is_some() {
        cfg.paths.manifest = args.manifest;
    }
    if args.reports.is_some() {
        cfg.paths.reports = args.reports;
    }
    let frames = load_manifest(required(&cfg.paths.manifest, "manifest")?)?;
    let reports = load_reports(required(&cfg.paths.reports, "reports")?)?;
    let opts = SegmentOptions {
        length: Duration::minutes(args.length_minutes),
        radius: Duration::minutes(args.radius_minutes),
        ..SegmentOptions::default()
    };

    let mut by_patient: BTreeMap<&str, Vec<PainReport>> = BTreeMap::new();
    for r in &reports {
        by_patient.entry(&r.patient_id).or_default().push(r.clone());
    }
    let mut out = output(args.out.as_ref())?;
    for (patient, patient_reports) in &by_patient {
        // recording span: first to last frame of this patient
        let times: Vec<_> = frames
            .iter()
            .filter(|f| f.patient_id == *patient)
            .map(|f| f.captured_at)
            .collect();
        let (Some(&start), Some(&end)) = (times.iter().min(), times.iter().max()) else {
            continue;
        };
        let Ok(span) = RecordingSpan::new(start, end) else {
            continue;
        };
        for seg in schedule_segments(patient_reports, span, &opts) {
            let mut ids: Vec<String> = seg
                .reports
                .iter()
                .flat_map(|&i| frames_near_report(&frames, &patient_reports[i], opts.radius))
                .filter(|f| f.captured_at >= seg.start && f.captured_at <= seg.end)
                .map(|f| f.frame_id)
                .collect();
            ids.sort();
            ids.dedup();
            let line = SegmentLine {
                patient_id: patient,
                start: seg.start,
                end: seg.end,
                reports: seg.reports.iter().map(|&i| &patient_reports[i]).collect(),
                frames: ids,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}
