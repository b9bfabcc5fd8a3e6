use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use icuau_core::align::{write_landmarks_csv, CanonicalTemplate, LandmarkSet, Raster, SimilarityTransform};
use icuau_core::analytics::{association_table, labeled_frames, AssociationOptions};
use icuau_core::data::{
    write_manifest, write_reports, AnnotationDoc, AnnotationStore, AuLabel, FrameRecord, PainReport,
};

fn icuau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icuau")).args(args).output().unwrap()
}

fn at(min: i64) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 6, 1, 9, 0, 0).unwrap() + chrono::Duration::minutes(min)
}

/// Two patients, frames every 10 minutes over two hours, images, landmarks,
/// reports and a journal with a few annotations.
fn fixture(dir: &Path) {
    let mut frames = Vec::new();
    for (p, patient) in ["p1", "p2"].iter().enumerate() {
        for k in 0..13 {
            frames.push(FrameRecord::new(
                format!("{patient}_{k:02}"),
                *patient,
                at(k * 10),
                format!("img/{p}_{k}.png"),
            ));
        }
    }
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut px = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            px.extend_from_slice(&[(x * 4) as u8, (y * 4) as u8, 128]);
        }
    }
    let img = Raster::new(64, 64, px).unwrap();
    let tpl = CanonicalTemplate::with_size(32).unwrap();
    let mut landmarks = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        img.save(dir.join(&f.image_path)).unwrap();
        let t = SimilarityTransform::from_params(1.5, 0.05 * i as f64, 4.0, 6.0).unwrap();
        let pts = tpl.points().iter().map(|p| t.apply(*p)).collect();
        if i != 3 {
            landmarks.push(LandmarkSet::new(f.frame_id.clone(), pts).unwrap());
        }
    }
    write_manifest(std::fs::File::create(dir.join("manifest.csv")).unwrap(), &frames).unwrap();
    write_landmarks_csv(std::fs::File::create(dir.join("landmarks.csv")).unwrap(), &landmarks).unwrap();
    let reports = vec![
        PainReport::new("p1", at(30), 8).unwrap(),
        PainReport::new("p1", at(35), 3).unwrap(),
        PainReport::new("p2", at(100), 5).unwrap(),
    ];
    write_reports(std::fs::File::create(dir.join("reports.csv")).unwrap(), &reports).unwrap();

    let store = AnnotationStore::open(dir.join("journal.jsonl"), frames).unwrap();
    for (frame, au25) in [
        ("p1_02", true),
        ("p1_04", false),
        ("p1_09", true),
        ("p2_10", true),
        ("p2_12", false),
    ] {
        let label = if au25 { AuLabel::present() } else { AuLabel::absent() };
        let doc = AnnotationDoc::new(frame, "ann", [(25, label)].into_iter().collect(), at(500)).unwrap();
        store.upsert(doc).unwrap();
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sample_lists_segments_with_their_frames() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = icuau(&[
        "sample",
        "--manifest",
        s(&dir.path().join("manifest.csv")),
        "--reports",
        s(&dir.path().join("reports.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // the second p1 segment starts where the first ends
    assert_eq!(lines.len(), 3);
    let p1a = &lines[0];
    assert_eq!(p1a["start"], "2023-06-01T09:22:30Z");
    assert_eq!(p1a["end"], "2023-06-01T09:37:30Z");
    assert_eq!(p1a["frames"], serde_json::json!(["p1_03"]));
    assert_eq!(lines[1]["start"], "2023-06-01T09:37:30Z");
    assert_eq!(lines[1]["end"], "2023-06-01T09:42:30Z");
    assert_eq!(lines[1]["frames"], serde_json::json!(["p1_04"]));
    let p2 = &lines[2];
    assert_eq!(p2["patient_id"], "p2");
    assert_eq!(p2["start"], "2023-06-01T10:32:30Z");
    assert_eq!(p2["end"], "2023-06-01T10:47:30Z");
    assert_eq!(p2["frames"], serde_json::json!(["p2_10"]));
}

#[test]
fn align_writes_crops_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let args = |out: &str| {
        icuau(&[
            "align",
            "--manifest",
            s(&dir.path().join("manifest.csv")),
            "--landmarks",
            s(&dir.path().join("landmarks.csv")),
            "--out",
            s(&dir.path().join(out)),
            "--cache",
            s(&dir.path().join("cache.bin")),
            "--size",
            "32",
        ])
    };
    let first = args("crops");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout)
        .contains("aligned 25 frames (1 without landmarks); cache hits 0 misses 25"));
    let second = args("crops2");
    assert!(String::from_utf8_lossy(&second.stdout).contains("cache hits 25 misses 0"));
    for id in ["p1_00", "p2_12"] {
        let a = std::fs::read(dir.path().join(format!("crops/{id}.png"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("crops2/{id}.png"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(Raster::decode(&a).unwrap().width(), 32);
    }
    assert!(!dir.path().join("crops/p1_03.png").exists());
}

#[test]
fn analyze_matches_the_library_table() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let run = |format: &str| {
        let o = icuau(&[
            "analyze",
            "--manifest",
            s(&dir.path().join("manifest.csv")),
            "--annotations",
            s(&dir.path().join("journal.jsonl")),
            "--reports",
            s(&dir.path().join("reports.csv")),
            "--format",
            format,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let frames: Vec<FrameRecord> =
        icuau_core::data::read_manifest(std::fs::File::open(dir.path().join("manifest.csv")).unwrap()).unwrap();
    let store = AnnotationStore::open(dir.path().join("journal.jsonl"), frames).unwrap();
    let reports = icuau_core::data::read_reports(std::fs::File::open(dir.path().join("reports.csv")).unwrap()).unwrap();
    let table = association_table(
        &labeled_frames(&store).unwrap(),
        &reports,
        &AssociationOptions::default(),
    )
    .unwrap();
    assert_eq!(run("csv"), table.to_csv().unwrap());
    assert_eq!(run("json"), table.to_json().unwrap() + "\n");
    let c = table.cell(25, icuau_core::analytics::PainCategory::High).unwrap();
    assert_eq!((c.present_count, c.denominator), (2, 3));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut buf = String::new();
    stream.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_over_http() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_icuau"))
        .args([
            "serve",
            "--manifest",
            s(&dir.path().join("manifest.csv")),
            "--annotations",
            s(&dir.path().join("journal.jsonl")),
            "--reports",
            s(&dir.path().join("reports.csv")),
            "--port",
            &port.to_string(),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/api/progress") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let next = http_get(port, "/api/frames/next?annotator=ann");
    let console = http_get(port, "/");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server did not come up");
    assert!(reply.starts_with("HTTP/1.1 200"));
    assert!(reply.contains("\"total_frames\":26"));
    assert!(next.unwrap().contains("\"frame_id\":\"p1_00\""));
    assert!(console.unwrap().contains("app.js"));
}
