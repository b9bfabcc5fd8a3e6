use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icuau_core::au::DatasetTag;
use icuau_core::model::checkpoint::Checkpoint;
use icuau_core::model::{ModelConfig, ParameterSet};
use icuau_core::tensor::Tensor;

const SUBCOMMANDS: [&str; 9] = [
    "sample", "align", "train", "eval", "infer", "analyze", "bench", "serve", "synth",
];

fn icuau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icuau")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.txt"))
}

#[test]
fn help_matches_golden_files() {
    let mut pages = vec![("icuau".to_string(), icuau(&["--help"]))];
    for sub in SUBCOMMANDS {
        pages.push((sub.to_string(), icuau(&[sub, "--help"])));
    }
    for (name, out) in pages {
        assert!(out.status.success(), "{name}");
        let text = stdout(&out);
        let path = golden_path(&name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, expected, "help for {name} drifted; rerun with UPDATE_GOLDEN=1");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(icuau(&[]).status.code(), Some(1));
    assert_eq!(icuau(&["bench", "--bogus"]).status.code(), Some(1));
    assert_eq!(icuau(&["eval"]).status.code(), Some(1));
    assert_eq!(icuau(&["bench", "--grids", "6"]).status.code(), Some(1));
    assert_eq!(icuau(&["sample"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let out = icuau(&["bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let m = missing.to_str().unwrap();
    assert_eq!(
        icuau(&["sample", "--manifest", m, "--reports", m]).status.code(),
        Some(2)
    );
    assert_eq!(
        icuau(&["infer", "--checkpoint", m, "--frames", dir.path().to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bench_prints_the_toy_mac_pair() {
    let out = icuau(&["bench"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().find(|l| l.split_whitespace().next() == Some("8")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[..4], ["8", "64", "65536", "16384"]);

    let json: serde_json::Value =
        serde_json::from_slice(&icuau(&["bench", "--json", "--grids", "8,16"]).stdout).unwrap();
    let g = &json["grids"];
    assert_eq!(g[0]["full_macs"], 64 * 64 * 16);
    assert_eq!(g[0]["windowed_macs"], 4 * 16 * 16 * 16);
    // doubling the token count: full ×4, windowed ×2
    let (f8, f16) = (g[0]["full_macs"].as_u64().unwrap(), g[1]["full_macs"].as_u64().unwrap());
    assert_eq!(f16, 16 * f8);
}

#[test]
fn eval_on_fixture_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    // AU25: tp 3, fp 1, fn 1, tn 1; AU26: tp 1, fp 0, fn 0, tn 5
    let rows = [
        (0.9, 1, 0.1, 0),
        (0.8, 1, 0.2, 0),
        (0.7, 1, 0.3, 0),
        (0.6, 0, 0.4, 0),
        (0.5, 1, 0.2, 0),
        (0.2, 0, 0.95, 1),
    ];
    let text: String = rows
        .iter()
        .enumerate()
        .map(|(i, (p25, l25, p26, l26))| {
            format!(
                "{{\"frame_id\":\"f{i}\",\"probabilities\":{{\"25\":{p25},\"26\":{p26}}},\"labels\":{{\"25\":{l25},\"26\":{l26}}}}}\n"
            )
        })
        .collect();
    std::fs::write(&path, text).unwrap();
    let report_path = dir.path().join("out/report.json");
    let out = icuau(&[
        "eval",
        "--predictions",
        path.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let f1_25 = 2.0 * 3.0 / (2.0 * 3.0 + 1.0 + 1.0);
    assert_eq!(report["per_au"][0]["f1"].as_f64().unwrap(), f1_25);
    assert_eq!(report["per_au"][0]["accuracy"].as_f64().unwrap(), 4.0 / 6.0);
    assert_eq!(report["per_au"][1]["f1"].as_f64().unwrap(), 1.0);
    assert_eq!(report["macro_f1"].as_f64().unwrap(), (f1_25 + 1.0) / 2.0);
    assert!(stdout(&out).contains("AU25       0.75"));
}

fn write_checkpoint(dir: &Path, poison: bool) -> PathBuf {
    let cfg = ModelConfig::toy(3);
    let mut params = ParameterSet::init(&cfg, 5, Some(DatasetTag::PainIcu)).unwrap();
    if poison {
        let shape = params.get("head.weight").unwrap().shape().to_vec();
        params.insert("head.weight", Tensor::full(shape, f64::NAN));
    }
    let path = dir.join(if poison { "nan.ckpt" } else { "model.ckpt" });
    Checkpoint::new(cfg, params).save(&path).unwrap();
    path
}

#[test]
fn infer_is_byte_identical_and_scores_pspi() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    assert!(icuau(&[
        "synth",
        "--count",
        "6",
        "--seed",
        "3",
        "--out",
        frames.to_str().unwrap()
    ])
    .status
    .success());
    let ck = write_checkpoint(dir.path(), false);
    let intens = dir.path().join("int.jsonl");
    std::fs::write(
        &intens,
        "{\"frame_id\":\"frame_0001\",\"intensities\":{\"4\":5,\"6\":5,\"7\":3,\"9\":0,\"10\":2,\"43\":1}}\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = icuau(&[
            "infer",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--frames",
            frames.to_str().unwrap(),
            "--intensities",
            intens.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.jsonl"), run("b.jsonl"));
    assert_eq!(a, b);
    let lines: Vec<serde_json::Value> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1]["pspi"], 13);
    assert!(lines[0].get("pspi").is_none());
    for l in &lines {
        for au in ["25", "26", "43"] {
            let p = l["probabilities"][au].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn non_finite_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    icuau(&["synth", "--count", "2", "--out", frames.to_str().unwrap()]);
    let ck = write_checkpoint(dir.path(), true);
    let o = icuau(&[
        "infer",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--frames",
        frames.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_resume_and_eval_on_synthetic_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[train]\nlearning_rate = 1e-3\nepochs = 2\nbatch_size = 3\nnum_workers = 3\n\n\
         [data.synthetic]\ntrain_frames = 9\ntest_frames = 6\n\n[paths]\ncheckpoints = \"ck\"\nmetrics = \"m/latest.json\"\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = icuau(&["train", "--config", c, "--epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = dir.path().join("ck/model.ckpt");
    let log = std::fs::read_to_string(dir.path().join("ck/train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(dir.path().join("m/latest.json").exists());

    // flags override the file: the resumed run has the file's 2 epochs
    let o = icuau(&["train", "--config", c, "--resume", ck.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "epochs differ, so the train digest must not match"
    );
    let o = icuau(&[
        "train",
        "--config",
        c,
        "--epochs",
        "1",
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(Checkpoint::load(&ck, None).unwrap().epochs_completed, 1);

    let o = icuau(&[
        "eval",
        "--config",
        c,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Avg"));
}
