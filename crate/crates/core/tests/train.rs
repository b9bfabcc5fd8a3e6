use icuau_core::au::DatasetTag;
use icuau_core::model::checkpoint::Checkpoint;
use icuau_core::model::{Model, ModelConfig, ParameterSet};
use icuau_core::synth::{synthetic_dataset, synthetic_tag, SynthOptions};
use icuau_core::tensor::Tensor;
use icuau_core::train::{
    batch_gradients, flip_images, parallel_gradients, pretrain_then_finetune, Dataset, EpochLog, Stage, TrainConfig,
    TrainError, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> (ModelConfig, ParameterSet) {
    let cfg = ModelConfig::toy(3);
    let params = ParameterSet::init(&cfg, 11, Some(synthetic_tag())).unwrap();
    (cfg, params)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs: 2,
        batch_size: 3,
        num_workers: 3,
        seed: 5,
        ..Default::default()
    }
}

fn data(n: usize, seed: u64) -> Dataset {
    synthetic_dataset(n, &SynthOptions::default(), seed, "f").unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn single_worker_is_plain_backward() {
    let (cfg, params) = toy();
    let model = Model::new(cfg).unwrap();
    let d = data(4, 1);
    let (x, y) = d.select(&[0, 1, 2, 3], None).unwrap();
    let plain = batch_gradients(&model, &params, &x, &y, None).unwrap();
    let one = parallel_gradients(&model, &params, &x, &y, 1, None).unwrap();
    assert_eq!(plain, one);
}

#[test]
fn three_shards_match_full_batch() {
    let (cfg, params) = toy();
    let model = Model::new(cfg).unwrap();
    let d = data(6, 2);
    let (x, y) = d.select(&[0, 1, 2, 3, 4, 5], None).unwrap();
    let full = batch_gradients(&model, &params, &x, &y, None).unwrap();
    let sharded = parallel_gradients(&model, &params, &x, &y, 3, None).unwrap();
    for (path, g) in &full.grads {
        let err = max_abs_diff(g, &sharded.grads[path]);
        assert!(err < 1e-10, "{path}: {err:e}");
    }
    assert!((full.loss - sharded.loss).abs() < 1e-12);

    // shards in a different order
    let (xp, yp) = d.select(&[4, 5, 0, 1, 2, 3], None).unwrap();
    let permuted = parallel_gradients(&model, &params, &xp, &yp, 3, None).unwrap();
    for (path, g) in &sharded.grads {
        assert!(max_abs_diff(g, &permuted.grads[path]) < 1e-12, "{path}");
    }
}

#[test]
fn indivisible_batch_is_rejected() {
    let (cfg, params) = toy();
    let model = Model::new(cfg).unwrap();
    let d = data(4, 3);
    let (x, y) = d.select(&[0, 1, 2, 3], None).unwrap();
    assert!(matches!(
        parallel_gradients(&model, &params, &x, &y, 3, None),
        Err(TrainError::IndivisibleBatch { batch: 4, workers: 3 })
    ));
}

#[test]
fn same_seed_same_parameters() {
    let (cfg, params) = toy();
    let d = data(6, 4);
    let run = || {
        let mut t = Trainer::new(cfg.clone(), params.clone(), small_cfg()).unwrap();
        t.fit(&d, None, None).unwrap();
        t.into_params()
    };
    let (a, b) = (run(), run());
    for ((pa, ta), (_, tb)) in a.iter().zip(b.iter()) {
        let same = ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{pa}");
    }
    assert_ne!(a.backbone_checksum(), params.backbone_checksum());
}

#[test]
fn flipping_a_symmetric_image_changes_nothing() {
    let quiet = SynthOptions {
        noise: 0.0,
        ..Default::default()
    };
    let d = synthetic_dataset(6, &quiet, 8, "s").unwrap();
    assert_eq!(flip_images(d.images()), *d.images());
    let (cfg, params) = toy();
    let loss = |p: f64| {
        let tc = TrainConfig {
            flip_probability: p,
            epochs: 1,
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg.clone(), params.clone(), tc).unwrap();
        t.train_epoch(&d).unwrap().loss
    };
    assert_eq!(loss(0.0).to_bits(), loss(1.0).to_bits());
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[test]
fn whole_dataset_batch_loss_is_direct_bce() {
    let (cfg, params) = toy();
    let d = data(5, 9);
    let logits = Model::new(cfg.clone()).unwrap().logits(&params, d.images()).unwrap();
    let direct: f64 = logits
        .data()
        .iter()
        .zip(d.labels().data())
        .map(|(&x, &y)| y * softplus(-x) + (1.0 - y) * softplus(x))
        .sum::<f64>()
        / logits.len() as f64;
    let tc = TrainConfig {
        batch_size: 5,
        num_workers: 1,
        flip_probability: 0.0,
        epochs: 1,
        ..small_cfg()
    };
    let mut t = Trainer::new(cfg, params, tc).unwrap();
    let m = t.train_epoch(&d).unwrap();
    assert_eq!(m.steps, 1);
    assert!((m.loss - direct).abs() < 1e-12, "{} vs {direct}", m.loss);
}

#[test]
fn unannotated_frames_never_train() {
    let (cfg, params) = toy();
    let full = data(9, 10);
    let mask = vec![true, false, true, true, false, true, true, false, true];
    let masked = Dataset::new(
        full.frame_ids().to_vec(),
        full.images().clone(),
        full.labels().clone(),
        mask.clone(),
        full.au_ids().to_vec(),
    )
    .unwrap();
    let kept: Vec<usize> = (0..9).filter(|&i| mask[i]).collect();
    let subset = full.subset(&kept).unwrap();
    let train = |d: &Dataset| {
        let mut t = Trainer::new(cfg.clone(), params.clone(), small_cfg()).unwrap();
        t.fit(d, None, None).unwrap();
        t.into_params()
    };
    assert_eq!(train(&masked), train(&subset));

    let none = Dataset::new(
        full.frame_ids().to_vec(),
        full.images().clone(),
        full.labels().clone(),
        vec![false; 9],
        full.au_ids().to_vec(),
    )
    .unwrap();
    let mut t = Trainer::new(cfg, params, small_cfg()).unwrap();
    assert!(matches!(t.train_epoch(&none), Err(TrainError::NoAnnotatedFrames)));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (cfg, params) = toy();
    let d = data(6, 12);
    let tc = TrainConfig {
        epochs: 4,
        ..small_cfg()
    };
    let mut straight = Trainer::new(cfg.clone(), params.clone(), tc.clone()).unwrap();
    straight.fit(&d, None, None).unwrap();

    let mut first = Trainer::new(cfg.clone(), params, tc.clone()).unwrap();
    first.train_epoch(&d).unwrap();
    first.train_epoch(&d).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes, Some(&cfg)).unwrap();
    assert_eq!(ck.to_bytes(), bytes);
    let mut resumed = Trainer::resume(ck, tc.clone()).unwrap();
    assert_eq!(resumed.epochs_completed(), 2);
    resumed.fit(&d, None, None).unwrap();
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());

    let other = TrainConfig { seed: 99, ..tc };
    let ck = Checkpoint::from_bytes(&bytes, None).unwrap();
    assert!(matches!(Trainer::resume(ck, other), Err(TrainError::Checkpoint(_))));
}

#[test]
fn log_has_one_record_per_epoch() {
    let (cfg, params) = toy();
    let (train, test) = (data(6, 13), data(3, 14));
    let mut t = Trainer::new(cfg, params, small_cfg()).unwrap();
    let mut buf = Vec::new();
    let records = t.fit(&train, Some(&test), Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let parsed: Vec<EpochLog> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[1].epoch, 2);
    assert_eq!(parsed[0].loss, records[0].loss);
    assert!(parsed[0].test.is_some());
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss", "train", "test", "wall_seconds"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn config_validation() {
    let (cfg, params) = toy();
    for bad in [
        TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        },
        TrainConfig {
            epochs: 0,
            ..small_cfg()
        },
        TrainConfig {
            num_workers: 0,
            ..small_cfg()
        },
        TrainConfig {
            pos_weight: Some(vec![1.0]),
            ..small_cfg()
        },
    ] {
        assert!(Trainer::new(cfg.clone(), params.clone(), bad).is_err());
    }
}

/// Dataset of synthetic images with random labels over `tag`'s AU set.
fn tagged(tag: DatasetTag, n: usize, seed: u64) -> Dataset {
    let base = data(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = tag.num_aus();
    let labels = (0..n * a)
        .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
        .collect();
    Dataset::new(
        base.frame_ids().to_vec(),
        base.images().clone(),
        Tensor::new(vec![n, a], labels).unwrap(),
        vec![true; n],
        tag.au_ids().to_vec(),
    )
    .unwrap()
}

#[test]
fn pretrain_then_finetune_swaps_heads() {
    let backbone = ModelConfig::toy(3);
    let (a_train, a_test) = (tagged(DatasetTag::Bp4d, 6, 20), tagged(DatasetTag::Bp4d, 3, 21));
    let (b_train, b_test) = (data(6, 22), data(3, 23));
    let tc = TrainConfig {
        epochs: 1,
        ..small_cfg()
    };
    let run = || {
        pretrain_then_finetune(
            &backbone,
            Stage {
                tag: DatasetTag::Bp4d,
                train: &a_train,
                test: &a_test,
                config: tc.clone(),
            },
            Stage {
                tag: DatasetTag::PainIcu,
                train: &b_train,
                test: &b_test,
                config: tc.clone(),
            },
        )
        .unwrap()
    };
    let out = run();
    assert_ne!(out.init_checksum, out.pretrained_checksum);
    assert_eq!(out.model_config.num_aus, 3);
    assert_eq!(out.params.head_tag(), Some(DatasetTag::PainIcu));
    assert_eq!(out.pretrain_report.per_au.len(), 12);
    let ids: Vec<u8> = out.finetune_report.per_au.iter().map(|r| r.au_id).collect();
    assert_eq!(ids, [25, 26, 43]);
    let again = run();
    assert_eq!(out.finetune_report, again.finetune_report);
    assert_eq!(out.pretrain_report, again.pretrain_report);

    // labels over the wrong AU set are refused
    let err = pretrain_then_finetune(
        &backbone,
        Stage {
            tag: DatasetTag::DisfaPlus,
            train: &a_train,
            test: &a_test,
            config: tc.clone(),
        },
        Stage {
            tag: DatasetTag::PainIcu,
            train: &b_train,
            test: &b_test,
            config: tc,
        },
    );
    assert!(matches!(err, Err(TrainError::Dataset(_))));
}

#[test]
fn overfit_fixture_loss_drops_tenfold() {
    let (cfg, params) = toy();
    let d = data(60, 1);
    let idx: Vec<usize> = (0..60).collect();
    let (x, y) = d.select(&idx, None).unwrap();
    let model = Model::new(cfg.clone()).unwrap();
    let initial = batch_gradients(&model, &params, &x, &y, None).unwrap().loss;
    let tc = TrainConfig {
        epochs: 20,
        ..small_cfg()
    };
    let mut t = Trainer::new(cfg, params, tc).unwrap();
    t.fit(&d, None, None).unwrap();
    let fin = batch_gradients(&model, t.params(), &x, &y, None).unwrap().loss;
    assert!(fin < 0.1 * initial, "{fin} vs initial {initial}");
}
