use std::fs::OpenOptions;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};
use icuau_core::model::checkpoint::Checkpoint;
use icuau_core::model::{swap_head, ParameterSet};
use icuau_core::train::Trainer;

use crate::config::{required, RunConfig};
use crate::pipeline::load_splits;
use crate::{TrainArgs, UsageError};

pub fn run(args: TrainArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let t = &mut cfg.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.num_workers = args.workers.unwrap_or(t.num_workers);
    t.seed = args.seed.unwrap_or(t.seed);
    cfg.train.validate()?;
    if args.out.is_some() {
        cfg.paths.checkpoints = args.out;
    }
    let out_dir = required(&cfg.paths.checkpoints, "checkpoints")?.to_path_buf();
    let tag = cfg.tag()?;
    let mut model_cfg = cfg.model()?;

    let mut trainer = if let Some(path) = &args.resume {
        let ck = Checkpoint::load(path, Some(&model_cfg)).with_context(|| format!("resume {}", path.display()))?;
        Trainer::resume(ck, cfg.train.clone())?
    } else {
        let params = match &args.init {
            Some(path) => {
                let ck = Checkpoint::load(path, None).with_context(|| format!("init {}", path.display()))?;
                let (swapped_cfg, params) = swap_head(&ck.config, &ck.params, tag, cfg.data.init_seed)?;
                model_cfg = swapped_cfg;
                params
            }
            None => ParameterSet::init(&model_cfg, cfg.data.init_seed, Some(tag))?,
        };
        Trainer::new(model_cfg.clone(), params, cfg.train.clone())?
    };
    let splits = load_splits(&cfg, trainer.model().config(), tag, args.synthetic)?;
    if splits.train.annotated_indices().is_empty() {
        return Err(UsageError("no annotated training frames".into()).into());
    }

    std::fs::create_dir_all(&out_dir)?;
    let log_path = out_dir.join("train.jsonl");
    let mut log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?);
    let test = (!splits.test.is_empty()).then_some(&splits.test);
    let logs = trainer.fit(&splits.train, test, Some(&mut log))?;
    for l in &logs {
        let test_f1 = l
            .test
            .as_ref()
            .map_or("-".to_string(), |r| format!("{:.4}", r.macro_f1));
        writeln!(
            stdout,
            "epoch {:>3}  loss {:.6}  train F1 {:.4}  test F1 {}  {:.1}s",
            l.epoch, l.loss, l.train.macro_f1, test_f1, l.wall_seconds
        )?;
    }
    let ck_path = out_dir.join("model.ckpt");
    trainer.checkpoint().save(&ck_path)?;
    writeln!(stdout, "checkpoint {}", ck_path.display())?;

    if let Some(report) = logs.last().and_then(|l| l.test.as_ref()) {
        let metrics = cfg
            .paths
            .metrics
            .clone()
            .unwrap_or_else(|| out_dir.join("metrics.json"));
        if let Some(dir) = metrics.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&metrics, report.to_json())?;
        write!(stdout, "{}", report.render_table())?;
        writeln!(stdout, "metrics {}", metrics.display())?;
    }
    Ok(())
}
