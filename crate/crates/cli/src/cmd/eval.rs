use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use icuau_core::au::AuId;
use icuau_core::eval::{ConfusionCounter, EvalReport};
use icuau_core::model::checkpoint::Checkpoint;
use icuau_core::train::{TrainConfig, Trainer};
use serde::Deserialize;

use crate::config::{existing, RunConfig};
use crate::pipeline::load_splits;
use crate::{EvalArgs, Split, UsageError};

/// One scored frame: probabilities and 0/1 truth keyed by AU id.
#[derive(Debug, Deserialize)]
pub struct PredictionLine {
    pub frame_id: String,
    pub probabilities: BTreeMap<AuId, f64>,
    pub labels: BTreeMap<AuId, u8>,
}

pub fn counters_from_predictions(path: &Path, threshold: f64) -> Result<Vec<ConfusionCounter>> {
    let reader = BufReader::new(std::fs::File::open(existing(path)?)?);
    let mut counters: Option<Vec<ConfusionCounter>> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let aus: Vec<AuId> = p.probabilities.keys().copied().collect();
        if p.labels.keys().copied().collect::<Vec<_>>() != aus {
            bail!("frame {}: probability and label AU sets differ", p.frame_id);
        }
        let counters = counters.get_or_insert_with(|| aus.iter().map(|&a| ConfusionCounter::new(a)).collect());
        if counters.iter().map(|c| c.au_id).ne(aus.iter().copied()) {
            bail!("frame {}: AU set differs from the first line", p.frame_id);
        }
        for c in counters.iter_mut() {
            let truth = match p.labels[&c.au_id] {
                0 => false,
                1 => true,
                v => bail!("frame {}: label {v} for AU {} is not 0 or 1", p.frame_id, c.au_id),
            };
            c.update(p.probabilities[&c.au_id], truth, threshold)
                .with_context(|| format!("frame {}", p.frame_id))?;
        }
    }
    counters.ok_or_else(|| anyhow::anyhow!("{} holds no predictions", path.display()))
}

pub fn run(args: EvalArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let cfg = RunConfig::load(args.config.as_deref())?;
    if !(0.0..1.0).contains(&args.threshold) {
        return Err(UsageError(format!("threshold {} outside [0, 1)", args.threshold)).into());
    }
    let report = if let Some(path) = &args.predictions {
        EvalReport::from_counters(&counters_from_predictions(path, args.threshold)?, args.threshold)?
    } else {
        let path = args.checkpoint.as_deref().expect("clap requires --checkpoint");
        let ck = Checkpoint::load(existing(path)?, None).with_context(|| format!("checkpoint {}", path.display()))?;
        let tag = ck.params.head_tag().map_or_else(|| cfg.tag(), Ok)?;
        let splits = load_splits(&cfg, &ck.config, tag, args.synthetic)?;
        let data = match args.split {
            Split::Train => &splits.train,
            Split::Test => &splits.test,
        };
        let trainer = Trainer::new(ck.config, ck.params, TrainConfig::default())?;
        let report = trainer.evaluate(data)?;
        if args.threshold != report.threshold {
            let probs = trainer.predict(data)?;
            let counters = icuau_core::eval::count_predictions(
                data.au_ids(),
                probs.data(),
                data.labels().data(),
                Some(data.mask()),
                args.threshold,
            )?;
            EvalReport::from_counters(&counters, args.threshold)?
        } else {
            report
        }
    };
    if let Some(out) = args.out.as_ref().or(cfg.paths.metrics.as_ref()) {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, report.to_json())?;
    }
    write!(stdout, "{}", report.render_table())?;
    Ok(())
}
