use anyhow::Result;
use icuau_core::model::{attention_macs, AttentionMode};
use serde::Serialize;
use std::io::Write;

use crate::config::RunConfig;
use crate::{BenchArgs, UsageError};

#[derive(Debug, Serialize)]
struct GridRow {
    grid: usize,
    tokens: usize,
    dim: usize,
    window: usize,
    full_macs: u64,
    windowed_macs: u64,
}

#[derive(Debug, Serialize)]
struct StageRow {
    stage: usize,
    tokens: usize,
    dim: usize,
    windowed_macs: u64,
    full_macs: u64,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let cfg = RunConfig::load(args.config.as_deref())?;
    let model = cfg.model()?;
    let (dim, window) = (model.dims[0], model.window_size);
    let mut grids = Vec::new();
    for &g in &args.grids {
        if g == 0 || g % window != 0 {
            return Err(UsageError(format!("grid {g} is not a positive multiple of window {window}")).into());
        }
        // one block's score product at stage-0 width
        let mut probe = model.clone();
        probe.patch_size = 1;
        probe.input_size = g;
        probe.depths = vec![1];
        probe.dims = vec![dim];
        probe.heads = vec![model.heads[0]];
        let full = attention_macs(&probe.clone().with_mode(AttentionMode::Full))[0].qk;
        let windowed = attention_macs(&probe.with_mode(AttentionMode::Windowed))[0].qk;
        grids.push(GridRow {
            grid: g,
            tokens: g * g,
            dim,
            window,
            full_macs: full,
            windowed_macs: windowed,
        });
    }
    let windowed = attention_macs(&model.clone().with_mode(AttentionMode::Windowed));
    let full = attention_macs(&model.clone().with_mode(AttentionMode::Full));
    let stages: Vec<StageRow> = windowed
        .iter()
        .zip(&full)
        .map(|(w, f)| StageRow {
            stage: w.stage,
            tokens: w.tokens,
            dim: w.dim,
            windowed_macs: w.total(),
            full_macs: f.total(),
        })
        .collect();

    if args.json {
        writeln!(stdout, "{}", serde_json::json!({ "grids": grids, "stages": stages }))?;
        return Ok(());
    }
    writeln!(stdout, "QK^T MACs per block, d={dim}, window {window}x{window}")?;
    writeln!(
        stdout,
        "{:>6} {:>8} {:>14} {:>14} {:>7}",
        "grid", "tokens", "full", "windowed", "ratio"
    )?;
    for r in &grids {
        writeln!(
            stdout,
            "{:>6} {:>8} {:>14} {:>14} {:>7.1}",
            r.grid,
            r.tokens,
            r.full_macs,
            r.windowed_macs,
            r.full_macs as f64 / r.windowed_macs as f64
        )?;
    }
    writeln!(stdout)?;
    writeln!(
        stdout,
        "configured model, attention MACs per image (QK^T + attn.V, all blocks)"
    )?;
    writeln!(
        stdout,
        "{:>6} {:>8} {:>6} {:>14} {:>14}",
        "stage", "tokens", "dim", "windowed", "full"
    )?;
    for s in &stages {
        writeln!(
            stdout,
            "{:>6} {:>8} {:>6} {:>14} {:>14}",
            s.stage, s.tokens, s.dim, s.windowed_macs, s.full_macs
        )?;
    }
    Ok(())
}
