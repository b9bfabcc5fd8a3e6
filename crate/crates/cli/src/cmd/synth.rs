use std::io::Write;

use anyhow::Result;
use icuau_core::synth::{synthetic_frames, SynthOptions, SYNTHETIC_AUS};
use serde_json::json;

use crate::SynthArgs;

/// Writes `frame_NNNN.png` plus `labels.jsonl` (frame_id, labels keyed by AU).
pub fn run(args: SynthArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let opts = SynthOptions {
        size: args.size,
        ..SynthOptions::default()
    };
    std::fs::create_dir_all(&args.out)?;
    let mut labels = std::io::BufWriter::new(std::fs::File::create(args.out.join("labels.jsonl"))?);
    for (i, (raster, l)) in synthetic_frames(args.count, &opts, args.seed).into_iter().enumerate() {
        let id = format!("frame_{i:04}");
        raster.save(args.out.join(format!("{id}.png")))?;
        let map: serde_json::Map<String, serde_json::Value> = SYNTHETIC_AUS
            .iter()
            .zip(l)
            .map(|(au, b)| (au.to_string(), json!(b as u8)))
            .collect();
        writeln!(labels, "{}", json!({ "frame_id": id, "labels": map }))?;
    }
    labels.flush()?;
    writeln!(stdout, "wrote {} frames to {}", args.count, args.out.display())?;
    Ok(())
}
