use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icuau_core::align::{normalize, Normalization};
use icuau_core::analytics::{pspi, IntensityVector};
use icuau_core::au::AuId;
use icuau_core::model::checkpoint::Checkpoint;
use icuau_core::model::Model;
use icuau_core::tensor::Tensor;
use icuau_core::train::predict;
use serde::{Deserialize, Serialize};

use crate::config::existing;
use crate::pipeline::{load_crop, output};
use crate::InferArgs;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntensityLine {
    frame_id: String,
    intensities: IntensityVector,
}

#[derive(Serialize)]
struct InferLine<'a> {
    frame_id: &'a str,
    probabilities: BTreeMap<AuId, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pspi: Option<u8>,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pnm", "pgm"];

/// Image files in `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(existing(dir)?)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_intensities(path: &Path) -> Result<BTreeMap<String, IntensityVector>> {
    let reader = BufReader::new(std::fs::File::open(existing(path)?)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IntensityLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.insert(rec.frame_id, rec.intensities);
    }
    Ok(out)
}

pub fn run(args: InferArgs) -> Result<()> {
    let ck = Checkpoint::load(existing(&args.checkpoint)?, None)
        .with_context(|| format!("checkpoint {}", args.checkpoint.display()))?;
    let Some(tag) = ck.params.head_tag() else {
        bail!("checkpoint has no head tag; cannot name its outputs");
    };
    let intensities = match &args.intensities {
        Some(p) => read_intensities(p)?,
        None => BTreeMap::new(),
    };
    let files = list_frames(&args.frames)?;
    if files.is_empty() {
        bail!("no PNG/PPM frames in {}", args.frames.display());
    }
    let size = ck.config.input_size;
    let norm = Normalization::default();
    let mut data = Vec::with_capacity(files.len() * 3 * size * size);
    let mut ids = Vec::with_capacity(files.len());
    for f in &files {
        data.extend_from_slice(normalize(&load_crop(f, size)?, &norm)?.data());
        ids.push(f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string());
    }
    let images = Tensor::new(vec![files.len(), 3, size, size], data)?;
    let model = Model::new(ck.config.clone())?;
    let probs = predict(&model, &ck.params, &images)?;

    let aus = tag.au_ids();
    let mut out = output(args.out.as_ref())?;
    for (i, id) in ids.iter().enumerate() {
        let row = &probs.data()[i * aus.len()..(i + 1) * aus.len()];
        let line = InferLine {
            frame_id: id,
            probabilities: aus.iter().copied().zip(row.iter().copied()).collect(),
            pspi: intensities.get(id).map(pspi),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
