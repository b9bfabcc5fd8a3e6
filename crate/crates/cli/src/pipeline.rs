use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icuau_core::align::{Normalization, Raster};
use icuau_core::au::DatasetTag;
use icuau_core::data::{read_manifest, read_reports, split_by_patient, AnnotationStore, FrameRecord, PainReport};
use icuau_core::model::ModelConfig;
use icuau_core::synth::synthetic_dataset;
use icuau_core::train::Dataset;

use crate::config::{existing, required, RunConfig};
use crate::UsageError;

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = File::open(existing(path)?).with_context(|| path.display().to_string())?;
    read_manifest(file).with_context(|| format!("manifest {}", path.display()))
}

pub fn load_reports(path: &Path) -> Result<Vec<PainReport>> {
    let file = File::open(existing(path)?).with_context(|| path.display().to_string())?;
    read_reports(file).with_context(|| format!("reports {}", path.display()))
}

/// Opens the journal-backed store; the journal may not exist yet.
pub fn open_store(manifest: &Path, journal: &Path) -> Result<AnnotationStore> {
    let frames = load_manifest(manifest)?;
    AnnotationStore::open(journal, frames).with_context(|| format!("annotations {}", journal.display()))
}

/// Train/test datasets: generated frames, or aligned crops of annotated
/// frames split by patient.
pub fn load_splits(cfg: &RunConfig, model: &ModelConfig, tag: DatasetTag, synthetic: bool) -> Result<Splits> {
    if synthetic || cfg.data.synthetic.is_some() {
        if tag != DatasetTag::PainIcu {
            return Err(UsageError(format!("synthetic frames carry pain-icu labels, not {}", tag.name())).into());
        }
        let s = cfg.data.synthetic.clone().unwrap_or_default();
        let opts = s.options(model.input_size);
        return Ok(Splits {
            train: synthetic_dataset(s.train_frames, &opts, s.train_seed, "train")?,
            test: synthetic_dataset(s.test_frames, &opts, s.test_seed, "test")?,
        });
    }
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let journal = required(&cfg.paths.annotations, "annotations")?;
    let crops = required(&cfg.paths.crops, "crops")?;
    existing(journal)?;
    existing(crops)?;
    let store = open_store(manifest, journal)?;

    let mut annotated = Vec::new();
    for f in store.frames() {
        if store.consolidated(&f.frame_id)?.is_some() {
            annotated.push(f.clone());
        }
    }
    let patients: BTreeSet<&str> = annotated.iter().map(|f| f.patient_id.as_str()).collect();
    let split = split_by_patient(
        &patients.into_iter().collect::<Vec<_>>(),
        cfg.data.split_ratio,
        cfg.data.split_seed,
    )?;
    let pick = |ids: &[String]| -> Result<Dataset> {
        let frames: Vec<&FrameRecord> = annotated.iter().filter(|f| ids.contains(&f.patient_id)).collect();
        let frame_ids: Vec<&str> = frames.iter().map(|f| f.frame_id.as_str()).collect();
        let rasters = frame_ids
            .iter()
            .map(|id| load_crop(&crops.join(format!("{id}.png")), model.input_size))
            .collect::<Result<Vec<_>>>()?;
        let labels = store.query_labels(&frame_ids, tag.au_ids())?;
        Ok(Dataset::from_rasters(&rasters, &labels, &Normalization::default())?)
    };
    Ok(Splits {
        train: pick(&split.train)?,
        test: pick(&split.test)?,
    })
}

pub fn load_crop(path: &Path, size: usize) -> Result<Raster> {
    let r = Raster::load(path).with_context(|| format!("crop {}", path.display()))?;
    if r.width() != size || r.height() != size {
        bail!(
            "{} is {}×{}, expected {size}×{size}",
            path.display(),
            r.width(),
            r.height()
        );
    }
    Ok(r)
}

/// Writes to `path`, or stdout when `None`.
pub fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| p.display().to_string())?,
            ))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}
