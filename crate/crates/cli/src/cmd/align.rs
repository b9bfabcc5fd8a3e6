use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use icuau_core::align::{align_frame, read_landmarks_csv, AlignmentCache, CanonicalTemplate, Raster};

use crate::config::{existing, required, RunConfig};
use crate::pipeline::load_manifest;
use crate::AlignArgs;

pub fn run(args: AlignArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    for (flag, slot) in [
        (args.manifest, &mut cfg.paths.manifest),
        (args.landmarks, &mut cfg.paths.landmarks),
        (args.images, &mut cfg.paths.images),
        (args.out, &mut cfg.paths.crops),
        (args.cache, &mut cfg.paths.cache),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    let size = match args.size {
        Some(s) => s,
        None => cfg.model()?.input_size,
    };
    let manifest_path = required(&cfg.paths.manifest, "manifest")?;
    let landmarks_path = required(&cfg.paths.landmarks, "landmarks")?;
    let out_dir = required(&cfg.paths.crops, "crops")?;
    let frames = load_manifest(manifest_path)?;
    let landmarks = read_landmarks_csv(File::open(existing(landmarks_path)?)?)
        .with_context(|| format!("landmarks {}", landmarks_path.display()))?;
    let by_frame: HashMap<&str, _> = landmarks.iter().map(|l| (l.frame_id.as_str(), l)).collect();
    let image_root = match &cfg.paths.images {
        Some(p) => p.clone(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };

    let template = CanonicalTemplate::with_size(size)?;
    let cache = match &cfg.paths.cache {
        Some(p) => AlignmentCache::open(p).with_context(|| format!("cache {}", p.display()))?,
        None => AlignmentCache::new(),
    };
    std::fs::create_dir_all(out_dir)?;
    let (mut aligned, mut skipped) = (0usize, 0usize);
    for frame in &frames {
        let Some(lm) = by_frame.get(frame.frame_id.as_str()) else {
            skipped += 1;
            continue;
        };
        let src = image_root.join(&frame.image_path);
        let image = Raster::load(&src).with_context(|| format!("frame {}", src.display()))?;
        let crop = align_frame(&image, lm, &template, &cache)?;
        crop.save(out_dir.join(format!("{}.png", frame.frame_id)))?;
        aligned += 1;
    }
    let st = cache.stats();
    writeln!(
        stdout,
        "aligned {aligned} frames ({skipped} without landmarks); cache hits {} misses {}",
        st.hits, st.misses
    )?;
    Ok(())
}
