//! Procedural face-like frames whose pixels encode three AU labels
//! (lips part, jaw drop, eyes closed) for fixtures and smoke training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{Normalization, Raster};
use crate::au::{AuId, DatasetTag};
use crate::data::LabelMatrix;
use crate::train::Dataset;

/// AU order of the label triples produced here.
pub const SYNTHETIC_AUS: [AuId; 3] = [25, 26, 43];

pub fn synthetic_tag() -> DatasetTag {
    DatasetTag::PainIcu
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub size: usize,
    pub presence_probability: f64,
    /// Amplitude of the uniform per-pixel noise.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            size: 32,
            presence_probability: 0.5,
            noise: 6.0,
        }
    }
}

/// Axis-aligned box in unit coordinates.
struct Region {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

const fn region(x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
    Region { x0, y0, x1, y1 }
}

impl Region {
    fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }

    /// Region plus its mirror image about the vertical centre line.
    fn contains_sym(&self, u: f64, v: f64) -> bool {
        self.contains(u, v) || self.contains(1.0 - u, v)
    }
}

const EYE: Region = region(0.10, 0.22, 0.47, 0.46);
const PUPIL: Region = region(0.24, 0.28, 0.34, 0.40);
const LIPS: Region = region(0.10, 0.52, 0.90, 0.80);
const GAP: Region = region(0.12, 0.55, 0.88, 0.77);
const CHIN: Region = region(0.10, 0.82, 0.90, 1.0);

/// Renders one frame with the given `[AU25, AU26, AU43]` presence.
pub fn synthetic_frame(labels: [bool; 3], opts: &SynthOptions, rng: &mut impl Rng) -> Raster {
    let n = opts.size;
    let tone: f64 = rng.random_range(-4.0..4.0);
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64;
            let v = (y as f64 + 0.5) / n as f64;
            let face = ((u - 0.5) / 0.36).powi(2) + ((v - 0.52) / 0.44).powi(2) <= 1.0;
            let mut c = if face {
                [200.0, 160.0, 130.0]
            } else {
                [60.0, 70.0, 80.0]
            };
            if face {
                if labels[2] {
                    if EYE.contains_sym(u, v) {
                        c = [70.0, 45.0, 35.0];
                    }
                } else if PUPIL.contains_sym(u, v) {
                    c = [25.0, 25.0, 30.0];
                } else if EYE.contains_sym(u, v) {
                    c = [240.0, 240.0, 235.0];
                }
            }
            if LIPS.contains(u, v) {
                c = [235.0, 180.0, 185.0];
            }
            if labels[0] && GAP.contains(u, v) {
                c = [20.0, 10.0, 10.0];
            }
            if CHIN.contains(u, v) {
                c = if labels[1] {
                    [20.0, 20.0, 70.0]
                } else {
                    [230.0, 225.0, 210.0]
                };
            }
            for ch in c {
                let noisy = ch + tone + rng.random_range(-opts.noise..=opts.noise);
                px.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(n, n, px).expect("size > 0")
}

/// `count` frames with independent Bernoulli labels, fully determined by `seed`.
pub fn synthetic_frames(count: usize, opts: &SynthOptions, seed: u64) -> Vec<(Raster, [bool; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let labels = [0; 3].map(|_| rng.random::<f64>() < opts.presence_probability);
            (synthetic_frame(labels, opts, &mut rng), labels)
        })
        .collect()
}

/// Synthetic frames normalized into a fully annotated [`Dataset`] with
/// frame ids `{prefix}{index:04}`.
pub fn synthetic_dataset(count: usize, opts: &SynthOptions, seed: u64, prefix: &str) -> crate::train::Result<Dataset> {
    let frames = synthetic_frames(count, opts, seed);
    let labels = LabelMatrix {
        frame_ids: (0..count).map(|i| format!("{prefix}{i:04}")).collect(),
        au_ids: SYNTHETIC_AUS.to_vec(),
        values: frames
            .iter()
            .flat_map(|(_, l)| l.map(|b| if b { 1.0 } else { 0.0 }))
            .collect(),
        mask: vec![true; count],
    };
    let rasters: Vec<Raster> = frames.into_iter().map(|(r, _)| r).collect();
    Dataset::from_rasters(&rasters, &labels, &Normalization::default())
}
