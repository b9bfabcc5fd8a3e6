use std::path::Path;

use super::transform::SimilarityTransform;
use super::{AlignError, Result};
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(AlignError::ZeroArea);
        }
        if pixels.len() != width * height * 3 {
            return Err(AlignError::Raster(format!(
                "{} bytes for a {width}×{height} RGB image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decodes PNG or binary PPM (format detected from content).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::decode(&bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut out),
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    /// Binary `P6` encoding.
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Writes PNG, or PPM when the extension is `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ppm") => self.encode_ppm(),
            _ => self.encode_png()?,
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Per-channel normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// ImageNet statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Samples the source image at `T⁻¹(u, v)` for every output pixel `(u, v)`
/// of an `out_size × out_size` crop. Neighbours outside the source read as 0.
pub fn warp_crop(image: &Raster, t: &SimilarityTransform, out_size: usize) -> Result<Raster> {
    if out_size == 0 {
        return Err(AlignError::ZeroArea);
    }
    let inv = t.inverse();
    let (w, h) = (image.width as isize, image.height as isize);
    let read = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            image.pixels[((y * w + x) * 3) as usize + c] as f64
        }
    };
    let mut out = vec![0u8; out_size * out_size * 3];
    for v in 0..out_size {
        for u in 0..out_size {
            let [sx, sy] = inv.apply([u as f64, v as f64]);
            if !(sx > -1.0 && sy > -1.0 && sx < w as f64 && sy < h as f64) {
                continue;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let top = read(x0, y0, c) * (1.0 - fx) + read(x0 + 1, y0, c) * fx;
                let bottom = read(x0, y0 + 1, c) * (1.0 - fx) + read(x0 + 1, y0 + 1, c) * fx;
                let val = top * (1.0 - fy) + bottom * fy;
                out[(v * out_size + u) * 3 + c] = val.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Raster::new(out_size, out_size, out)
}

/// `(pixel/255 − mean) / std` as a `[3, H, W]` tensor.
pub fn normalize(image: &Raster, norm: &Normalization) -> Result<Tensor> {
    if norm.std.iter().any(|&s| !(s > 0.0)) {
        return Err(AlignError::ZeroStd);
    }
    let (w, h) = (image.width, image.height);
    let mut data = vec![0.0; 3 * w * h];
    for c in 0..3 {
        for i in 0..w * h {
            data[c * w * h + i] = (image.pixels[i * 3 + c] as f64 / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

/// Mirrors columns. AU labels pass through unchanged: every modelled AU is bilateral.
pub fn hflip<L: Clone>(image: &Raster, labels: &[L]) -> (Raster, Vec<L>) {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            out.set(image.width - 1 - x, y, image.get(x, y));
        }
    }
    (out, labels.to_vec())
}
