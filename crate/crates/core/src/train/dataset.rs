use super::{Result, TrainError};
use crate::align::{normalize, Normalization, Raster};
use crate::au::AuId;
use crate::data::LabelMatrix;
use crate::tensor::Tensor;

/// Normalized images `[N, C, H, W]` with `[N, A]` presence labels and a mask
/// of annotated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frame_ids: Vec<String>,
    images: Tensor,
    labels: Tensor,
    mask: Vec<bool>,
    au_ids: Vec<AuId>,
}

impl Dataset {
    pub fn new(
        frame_ids: Vec<String>,
        images: Tensor,
        labels: Tensor,
        mask: Vec<bool>,
        au_ids: Vec<AuId>,
    ) -> Result<Self> {
        let n = frame_ids.len();
        let bad = |m: String| Err(TrainError::Dataset(m));
        if images.rank() != 4 || images.shape()[0] != n {
            return bad(format!("images {:?} for {n} frames", images.shape()));
        }
        if labels.shape() != [n, au_ids.len()] {
            return bad(format!("labels {:?}, expected [{n}, {}]", labels.shape(), au_ids.len()));
        }
        if mask.len() != n {
            return bad(format!("mask of {} for {n} frames", mask.len()));
        }
        if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return bad("labels must be 0 or 1".into());
        }
        Ok(Self {
            frame_ids,
            images,
            labels,
            mask,
            au_ids,
        })
    }

    /// Normalizes equally sized crops and pairs them with queried labels
    /// (rows must be in the same frame order).
    pub fn from_rasters(rasters: &[Raster], labels: &LabelMatrix, norm: &Normalization) -> Result<Self> {
        if rasters.len() != labels.frame_ids.len() {
            return Err(TrainError::Dataset(format!(
                "{} images for {} label rows",
                rasters.len(),
                labels.frame_ids.len()
            )));
        }
        let mut data = Vec::new();
        let mut shape = None;
        for r in rasters {
            let t = normalize(r, norm).map_err(|e| TrainError::Dataset(e.to_string()))?;
            match &shape {
                None => shape = Some(t.shape().to_vec()),
                Some(s) if s.as_slice() != t.shape() => {
                    return Err(TrainError::Dataset(format!("image {:?} differs from {s:?}", t.shape())))
                }
                _ => {}
            }
            data.extend_from_slice(t.data());
        }
        let mut full = vec![rasters.len()];
        full.extend(shape.unwrap_or_else(|| vec![3, 0, 0]));
        Self::new(
            labels.frame_ids.clone(),
            Tensor::new(full, data)?,
            labels.to_tensor(),
            labels.mask.clone(),
            labels.au_ids.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn au_ids(&self) -> &[AuId] {
        &self.au_ids
    }

    pub fn annotated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Gathers rows `idx`, mirroring the images whose `flips` entry is set.
    pub fn select(&self, idx: &[usize], flips: Option<&[bool]>) -> Result<(Tensor, Tensor)> {
        let per_image = self.images.len() / self.len().max(1);
        let a = self.au_ids.len();
        let shape = self.images.shape();
        let (h, w) = (shape[2], shape[3]);
        let mut images = Vec::with_capacity(idx.len() * per_image);
        let mut labels = Vec::with_capacity(idx.len() * a);
        for (k, &i) in idx.iter().enumerate() {
            if i >= self.len() {
                return Err(TrainError::Dataset(format!("row {i} out of range")));
            }
            let src = &self.images.data()[i * per_image..(i + 1) * per_image];
            if flips.is_some_and(|f| f[k]) {
                for row in src.chunks(w) {
                    images.extend(row.iter().rev());
                }
            } else {
                images.extend_from_slice(src);
            }
            labels.extend_from_slice(&self.labels.data()[i * a..(i + 1) * a]);
        }
        let mut img_shape = shape.to_vec();
        img_shape[0] = idx.len();
        debug_assert_eq!(images.len(), idx.len() * shape[1] * h * w);
        Ok((
            Tensor::new(img_shape, images)?,
            Tensor::new(vec![idx.len(), a], labels)?,
        ))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let (images, labels) = self.select(idx, None)?;
        Self::new(
            idx.iter().map(|&i| self.frame_ids[i].clone()).collect(),
            images,
            labels,
            idx.iter().map(|&i| self.mask[i]).collect(),
            self.au_ids.clone(),
        )
    }
}

/// Mirrors `[B, C, H, W]` images along the width axis.
pub fn flip_images(images: &Tensor) -> Tensor {
    let w = *images.shape().last().expect("rank-4 images");
    let data = images.data().chunks(w).flat_map(|r| r.iter().rev().copied()).collect();
    Tensor::new(images.shape().to_vec(), data).expect("same shape")
}
