//! Face alignment: similarity fit to a canonical template, crop warping,
//! pixel normalization and a per-frame transform cache.

mod cache;
mod landmarks;
mod raster;
mod transform;

use thiserror::Error;

pub use cache::{cached_transform, AlignmentCache, CacheStats};
pub use landmarks::{
    mirror_index, read_landmarks_csv, write_landmarks_csv, CanonicalTemplate, LandmarkSet, Point, NUM_LANDMARKS,
    TEMPLATE_SIZE,
};
pub use raster::{hflip, normalize, warp_crop, Normalization, Raster};
pub use transform::{alignment_rmse, estimate_similarity, fit_similarity, SimilarityTransform};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid landmarks: {0}")]
    Landmarks(String),
    #[error("degenerate landmark configuration")]
    Degenerate,
    #[error("matrix is not a similarity transform")]
    NotSimilarity,
    #[error("output has zero area")]
    ZeroArea,
    #[error("normalization std must be positive")]
    ZeroStd,
    #[error("raster: {0}")]
    Raster(String),
    #[error("alignment cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, AlignError>;

/// Estimate (through `cache`), warp and normalize one frame.
pub fn align_frame(
    image: &Raster,
    landmarks: &LandmarkSet,
    template: &CanonicalTemplate,
    cache: &AlignmentCache,
) -> Result<Raster> {
    let t = cached_transform(cache, landmarks, template)?;
    warp_crop(image, &t, template.size())
}
