//! Hierarchical windowed-attention classifier for multi-label AU detection.
//!
//! The network embeds non-overlapping patches, runs stages of transformer
//! blocks whose self-attention is restricted to `M×M` token windows (odd
//! blocks cyclically shift the grid by `s` and mask cross-region pairs),
//! halves the grid between stages by merging 2×2 neighbours, then pools and
//! projects to one logit per AU. `AttentionMode::Full` swaps the windows for
//! global attention with learned absolute position embeddings.

pub mod attention;
pub mod checkpoint;
mod forward;
pub mod gradcheck;
mod params;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::TensorError;

pub use attention::{attention_macs, build_shift_mask, relative_position_index, AttentionMask, StageMacs};
pub use forward::{Activation, Model, Step};
pub use params::{swap_head, ParamVars, ParameterSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {path} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("incompatible backbone: {0}")]
    IncompatibleBackbone(String),
    #[error("input shape {found:?} does not match config (expected [B, {channels}, {size}, {size}])")]
    Input {
        found: Vec<usize>,
        channels: usize,
        size: usize,
    },
    #[error("attention produced NaN (overflow)")]
    NanAttention,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Windowed,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    #[serde(default = "default_channels")]
    pub in_channels: usize,
    pub patch_size: usize,
    pub depths: Vec<usize>,
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    pub window_size: usize,
    pub shift_size: usize,
    pub mlp_ratio: usize,
    pub num_aus: usize,
    pub attention_mode: AttentionMode,
}

fn default_channels() -> usize {
    3
}

/// Window geometry actually used by one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageGeometry {
    pub grid: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Window side; equals `grid` in full mode or when the grid is no larger
    /// than the configured window.
    pub window: usize,
    pub shift: usize,
}

impl ModelConfig {
    /// 32×32 RGB, patch 2, depths [2,2], dims [16,32], heads [2,4], M=4, s=2.
    pub fn toy(num_aus: usize) -> Self {
        Self {
            input_size: 32,
            in_channels: 3,
            patch_size: 2,
            depths: vec![2, 2],
            dims: vec![16, 32],
            heads: vec![2, 4],
            window_size: 4,
            shift_size: 2,
            mlp_ratio: 4,
            num_aus,
            attention_mode: AttentionMode::Windowed,
        }
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.attention_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        let n = self.depths.len();
        if n == 0 || self.dims.len() != n || self.heads.len() != n {
            return err("depths, dims and heads must be non-empty and equally long".into());
        }
        if self.patch_size == 0 || self.input_size == 0 || !self.input_size.is_multiple_of(self.patch_size) {
            return err(format!(
                "input size {} not divisible by patch size {}",
                self.input_size, self.patch_size
            ));
        }
        if self.in_channels == 0 || self.num_aus == 0 || self.mlp_ratio == 0 {
            return err("channels, num_aus and mlp_ratio must be positive".into());
        }
        if self.window_size == 0 || self.shift_size >= self.window_size {
            return err(format!(
                "shift {} must satisfy 0 <= s < window {}",
                self.shift_size, self.window_size
            ));
        }
        for i in 0..n {
            if self.depths[i] == 0 || self.heads[i] == 0 || !self.dims[i].is_multiple_of(self.heads[i]) {
                return err(format!(
                    "stage {i}: dim {} not divisible by heads {}",
                    self.dims[i], self.heads[i]
                ));
            }
            if i + 1 < n && self.dims[i + 1] != 2 * self.dims[i] {
                return err(format!("stage {}: dim must double after patch merging", i + 1));
            }
        }
        let mut grid = self.input_size / self.patch_size;
        for i in 0..n {
            if i > 0 {
                if !grid.is_multiple_of(2) {
                    return err(format!("stage {i}: odd grid {grid} cannot be merged"));
                }
                grid /= 2;
            }
            if self.attention_mode == AttentionMode::Windowed && grid > self.window_size && !grid.is_multiple_of(self.window_size)
            {
                return err(format!(
                    "stage {i}: grid {grid} not divisible by window {}",
                    self.window_size
                ));
            }
        }
        Ok(())
    }

    pub fn token_grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn stages(&self) -> Vec<StageGeometry> {
        let mut grid = self.token_grid();
        (0..self.depths.len())
            .map(|i| {
                if i > 0 {
                    grid /= 2;
                }
                let (window, shift) = match self.attention_mode {
                    AttentionMode::Full => (grid, 0),
                    AttentionMode::Windowed if grid <= self.window_size => (grid, 0),
                    AttentionMode::Windowed => (self.window_size, self.shift_size),
                };
                StageGeometry {
                    grid,
                    dim: self.dims[i],
                    heads: self.heads[i],
                    depth: self.depths[i],
                    window,
                    shift,
                }
            })
            .collect()
    }

    pub fn final_dim(&self) -> usize {
        *self.dims.last().expect("validated config has stages")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}
