//! Window tiling, shift masks, relative position bias and multi-head attention.

use serde::Serialize;

use super::{AttentionMode, ModelConfig, ModelError, Result};
use crate::tensor::{Graph, Real, Tensor, TensorError, Var};

/// Split a `[B, H, W, C]` grid into `[B·(H/M)·(W/M), M², C]` row-major windows.
pub fn window_partition<T: Real>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let [b, h, w, c] = grid_dims(x.shape(), window)?;
    let t = x.reshape([b, h / window, window, w / window, window, c])?;
    let t = t.permute(&[0, 1, 3, 2, 4, 5])?;
    Ok(t.reshape([b * (h / window) * (w / window), window * window, c])?)
}

/// Inverse of [`window_partition`] for a grid of `h × w`.
pub fn window_reverse<T: Real>(windows: &Tensor<T>, window: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = windows.shape();
    if s.len() != 3 || s[1] != window * window || !h.is_multiple_of(window) || !w.is_multiple_of(window) {
        return Err(ModelError::Config(format!("cannot reverse windows of shape {s:?}")));
    }
    let per_image = (h / window) * (w / window);
    let b = s[0] / per_image;
    let c = s[2];
    let t = windows.reshape([b, h / window, w / window, window, window, c])?;
    let t = t.permute(&[0, 1, 3, 2, 4, 5])?;
    Ok(t.reshape([b, h, w, c])?)
}

pub(crate) fn partition_var<T: Real>(g: &mut Graph<T>, x: Var, window: usize) -> Result<Var> {
    let [b, h, w, c] = grid_dims(g.shape(x), window)?;
    let t = g.reshape(x, &[b, h / window, window, w / window, window, c])?;
    let t = g.permute(t, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(t, &[b * (h / window) * (w / window), window * window, c])?)
}

pub(crate) fn reverse_var<T: Real>(
    g: &mut Graph<T>,
    windows: Var,
    window: usize,
    (b, h, w): (usize, usize, usize),
) -> Result<Var> {
    let c = g.shape(windows)[2];
    let t = g.reshape(windows, &[b, h / window, w / window, window, window, c])?;
    let t = g.permute(t, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(t, &[b, h, w, c])?)
}

fn grid_dims(shape: &[usize], window: usize) -> Result<[usize; 4]> {
    match *shape {
        [b, h, w, c] if window > 0 && h % window == 0 && w % window == 0 => Ok([b, h, w, c]),
        _ => Err(ModelError::Config(format!(
            "grid {shape:?} cannot be tiled by {window}×{window} windows"
        ))),
    }
}

/// Row index into a `(2M−1)²`-row bias table for every ordered token pair of a window.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / window, i % window);
        for j in 0..n {
            let (yj, xj) = (j / window, j % window);
            let dy = yi + window - 1 - yj;
            let dx = xi + window - 1 - xj;
            idx.push(dy * span + dx);
        }
    }
    idx
}

/// Additive attention mask per window: 0 for same-region pairs, −∞ otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    num_windows: usize,
    tokens: usize,
    data: Vec<f64>,
}

impl AttentionMask {
    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn get(&self, window: usize, i: usize, j: usize) -> f64 {
        self.data[(window * self.tokens + i) * self.tokens + j]
    }

    pub fn window(&self, w: usize) -> &[f64] {
        let n2 = self.tokens * self.tokens;
        &self.data[w * n2..(w + 1) * n2]
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn masked_pairs(&self, window: usize) -> usize {
        self.window(window).iter().filter(|v| v.is_infinite()).count()
    }

    /// Broadcast to `[batch·windows, heads, N, N]` to match attention logits.
    pub fn expand<T: Real>(&self, batch: usize, heads: usize) -> Tensor<T> {
        let n2 = self.tokens * self.tokens;
        let mut data = Vec::with_capacity(batch * self.num_windows * heads * n2);
        for _ in 0..batch {
            for w in 0..self.num_windows {
                let win: Vec<T> = self.window(w).iter().map(|&v| T::from_f64(v)).collect();
                for _ in 0..heads {
                    data.extend_from_slice(&win);
                }
            }
        }
        Tensor::new([batch * self.num_windows, heads, self.tokens, self.tokens], data)
            .expect("mask dimensions are consistent")
    }
}

/// Mask for attention over windows of a grid cyclically shifted by `(−s, −s)`.
///
/// Each axis of the shifted grid is cut into `[0, H−M)`, `[H−M, H−s)` and
/// `[H−s, H)`; tokens in different cells came from non-adjacent parts of the
/// unshifted grid and must not attend to each other.
pub fn build_shift_mask(h: usize, w: usize, window: usize, shift: usize) -> Result<AttentionMask> {
    if shift >= window || !h.is_multiple_of(window) || !w.is_multiple_of(window) {
        return Err(ModelError::Config(format!(
            "shift mask needs 0 <= s < M and a divisible grid (h={h}, w={w}, M={window}, s={shift})"
        )));
    }
    let band = |i: usize, n: usize| -> usize {
        if shift == 0 || i < n - window {
            0
        } else if i < n - shift {
            1
        } else {
            2
        }
    };
    let mut label = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            label[y * w + x] = band(y, h) * 3 + band(x, w);
        }
    }
    let label = Tensor::<f64>::new([1, h, w, 1], label.iter().map(|&l| l as f64).collect())?;
    let windows = window_partition(&label, window)?;
    let n = window * window;
    let num_windows = windows.shape()[0];
    let mut data = Vec::with_capacity(num_windows * n * n);
    for win in windows.data().chunks(n) {
        for i in 0..n {
            for j in 0..n {
                data.push(if win[i] == win[j] { 0.0 } else { f64::NEG_INFINITY });
            }
        }
    }
    Ok(AttentionMask {
        num_windows,
        tokens: n,
        data,
    })
}

/// Graph handles of one attention layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub qkv_weight: Var,
    pub qkv_bias: Var,
    pub proj_weight: Var,
    pub proj_bias: Var,
    /// `[(2M−1)², heads]` table; absent in full-attention mode.
    pub bias_table: Option<Var>,
}

/// Multi-head self-attention within each window of `x: [windows, N, C]`.
///
/// Computes `softmax(QKᵀ/√d + bias + mask)·V` per head followed by the output
/// projection. Returns the projected tokens and the attention weights
/// `[windows, heads, N, N]`.
pub fn window_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    vars: &AttentionVars,
    heads: usize,
    rel_index: Option<&[usize]>,
    mask: Option<&Tensor<T>>,
) -> Result<(Var, Var)> {
    let (bw, n, c) = match *g.shape(x) {
        [bw, n, c] => (bw, n, c),
        ref s => return Err(ModelError::Config(format!("attention input must be rank 3, got {s:?}"))),
    };
    let d = c / heads;
    let flat = g.reshape(x, &[bw * n, c])?;
    let qkv = g.linear(flat, vars.qkv_weight, vars.qkv_bias)?;
    let qkv = g.reshape(qkv, &[bw, n, 3, heads, d])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let part = |g: &mut Graph<T>, i: usize| -> Result<Var> {
        let p = g.narrow(qkv, 0, i, 1)?;
        Ok(g.reshape(p, &[bw * heads, n, d])?)
    };
    let q = part(g, 0)?;
    let k = part(g, 1)?;
    let v = part(g, 2)?;
    let q = g.scale(q, 1.0 / (d as f64).sqrt())?;
    let kt = g.permute(k, &[0, 2, 1])?;
    let logits = g.bmm(q, kt)?;
    let mut logits = g.reshape(logits, &[bw, heads, n, n])?;
    if let (Some(table), Some(index)) = (vars.bias_table, rel_index) {
        let bias = g.gather_rows(table, index)?;
        let bias = g.permute(bias, &[1, 0])?;
        let bias = g.reshape(bias, &[heads, n, n])?;
        logits = g.add_suffix(logits, bias)?;
    }
    if let Some(mask) = mask {
        let m = g.constant(mask.clone());
        logits = g.add(logits, m)?;
    }
    let attn = g.softmax(logits, 3).map_err(|e| match e {
        TensorError::NonFinite { .. } => ModelError::NanAttention,
        e => e.into(),
    })?;
    let a = g.reshape(attn, &[bw * heads, n, n])?;
    let out = g.bmm(a, v)?;
    let out = g.reshape(out, &[bw, heads, n, d])?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    let out = g.reshape(out, &[bw * n, c])?;
    let out = g.linear(out, vars.proj_weight, vars.proj_bias)?;
    let out = g.reshape(out, &[bw, n, c])?;
    Ok((out, attn))
}

/// Attention multiply-accumulate counts for one stage of a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageMacs {
    pub stage: usize,
    pub tokens: usize,
    pub dim: usize,
    pub window: usize,
    pub depth: usize,
    /// `QKᵀ` MACs per block.
    pub qk: u64,
    /// `attn·V` MACs per block.
    pub av: u64,
}

impl StageMacs {
    pub fn total(&self) -> u64 {
        (self.qk + self.av) * self.depth as u64
    }
}

/// Closed-form score-product MACs for `tokens` tokens of width `dim`:
/// `N²·d` with global attention, `N·M²·d` with `M×M` windows.
pub fn qk_macs(tokens: usize, dim: usize, window_tokens: Option<usize>) -> u64 {
    let n = tokens as u64;
    let d = dim as u64;
    match window_tokens {
        None => n * n * d,
        Some(m2) => n * m2 as u64 * d,
    }
}

pub fn attention_macs(cfg: &ModelConfig) -> Vec<StageMacs> {
    cfg.stages()
        .into_iter()
        .enumerate()
        .map(|(stage, st)| {
            let tokens = st.grid * st.grid;
            let window_tokens = match cfg.attention_mode {
                AttentionMode::Full => None,
                AttentionMode::Windowed => Some(st.window * st.window),
            };
            let qk = qk_macs(tokens, st.dim, window_tokens);
            StageMacs {
                stage,
                tokens,
                dim: st.dim,
                window: st.window,
                depth: st.depth,
                qk,
                // attn·V has the same extents as QKᵀ.
                av: qk,
            }
        })
        .collect()
}
