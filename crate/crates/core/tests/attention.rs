mod common;

use common::random_tensor;
use icuau_core::model::attention::{window_attention, window_partition, window_reverse, AttentionVars};
use icuau_core::model::{build_shift_mask, relative_position_index, AttentionMode, Model, ModelConfig, ParameterSet};
use icuau_core::tensor::{Graph, Tensor};

struct Weights {
    qkv_w: Tensor,
    qkv_b: Tensor,
    proj_w: Tensor,
    proj_b: Tensor,
    table: Tensor,
}

fn weights(dim: usize, heads: usize, window: usize, seed: u64) -> Weights {
    let span = 2 * window - 1;
    Weights {
        qkv_w: random_tensor(&[dim, 3 * dim], seed),
        qkv_b: random_tensor(&[3 * dim], seed + 1),
        proj_w: random_tensor(&[dim, dim], seed + 2),
        proj_b: random_tensor(&[dim], seed + 3),
        table: random_tensor(&[span * span, heads], seed + 4),
    }
}

/// Shifted-window attention over a `[1, H, W, C]` grid, composed from the
/// public building blocks exactly as a shifted block does it.
fn shifted_attention(x: &Tensor, w: &Weights, heads: usize, window: usize, shift: usize) -> Tensor {
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let rolled = x
        .roll(-(shift as isize), 1)
        .unwrap()
        .roll(-(shift as isize), 2)
        .unwrap();
    let mut g = Graph::<f64>::new();
    let windows = g.constant(window_partition(&rolled, window).unwrap());
    let vars = AttentionVars {
        qkv_weight: g.constant(w.qkv_w.clone()),
        qkv_bias: g.constant(w.qkv_b.clone()),
        proj_weight: g.constant(w.proj_w.clone()),
        proj_bias: g.constant(w.proj_b.clone()),
        bias_table: Some(g.constant(w.table.clone())),
    };
    let mask = build_shift_mask(h, wd, window, shift).unwrap().expand::<f64>(1, heads);
    let index = relative_position_index(window);
    let (out, _) = window_attention(&mut g, windows, &vars, heads, Some(&index), Some(&mask)).unwrap();
    let grid = window_reverse(g.value(out), window, h, wd).unwrap();
    grid.roll(shift as isize, 1).unwrap().roll(shift as isize, 2).unwrap()
}

/// Direct per-token evaluation: a query attends to the keys that share its
/// shifted window and are reachable without wrapping around the image edge.
fn brute_force(x: &Tensor, w: &Weights, heads: usize, window: usize, shift: usize) -> Tensor {
    let (h, wd, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let d = c / heads;
    let span = 2 * window - 1;
    let token = |y: usize, xx: usize| &x.data()[(y * wd + xx) * c..(y * wd + xx + 1) * c];
    let linear = |v: &[f64], wt: &Tensor, b: &Tensor, col0: usize, cols: usize| -> Vec<f64> {
        let stride = wt.shape()[1];
        (0..cols)
            .map(|j| {
                b.data()[col0 + j]
                    + (0..v.len())
                        .map(|i| v[i] * wt.data()[i * stride + col0 + j])
                        .sum::<f64>()
            })
            .collect()
    };
    let shifted = |y: usize, n: usize| (y + n - shift) % n;
    let mut out = vec![0.0; h * wd * c];
    for qy in 0..h {
        for qx in 0..wd {
            let (sy, sx) = (shifted(qy, h), shifted(qx, wd));
            let keys: Vec<(usize, usize)> = (0..h)
                .flat_map(|ky| (0..wd).map(move |kx| (ky, kx)))
                .filter(|&(ky, kx)| {
                    let (ty, tx) = (shifted(ky, h), shifted(kx, wd));
                    ty / window == sy / window
                        && tx / window == sx / window
                        && ky as isize - qy as isize == ty as isize - sy as isize
                        && kx as isize - qx as isize == tx as isize - sx as isize
                })
                .collect();
            let mut concat = vec![0.0; c];
            for hd in 0..heads {
                let q = linear(token(qy, qx), &w.qkv_w, &w.qkv_b, hd * d, d);
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|&(ky, kx)| {
                        let k = linear(token(ky, kx), &w.qkv_w, &w.qkv_b, c + hd * d, d);
                        let (ty, tx) = (shifted(ky, h), shifted(kx, wd));
                        let dy = sy % window + window - 1 - ty % window;
                        let dx = sx % window + window - 1 - tx % window;
                        let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
                        dot / (d as f64).sqrt() + w.table.data()[(dy * span + dx) * heads + hd]
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                for (e, &(ky, kx)) in exp.iter().zip(&keys) {
                    let v = linear(token(ky, kx), &w.qkv_w, &w.qkv_b, 2 * c + hd * d, d);
                    for j in 0..d {
                        concat[hd * d + j] += e / z * v[j];
                    }
                }
            }
            let o = linear(&concat, &w.proj_w, &w.proj_b, 0, c);
            out[(qy * wd + qx) * c..(qy * wd + qx + 1) * c].copy_from_slice(&o);
        }
    }
    Tensor::new(vec![1, h, wd, c], out).unwrap()
}

#[test]
fn shifted_masked_attention_matches_region_brute_force() {
    let x = random_tensor(&[1, 8, 8, 8], 21);
    let w = weights(8, 2, 4, 30);
    let fast = shifted_attention(&x, &w, 2, 4, 2);
    let slow = brute_force(&x, &w, 2, 4, 2);
    let worst = fast
        .data()
        .iter()
        .zip(slow.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn unshifted_brute_force_agrees_too() {
    let x = random_tensor(&[1, 8, 8, 8], 22);
    let w = weights(8, 2, 4, 40);
    let fast = shifted_attention(&x, &w, 2, 4, 0);
    let slow = brute_force(&x, &w, 2, 4, 0);
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

/// Parameters for a windowed config with `window ≥ grid`, copied into the
/// matching full-attention config with zero position embedding.
pub fn equivalent_pair(seed: u64) -> (Model, ParameterSet, Model, ParameterSet) {
    let mut wcfg = ModelConfig::toy(3);
    wcfg.window_size = 16;
    wcfg.shift_size = 0;
    let fcfg = ModelConfig::toy(3).with_mode(AttentionMode::Full);
    let mut wp = ParameterSet::init(&wcfg, seed, None).unwrap();
    let mut fp = ParameterSet::init(&fcfg, seed + 1, None).unwrap();
    let paths: Vec<String> = wp.paths().map(String::from).collect();
    for path in paths {
        if path.ends_with("relative_position_bias_table") {
            let shape = wp.get(&path).unwrap().shape().to_vec();
            wp.insert(path, Tensor::zeros(shape));
        } else {
            // nonzero biases and gains so every path is exercised
            let t = wp.get(&path).unwrap();
            let noisy = random_tensor(t.shape(), path.len() as u64 + seed);
            let t = Tensor::new(
                t.shape().to_vec(),
                t.data().iter().zip(noisy.data()).map(|(a, b)| a + 0.1 * b).collect(),
            )
            .unwrap();
            wp.insert(path.clone(), t.clone());
            fp.insert(path, t);
        }
    }
    let pos = fp.get("pos_embed").unwrap().shape().to_vec();
    fp.insert("pos_embed", Tensor::zeros(pos));
    (Model::new(wcfg).unwrap(), wp, Model::new(fcfg).unwrap(), fp)
}

#[test]
fn window_covering_grid_equals_full_attention() {
    let (wm, wp, fm, fp) = equivalent_pair(7);
    assert!(wm.stages().iter().all(|s| s.window == s.grid && s.shift == 0));
    let x = random_tensor(&[2, 3, 32, 32], 8);
    let a = wm.logits(&wp, &x).unwrap();
    let b = fm.logits(&fp, &x).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }
}

#[test]
fn single_window_attention_equals_unwindowed() {
    let x = random_tensor(&[1, 4, 4, 8], 3);
    let mut w = weights(8, 2, 4, 50);
    w.table = Tensor::zeros([49, 2]);
    let windowed = shifted_attention(&x, &w, 2, 4, 0);
    let mut g = Graph::<f64>::new();
    let tokens = g.constant(x.reshape([1, 16, 8]).unwrap());
    let vars = AttentionVars {
        qkv_weight: g.constant(w.qkv_w.clone()),
        qkv_bias: g.constant(w.qkv_b.clone()),
        proj_weight: g.constant(w.proj_w.clone()),
        proj_bias: g.constant(w.proj_b.clone()),
        bias_table: None,
    };
    let (out, _) = window_attention(&mut g, tokens, &vars, 2, None, None).unwrap();
    for (p, q) in windowed.data().iter().zip(g.value(out).data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn zero_mask_is_neutral() {
    // a shift of zero yields an all-zero mask that must not change the output
    let mask = build_shift_mask(8, 8, 4, 0).unwrap();
    assert!(mask.is_all_zero());
}
