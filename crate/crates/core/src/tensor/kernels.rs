//! Slice-level numeric kernels shared by [`Tensor`](super::Tensor) and the graph.

use super::{macs, Real, Result, TensorError};

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    macs::record_matmul((m * k * n) as u64);
    let mut out = vec![T::zero(); m * n];
    matmul_into(&mut out, a, b, m, k, n);
    out
}

/// `out[m×n] = a[m×k] · b[k×n] + bias[n]` (bias repeated over rows).
pub fn linear<T: Real>(a: &[T], b: &[T], bias: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    macs::record_matmul((m * k * n) as u64);
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    matmul_into(&mut out, a, b, m, k, n);
    out
}

fn matmul_into<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F, checked just above.
            unsafe { matmul_into_avx512(out, a, b, m, k, n) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { matmul_into_avx2(out, a, b, m, k, n) };
            return;
        }
    }
    matmul_into_generic(out, a, b, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn matmul_into_avx512<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    matmul_into_generic(out, a, b, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_into_avx2<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    matmul_into_generic(out, a, b, m, k, n);
}

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 8;

/// `out += a·b`, accumulating each element over `p = 0..k` in order.
#[inline(always)]
fn matmul_into_generic<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    let full_cols = n - n % TILE_COLS;
    let mut i = 0;
    while i + TILE_ROWS <= m {
        let a_rows: [&[T]; TILE_ROWS] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        for j in (0..full_cols).step_by(TILE_COLS) {
            let mut acc = [[T::zero(); TILE_COLS]; TILE_ROWS];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + TILE_COLS]);
            }
            for (p, b_full) in b.chunks_exact(n).take(k).enumerate() {
                let brow: &[T; TILE_COLS] = b_full[j..j + TILE_COLS].try_into().expect("tile width");
                for (row, a_row) in acc.iter_mut().zip(&a_rows) {
                    let av = a_row[p];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o = *o + av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + TILE_COLS].copy_from_slice(row);
            }
        }
        if full_cols < n {
            for r in i..i + TILE_ROWS {
                matmul_row_tail(out, a, b, r, k, n, full_cols);
            }
        }
        i += TILE_ROWS;
    }
    for r in i..m {
        matmul_row_tail(out, a, b, r, k, n, 0);
    }
}

#[inline(always)]
fn matmul_row_tail<T: Real>(out: &mut [T], a: &[T], b: &[T], i: usize, k: usize, n: usize, from: usize) {
    let row = &mut out[i * n + from..(i + 1) * n];
    for (&av, b_full) in a[i * k..(i + 1) * k].iter().zip(b.chunks_exact(n)) {
        for (o, &bv) in row.iter_mut().zip(&b_full[from..]) {
            *o = *o + av * bv;
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`.
fn matmul_nt_acc<T: Real>(out: &mut [T], g: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc = acc + gv * bv;
            }
            out[i * k + p] = out[i * k + p] + acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`.
fn matmul_tn_acc<T: Real>(out: &mut [T], a: &[T], g: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

/// Gradients of `a·b` given upstream `g`, accumulated into `ga` / `gb` when present.
pub fn matmul_backward<T: Real>(
    g: &[T],
    a: &[T],
    b: &[T],
    (m, k, n): (usize, usize, usize),
    ga: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(ga) = ga {
        matmul_nt_acc(ga, g, b, m, k, n);
    }
    if let Some(gb) = gb {
        matmul_tn_acc(gb, a, g, m, k, n);
    }
}

/// Batched product over a leading batch axis: `[B×m×k] · [B×k×n]`.
pub fn bmm<T: Real>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    macs::record_bmm((batch * m * k * n) as u64);
    let mut out = vec![T::zero(); batch * m * n];
    for t in 0..batch {
        matmul_into(
            &mut out[t * m * n..(t + 1) * m * n],
            &a[t * m * k..(t + 1) * m * k],
            &b[t * k * n..(t + 1) * k * n],
            m,
            k,
            n,
        );
    }
    out
}

pub fn bmm_backward<T: Real>(
    g: &[T],
    a: &[T],
    b: &[T],
    (batch, m, k, n): (usize, usize, usize, usize),
    mut ga: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    for t in 0..batch {
        let gs = &g[t * m * n..(t + 1) * m * n];
        let a_s = &a[t * m * k..(t + 1) * m * k];
        let b_s = &b[t * k * n..(t + 1) * k * n];
        matmul_backward(
            gs,
            a_s,
            b_s,
            (m, k, n),
            ga.as_deref_mut().map(|x| &mut x[t * m * k..(t + 1) * m * k]),
            gb.as_deref_mut().map(|x| &mut x[t * k * n..(t + 1) * k * n]),
        );
    }
}

pub fn check_permutation(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(TensorError::InvalidArgument {
            op: "permute",
            msg: format!("{} axes given for rank {rank}", axes.len()),
        });
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("{axes:?} is not a permutation"),
            });
        }
        seen[a] = true;
    }
    Ok(())
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `axes[i]`.
pub fn permute<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out_shape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[offset..offset + inner]);
        } else {
            out.extend((0..inner).map(|j| data[offset + j * inner_stride]));
        }
        // advance the multi-index over all but the innermost output axis
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Split `shape` around `axis` into (outer, extent, inner) block sizes.
pub fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Cyclic shift: element at index `i` moves to `(i + shift) mod extent`.
pub fn roll<T: Copy>(data: &[T], shape: &[usize], shift: isize, axis: usize) -> Vec<T> {
    let (outer, n, inner) = axis_blocks(shape, axis);
    let s = shift.rem_euclid(n as isize) as usize;
    if s == 0 {
        return data.to_vec();
    }
    let mut out = data.to_vec();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let dst = (i + s) % n;
            out[base + dst * inner..base + (dst + 1) * inner]
                .copy_from_slice(&data[base + i * inner..base + (i + 1) * inner]);
        }
    }
    out
}

pub fn softmax<T: Real>(data: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = axis_blocks(shape, axis);
    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| o * n * inner + i * inner + j;
            let mut max = T::neg_infinity();
            for i in 0..n {
                max = max.max(data[at(i)]);
            }
            let mut sum = T::zero();
            for i in 0..n {
                let e = (data[at(i)] - max).exp();
                out[at(i)] = e;
                sum = sum + e;
            }
            for i in 0..n {
                out[at(i)] = out[at(i)] / sum;
            }
        }
    }
    out
}

/// Softmax VJP using the forward output `y`.
pub fn softmax_backward<T: Real>(g: &[T], y: &[T], shape: &[usize], axis: usize, gx: &mut [T]) {
    let (outer, n, inner) = axis_blocks(shape, axis);
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| o * n * inner + i * inner + j;
            let dot: T = (0..n).map(|i| g[at(i)] * y[at(i)]).sum();
            for i in 0..n {
                gx[at(i)] = gx[at(i)] + y[at(i)] * (g[at(i)] - dot);
            }
        }
    }
}

/// Normalized values and per-row inverse standard deviation, last axis.
pub fn layer_norm_stats<T: Real>(x: &[T], width: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / width;
    let wf = T::from_f64(width as f64);
    let eps = T::from_f64(eps);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<T>() / wf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wf;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, &v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv_std)
}

pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_derivative<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn narrow<T: Copy>(data: &[T], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<T> {
    let (outer, n, inner) = axis_blocks(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    out
}

pub fn mean_axis<T: Real>(data: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, n, inner) = axis_blocks(shape, axis);
    let nf = T::from_f64(n as f64);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..n {
            let src = &data[o * n * inner + i * inner..o * n * inner + (i + 1) * inner];
            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    for v in &mut out {
        *v = *v / nf;
    }
    out
}
