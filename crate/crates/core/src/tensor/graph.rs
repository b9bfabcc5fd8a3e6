use super::{check_axis, kernels, Real, Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        dims: (usize, usize, usize),
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
        dims: (usize, usize, usize),
    },
    Bmm {
        a: usize,
        b: usize,
        dims: (usize, usize, usize, usize),
    },
    Add {
        a: usize,
        b: usize,
    },
    /// `b` spans the trailing axes of `a` and is repeated over the leading ones.
    AddSuffix {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Reshape {
        a: usize,
    },
    Permute {
        a: usize,
        axes: Vec<usize>,
    },
    Roll {
        a: usize,
        shift: isize,
        axis: usize,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Narrow {
        a: usize,
        axis: usize,
        start: usize,
    },
    MeanAxis {
        a: usize,
        axis: usize,
    },
    Sum {
        a: usize,
    },
    GatherRows {
        table: usize,
        index: Vec<usize>,
    },
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
        pos_weight: Option<Vec<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Eagerly evaluated computation tape.
///
/// Nodes are appended in evaluation order, so every parent id precedes its
/// children and reverse insertion order is a valid topological order.
#[derive(Debug)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the loss with respect to every leaf that required them.
#[derive(Debug, Clone)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Mutable value of a leaf, or `None` for computed nodes.
    pub fn leaf_mut(&mut self, v: Var) -> Option<&mut Tensor<T>> {
        let node = self.nodes.get_mut(v.0)?;
        matches!(node.op, Op::Leaf).then_some(&mut node.value)
    }

    /// Drops every node recorded after the first `len`; vars pointing past
    /// `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Result<Var> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if !matches!(name, "reshape" | "permute" | "roll" | "narrow") && has_nan(value.data()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let dims = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.val(a).data(), self.val(b).data(), dims.0, dims.1, dims.2);
        let value = Tensor::new(vec![dims.0, dims.2], data)?;
        self.push("matmul", value, Op::MatMul { a: a.0, b: b.0, dims }, &[a.0, b.0])
    }

    /// Affine map `x·w + b` for `x [m×k]`, `w [k×n]`, `b [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(mismatch("linear", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(mismatch("linear", sw, sb));
        }
        let dims = (sx[0], sx[1], sw[1]);
        let data = kernels::linear(
            self.val(x).data(),
            self.val(w).data(),
            self.val(b).data(),
            dims.0,
            dims.1,
            dims.2,
        );
        let value = Tensor::new(vec![dims.0, dims.2], data)?;
        self.push(
            "linear",
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
                dims,
            },
            &[x.0, w.0, b.0],
        )
    }

    /// Batched matrix product over the leading axis: `[B×m×k] · [B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", sa, sb));
        }
        let dims = (sa[0], sa[1], sa[2], sb[2]);
        let data = kernels::bmm(self.val(a).data(), self.val(b).data(), dims.0, dims.1, dims.2, dims.3);
        let value = Tensor::new(vec![dims.0, dims.1, dims.3], data)?;
        self.push("bmm", value, Op::Bmm { a: a.0, b: b.0, dims }, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.val(a).data(), self.val(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("add", value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Adds `b` whose shape equals the trailing axes of `a` (bias broadcast).
    pub fn add_suffix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add_suffix", sa, sb));
        }
        let bd = self.val(b).data();
        let width = bd.len();
        let mut data = self.val(a).data().to_vec();
        for row in data.chunks_exact_mut(width) {
            for (x, &y) in row.iter_mut().zip(bd) {
                *x = *x + y;
            }
        }
        let value = Tensor::new(sa.to_vec(), data)?;
        self.push("add_suffix", value, Op::AddSuffix { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.val(a).data(), self.val(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let factor = T::from_f64(factor);
        let value = self.val(a).map(|x| x * factor);
        self.push("scale", value, Op::Scale { a: a.0, factor }, &[a.0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(a).reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { a: a.0 }, &[a.0])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = self.val(a).permute(axes)?;
        self.push(
            "permute",
            value,
            Op::Permute {
                a: a.0,
                axes: axes.to_vec(),
            },
            &[a.0],
        )
    }

    pub fn roll(&mut self, a: Var, shift: isize, axis: usize) -> Result<Var> {
        let value = self.val(a).roll(shift, axis)?;
        self.push("roll", value, Op::Roll { a: a.0, shift, axis }, &[a.0])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = self.val(a).softmax(axis)?;
        self.push("softmax", value, Op::Softmax { a: a.0, axis }, &[a.0])
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` of that width.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let width = *sx.last().expect("tensors have rank >= 1");
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return Err(mismatch("layer_norm", sx, self.shape(gamma)));
        }
        let (xhat, inv_std) = kernels::layer_norm_stats(self.val(x).data(), width, eps);
        let g = self.val(gamma).data();
        let b = self.val(beta).data();
        let data: Vec<T> = xhat
            .chunks(width)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).map(kernels::gelu);
        self.push("gelu", value, Op::Gelu { a: a.0 }, &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).sigmoid();
        self.push("sigmoid", value, Op::Sigmoid { a: a.0 }, &[a.0])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        check_axis("narrow", axis, sa.len())?;
        if len == 0 || start + len > sa[axis] {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                msg: format!("range {start}..{} exceeds extent {}", start + len, sa[axis]),
            });
        }
        let data = kernels::narrow(self.val(a).data(), &sa, axis, start, len);
        let mut shape = sa;
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        self.push("narrow", value, Op::Narrow { a: a.0, axis, start }, &[a.0])
    }

    /// Mean over `axis`, which is removed from the shape (rank-1 input yields `[1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        check_axis("mean_axis", axis, sa.len())?;
        let data = kernels::mean_axis(self.val(a).data(), &sa, axis);
        let mut shape = sa;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, data)?;
        self.push("mean_axis", value, Op::MeanAxis { a: a.0, axis }, &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.val(a).sum());
        self.push("sum", value, Op::Sum { a: a.0 }, &[a.0])
    }

    /// Rows of a `[R×C]` table selected by `index`, giving `[index.len()×C]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(mismatch("gather_rows", st, &[index.len()]));
        }
        let (rows, width) = (st[0], st[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let td = self.val(table).data();
        let data: Vec<T> = index
            .iter()
            .flat_map(|&i| td[i * width..(i + 1) * width].iter().copied())
            .collect();
        let value = Tensor::new(vec![index.len(), width], data)?;
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                table: table.0,
                index: index.to_vec(),
            },
            &[table.0],
        )
    }

    /// Mean binary cross-entropy on logits, in softplus form.
    ///
    /// `pos_weight`, when given, scales the positive term per trailing-axis column.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>, pos_weight: Option<&[T]>) -> Result<Var> {
        let sl = self.shape(logits);
        if sl != targets.shape() {
            return Err(mismatch("bce_with_logits", sl, targets.shape()));
        }
        if let Some(&bad) = targets.data().iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(TensorError::InvalidTarget(Real::to_f64(bad)));
        }
        let width = *sl.last().expect("rank >= 1");
        if let Some(pw) = pos_weight {
            if pw.len() != width {
                return Err(mismatch("bce_with_logits", sl, &[pw.len()]));
            }
        }
        let x = self.val(logits).data();
        let n = T::from_f64(x.len() as f64);
        let total: T = x
            .iter()
            .zip(targets.data())
            .enumerate()
            .map(|(i, (&x, &y))| {
                let p = pos_weight.map_or(T::one(), |pw| pw[i % width]);
                p * y * kernels::softplus(-x) + (T::one() - y) * kernels::softplus(x)
            })
            .sum();
        let value = Tensor::scalar(total / n);
        self.push(
            "bce_with_logits",
            value,
            Op::BceWithLogits {
                logits: logits.0,
                targets: targets.data().to_vec(),
                pos_weight: pos_weight.map(<[T]>::to_vec),
            },
            &[logits.0],
        )
    }

    /// Reverse pass from a scalar `loss`; frees the tape afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let ls = self.shape(loss);
        if !self.val(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |p: usize| nodes[p].requires_grad;
            let val = |p: usize| nodes[p].value.data();
            match &node.op {
                Op::Leaf => {
                    leaf_grads[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul { a, b, dims } => {
                    let mut ga = needs(*a).then(|| vec![T::zero(); val(*a).len()]);
                    let mut gb = needs(*b).then(|| vec![T::zero(); val(*b).len()]);
                    kernels::matmul_backward(&g, val(*a), val(*b), *dims, ga.as_deref_mut(), gb.as_deref_mut());
                    accumulate_owned(&mut grads, *a, ga);
                    accumulate_owned(&mut grads, *b, gb);
                }
                Op::Linear { x, w, b, dims } => {
                    if needs(*b) {
                        let n = dims.2;
                        let mut gb = vec![T::zero(); n];
                        for row in g.chunks(n) {
                            for (d, &s) in gb.iter_mut().zip(row) {
                                *d = *d + s;
                            }
                        }
                        accumulate_owned(&mut grads, *b, Some(gb));
                    }
                    let mut gx = needs(*x).then(|| vec![T::zero(); val(*x).len()]);
                    let mut gw = needs(*w).then(|| vec![T::zero(); val(*w).len()]);
                    kernels::matmul_backward(&g, val(*x), val(*w), *dims, gx.as_deref_mut(), gw.as_deref_mut());
                    accumulate_owned(&mut grads, *x, gx);
                    accumulate_owned(&mut grads, *w, gw);
                }
                Op::Bmm { a, b, dims } => {
                    let mut ga = needs(*a).then(|| vec![T::zero(); val(*a).len()]);
                    let mut gb = needs(*b).then(|| vec![T::zero(); val(*b).len()]);
                    kernels::bmm_backward(&g, val(*a), val(*b), *dims, ga.as_deref_mut(), gb.as_deref_mut());
                    accumulate_owned(&mut grads, *a, ga);
                    accumulate_owned(&mut grads, *b, gb);
                }
                Op::Add { a, b } => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::AddSuffix { a, b } => {
                    if needs(*b) {
                        let width = val(*b).len();
                        let mut gb = vec![T::zero(); width];
                        for row in g.chunks(width) {
                            for (d, &s) in gb.iter_mut().zip(row) {
                                *d = *d + s;
                            }
                        }
                        accumulate_owned(&mut grads, *b, Some(gb));
                    }
                    if needs(*a) {
                        accumulate_owned(&mut grads, *a, Some(g));
                    }
                }
                Op::Mul { a, b } => {
                    if needs(*a) {
                        accumulate_owned(&mut grads, *a, Some(zip_map(&g, val(*b), |x, y| x * y)));
                    }
                    if needs(*b) {
                        accumulate_owned(&mut grads, *b, Some(zip_map(&g, val(*a), |x, y| x * y)));
                    }
                }
                Op::Scale { a, factor } => {
                    let ga = g.iter().map(|&v| v * *factor).collect();
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Reshape { a } => accumulate_owned(&mut grads, *a, Some(g)),
                Op::Permute { a, axes } => {
                    let inv = kernels::inverse_permutation(axes);
                    let (_, ga) = kernels::permute(&g, node.value.shape(), &inv);
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Roll { a, shift, axis } => {
                    let ga = kernels::roll(&g, node.value.shape(), -shift, *axis);
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Softmax { a, axis } => {
                    let mut ga = vec![T::zero(); g.len()];
                    kernels::softmax_backward(&g, node.value.data(), node.value.shape(), *axis, &mut ga);
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let width = val(*gamma).len();
                    let gam = val(*gamma);
                    if needs(*beta) || needs(*gamma) {
                        let mut gg = vec![T::zero(); width];
                        let mut gbeta = vec![T::zero(); width];
                        for (grow, hrow) in g.chunks(width).zip(xhat.chunks(width)) {
                            for j in 0..width {
                                gg[j] = gg[j] + grow[j] * hrow[j];
                                gbeta[j] = gbeta[j] + grow[j];
                            }
                        }
                        if needs(*gamma) {
                            accumulate_owned(&mut grads, *gamma, Some(gg));
                        }
                        if needs(*beta) {
                            accumulate_owned(&mut grads, *beta, Some(gbeta));
                        }
                    }
                    if needs(*x) {
                        let wf = T::from_f64(width as f64);
                        let mut gx = vec![T::zero(); g.len()];
                        for (r, ((grow, hrow), out)) in g
                            .chunks(width)
                            .zip(xhat.chunks(width))
                            .zip(gx.chunks_mut(width))
                            .enumerate()
                        {
                            let mut sum_gh = T::zero();
                            let mut sum_ghx = T::zero();
                            for j in 0..width {
                                let gh = grow[j] * gam[j];
                                sum_gh = sum_gh + gh;
                                sum_ghx = sum_ghx + gh * hrow[j];
                            }
                            let scale = inv_std[r] / wf;
                            for j in 0..width {
                                let gh = grow[j] * gam[j];
                                out[j] = scale * (wf * gh - sum_gh - hrow[j] * sum_ghx);
                            }
                        }
                        accumulate_owned(&mut grads, *x, Some(gx));
                    }
                }
                Op::Gelu { a } => {
                    let ga = zip_map(&g, val(*a), |gv, x| gv * kernels::gelu_derivative(x));
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Sigmoid { a } => {
                    let ga = zip_map(&g, node.value.data(), |gv, y| gv * y * (T::one() - y));
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Narrow { a, axis, start } => {
                    let src_shape = nodes[*a].value.shape();
                    let (outer, n, inner) = kernels::axis_blocks(src_shape, *axis);
                    let len = node.value.shape()[*axis];
                    let mut ga = vec![T::zero(); val(*a).len()];
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        let src = o * len * inner;
                        ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::MeanAxis { a, axis } => {
                    let src_shape = nodes[*a].value.shape();
                    let (outer, n, inner) = kernels::axis_blocks(src_shape, *axis);
                    let nf = T::from_f64(n as f64);
                    let mut ga = vec![T::zero(); val(*a).len()];
                    for o in 0..outer {
                        for i in 0..n {
                            for j in 0..inner {
                                ga[o * n * inner + i * inner + j] = g[o * inner + j] / nf;
                            }
                        }
                    }
                    accumulate_owned(&mut grads, *a, Some(ga));
                }
                Op::Sum { a } => {
                    accumulate_owned(&mut grads, *a, Some(vec![g[0]; val(*a).len()]));
                }
                Op::GatherRows { table, index } => {
                    let width = nodes[*table].value.shape()[1];
                    let mut gt = vec![T::zero(); val(*table).len()];
                    for (k, &row) in index.iter().enumerate() {
                        for j in 0..width {
                            gt[row * width + j] = gt[row * width + j] + g[k * width + j];
                        }
                    }
                    accumulate_owned(&mut grads, *table, Some(gt));
                }
                Op::BceWithLogits {
                    logits,
                    targets,
                    pos_weight,
                } => {
                    let x = val(*logits);
                    let width = *nodes[*logits].value.shape().last().expect("rank >= 1");
                    let n = T::from_f64(x.len() as f64);
                    let ga = x
                        .iter()
                        .zip(targets)
                        .enumerate()
                        .map(|(i, (&x, &y))| {
                            let p = pos_weight.as_ref().map_or(T::one(), |pw| pw[i % width]);
                            let d = (T::one() - y) * kernels::sigmoid(x) - p * y * kernels::sigmoid(-x);
                            g[0] * d / n
                        })
                        .collect();
                    accumulate_owned(&mut grads, *logits, Some(ga));
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a = *a + v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, g: Option<Vec<T>>) {
    let Some(g) = g else { return };
    match &mut grads[id] {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(&g) {
                *a = *a + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn has_nan<T: Real>(data: &[T]) -> bool {
    data.iter().fold(false, |acc, v| acc | v.is_nan())
}
