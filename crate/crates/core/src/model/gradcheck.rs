//! Central-difference verification of model gradients.
//!
//! The loss is mean binary cross-entropy of the logits. Every step input of an
//! unperturbed forward pass is cached, so a perturbed parameter only reruns
//! the model from the step that owns it.

use super::{Model, ParameterSet, Result};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check every `stride`-th scalar of each parameter (1 = all).
    pub stride: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_path: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare backprop against central differences for every checked scalar.
///
/// `images` must hold a single sample `[1, C, H, W]`; `targets` is `[1, num_aus]`.
pub fn check_model_gradients(
    model: &Model,
    params: &ParameterSet,
    images: &Tensor,
    targets: &Tensor,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let steps = model.steps();

    // analytic pass, caching the input of every step
    let mut g = Graph::<f64>::new();
    let pv = params.bind(&mut g, true);
    let mut x = g.constant(images.clone());
    let mut inputs = Vec::with_capacity(steps.len());
    for &step in &steps {
        inputs.push(g.value(x).clone());
        x = model.run_step(&mut g, &pv, step, x)?;
    }
    let loss = g.bce_with_logits(x, targets, None)?;
    let mut grads = g.backward(loss)?;
    let analytic: Vec<(String, Tensor)> = pv
        .iter()
        .map(|(path, v)| {
            let t = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(params.get(path).expect("bound").shape().to_vec()));
            (path.to_string(), t)
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_path: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    // one graph holds the parameters; each probe perturbs a leaf in place,
    // runs from the owning step onward and rewinds
    let mut g = Graph::<f64>::new();
    let pv = params.bind(&mut g, false);
    let mark = g.len();
    for (k, &step) in steps.iter().enumerate() {
        for (path, grad) in analytic.iter().filter(|(p, _)| step.owns(p)) {
            let var = pv.get(path)?;
            for i in (0..grad.len()).step_by(opts.stride.max(1)) {
                let orig = g.value(var).data()[i];
                let mut losses = [0.0; 2];
                for (loss, delta) in losses.iter_mut().zip([opts.step, -opts.step]) {
                    g.leaf_mut(var).expect("parameter leaf").data_mut()[i] = orig + delta;
                    let mut x = g.constant(inputs[k].clone());
                    for &s in &steps[k..] {
                        x = model.run_step(&mut g, &pv, s, x)?;
                    }
                    let l = g.bce_with_logits(x, targets, None)?;
                    *loss = g.value(l).item();
                    g.truncate(mark);
                }
                g.leaf_mut(var).expect("parameter leaf").data_mut()[i] = orig;

                let a = grad.data()[i];
                let numeric = (losses[0] - losses[1]) / (2.0 * opts.step);
                let err = relative_error(a, numeric, opts.floor);
                report.checked += 1;
                if err > report.max_rel_err || report.worst_path.is_empty() {
                    report.max_rel_err = err;
                    report.worst_path = path.clone();
                    report.worst_index = i;
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
