#![allow(dead_code)]

use icuau_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Maximum relative error between backprop and central differences for a
/// scalar function of `inputs` expressed through `build`.
pub fn grad_check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();

    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}
