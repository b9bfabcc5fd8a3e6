use std::collections::BTreeMap;

use super::{TrainConfig, TrainError};
use crate::model::ParameterSet;
use crate::tensor::Tensor;

/// First/second moment buffers per parameter path and the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update with a constant learning rate.
///
/// Parameters without an entry in `grads` are left untouched (frozen), but
/// the step counter advances exactly once per call.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (path, g) in grads {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(path.clone()));
        }
        match params.get(path) {
            Some(p) if p.shape() == g.shape() => {}
            _ => return Err(TrainError::GradientShape(path.clone())),
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (path, g) in grads {
        let p = params.get_mut(path).expect("checked above");
        let m = state
            .m
            .entry(path.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state
            .v
            .entry(path.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for (((theta, m), v), &g) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParameterSet, AdamState) {
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), Tensor::scalar(value));
        let p = ParameterSet::from_tensors(map, None);
        let s = AdamState::zeros_like(&p);
        (p, s)
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, mut s) = single(0.3);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &grad(0.0), &mut s, &cfg).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.3);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let cfg = TrainConfig::default();
        for g in [1e-3, 0.5, -4.0] {
            let (mut p, mut s) = single(0.0);
            adam_step(&mut p, &grad(g), &mut s, &cfg).unwrap();
            let delta = p.get("w").unwrap().item().abs();
            // at t=1 the bias-corrected moments are g and g², so |Δθ| = lr·|g| / (|g| + eps)
            let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-18, "{delta} vs {expected}");
            assert!((delta - cfg.learning_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn two_step_hand_trace() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (mut p, mut s) = single(1.0);
        let g: f64 = 0.2;
        // step 1
        let m1 = 0.1 * g;
        let v1 = 0.001 * g * g;
        let th1 = 1.0 - 0.1 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        // step 2
        let m2 = 0.9 * m1 + 0.1 * g;
        let v2 = 0.999 * v1 + 0.001 * g * g;
        let th2 = th1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);

        adam_step(&mut p, &grad(g), &mut s, &cfg).unwrap();
        assert!((s.m["w"].item() - m1).abs() < 1e-12);
        assert!((s.v["w"].item() - v1).abs() < 1e-12);
        assert!((p.get("w").unwrap().item() - th1).abs() < 1e-12);
        adam_step(&mut p, &grad(g), &mut s, &cfg).unwrap();
        assert!((s.m["w"].item() - m2).abs() < 1e-12);
        assert!((s.v["w"].item() - v2).abs() < 1e-12);
        assert!((p.get("w").unwrap().item() - th2).abs() < 1e-12);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let (mut p, mut s) = single(0.0);
        let err = adam_step(&mut p, &grad(f64::NAN), &mut s, &TrainConfig::default());
        assert!(matches!(err, Err(TrainError::NonFiniteGradient(_))));
        assert_eq!(s.step, 0);
    }
}
