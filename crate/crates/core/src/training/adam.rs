use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::GradientMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.01, beta1: 0.75, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter, and the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected update of every parameter in `grads`. Parameters
    /// without a gradient are left alone. Nothing changes if any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradientMap, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { param: name.to_string() });
            }
            match params.get(name) {
                Some(p) if p.data.len() == g.len() => {}
                Some(p) => return Err(Error::DimensionMismatch { expected: p.data.len(), got: g.len() }),
                None => return Err(Error::Config(format!("gradient for unknown parameter `{}`", name))),
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut GradientMap, max_norm: f64) {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64, grad: &[f64]) -> (ParamStore, GradientMap) {
        let mut store = ParamStore::new();
        store.insert("w", &[grad.len()], vec![value; grad.len()]);
        let mut g = GradientMap::new();
        g.accumulate("w", &[grad.len()], grad);
        (store, g)
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let (mut store, g) = one(1.0, &[0.5]);
        let mut state = AdamState::new();
        state.step(&mut store, &g, &AdamConfig::default()).unwrap();
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((store.get("w").unwrap().data[0] - expected).abs() < 1e-15);
        assert!((store.get("w").unwrap().data[0] - 0.99).abs() < 1e-9);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, g) = one(0.3, &[0.0, 0.0]);
        let mut state = AdamState::new();
        state.step(&mut store, &g, &AdamConfig::default()).unwrap();
        assert_eq!(store.get("w").unwrap().data, vec![0.3, 0.3]);
    }

    #[test]
    fn first_step_follows_negative_sign() {
        let grad = [3.0, -0.001, 2e-5, -70.0];
        let (mut store, g) = one(0.0, &grad);
        AdamState::new().step(&mut store, &g, &AdamConfig::default()).unwrap();
        for (p, g) in store.get("w").unwrap().data.iter().zip(grad) {
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut store, g) = one(1.0, &[f64::NAN]);
        let mut state = AdamState::new();
        match state.step(&mut store, &g, &AdamConfig::default()) {
            Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "w"),
            other => panic!("{:?}", other),
        }
        assert_eq!(state.t, 0);
        assert_eq!(store.get("w").unwrap().data, vec![1.0]);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let (_, mut g) = one(0.0, &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
        clip_global_norm(&mut g, 10.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
