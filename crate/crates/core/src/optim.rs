//! Adadelta.
//!
//! ```text
//! E[g^2]  <- rho * E[g^2] + (1 - rho) * g^2
//! dx       = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
//! E[dx^2] <- rho * E[dx^2] + (1 - rho) * dx^2
//! x       <- x + dx
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGrads, Params};
use crate::tensor::Tensor;

/// Hyperparameters for [`AdadeltaState`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("adadelta rho {} outside [0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("adadelta epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Running accumulators, zero-initialised lazily per parameter.
#[derive(Clone, Debug)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    sq_grad: BTreeMap<String, Vec<f64>>,
    sq_delta: BTreeMap<String, Vec<f64>>,
}

impl AdadeltaState {
    pub fn new(config: AdadeltaConfig) -> Self {
        AdadeltaState {
            config,
            sq_grad: BTreeMap::new(),
            sq_delta: BTreeMap::new(),
        }
    }

    /// `E[g^2]` for a parameter, once it has been stepped.
    pub fn sq_grad(&self, name: &str) -> Option<&[f64]> {
        self.sq_grad.get(name).map(Vec::as_slice)
    }

    /// `E[dx^2]` for a parameter, once it has been stepped.
    pub fn sq_delta(&self, name: &str) -> Option<&[f64]> {
        self.sq_delta.get(name).map(Vec::as_slice)
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut Params, grads: &ParamGrads) -> Result<()> {
        let AdadeltaConfig { rho, epsilon } = self.config;
        for (name, grad) in &grads.map {
            let map = params.get_mut_map();
            let Some(current) = map.get(name) else {
                return Err(Error::contract(
                    "adadelta_step",
                    format!("gradient for unknown parameter `{name}`"),
                ));
            };
            if current.numel() != grad.len() {
                return Err(Error::contract(
                    "adadelta_step",
                    format!(
                        "`{name}` has {} elements but its gradient has {}",
                        current.numel(),
                        grad.len()
                    ),
                ));
            }
            let n = grad.len();
            let eg = self.sq_grad.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let ed = self.sq_delta.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let mut values = current.to_vec();
            for i in 0..n {
                let g = grad[i];
                eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
                let dx = -((ed[i] + epsilon).sqrt() / (eg[i] + epsilon).sqrt()) * g;
                ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
                values[i] += dx;
            }
            let shape = current.shape().to_vec();
            map.insert(name.clone(), Tensor::from_parts(shape, values));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(name: &str, values: Vec<f64>) -> Params {
        let mut p = Params::new();
        let n = values.len();
        p.insert(name, Tensor::new([n], values).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single("w", vec![1.0, -2.0]);
        let before = p.clone();
        let mut g = ParamGrads::default();
        g.insert("w", vec![0.0, 0.0]);
        AdadeltaState::new(AdadeltaConfig::default()).step(&mut p, &g).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdadeltaConfig::default();
        let (rho, eps) = (cfg.rho, cfg.epsilon);
        let g = 0.3;
        let mut p = single("w", vec![1.0]);
        let mut grads = ParamGrads::default();
        grads.insert("w", vec![g]);
        let mut st = AdadeltaState::new(cfg);
        st.step(&mut p, &grads).unwrap();
        let expected_dx = -(eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt()) * g;
        let got = p.get("w").unwrap().data()[0] - 1.0;
        assert!((got - expected_dx).abs() < 1e-15, "{got} vs {expected_dx}");
        assert!((st.sq_grad("w").unwrap()[0] - (1.0 - rho) * g * g).abs() < 1e-18);
        assert!((st.sq_delta("w").unwrap()[0] - (1.0 - rho) * expected_dx * expected_dx).abs() < 1e-20);
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = single("w", vec![0.0; 8]);
        let mut st = AdadeltaState::new(AdadeltaConfig::default());
        for _ in 0..1000 {
            let mut grads = ParamGrads::default();
            grads.insert("w", (0..8).map(|_| rng.random_range(-10.0..10.0)).collect());
            st.step(&mut p, &grads).unwrap();
            assert!(st.sq_grad("w").unwrap().iter().all(|&v| v >= 0.0));
            assert!(st.sq_delta("w").unwrap().iter().all(|&v| v >= 0.0));
        }
        assert!(p.is_finite());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single("w", vec![0.0; 2]);
        let mut grads = ParamGrads::default();
        grads.insert("w", vec![1.0; 3]);
        let err = AdadeltaState::new(AdadeltaConfig::default()).step(&mut p, &grads);
        assert!(matches!(err, Err(Error::Contract { .. })));
    }
}
