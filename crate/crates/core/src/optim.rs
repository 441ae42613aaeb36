//! Adam optimizer with decoupled weight decay on flat parameter vectors.
//!
//! Update at step s (1-based), per coordinate:
//!
//! ```text
//! m = b1 m + (1 - b1) g          mhat = m / (1 - b1^s)
//! v = b2 v + (1 - b2) g^2        vhat = v / (1 - b2^s)
//! p -= lr * mhat / (sqrt(vhat) + eps)
//! p *= 1 - lr * wd
//! ```
//!
//! The decay multiplies the parameter after the gradient step, so it never
//! enters the moment estimates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One in-place update. Gradients must be finite and match the parameter
/// length.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step length mismatch: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at flat index {bad}"
        )));
    }
    state.step += 1;
    let s = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(s);
    let bc2 = 1.0 - cfg.beta2.powi(s);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        params[i] *= decay;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, mhat = g and vhat = g^2 on step one, so the
        // update is lr * g / (|g| + eps) ~ lr * sign(g).
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.5, -3.0], &mut st, &cfg).unwrap();
        assert_relative_eq!(p[0], 1.0 - 3e-4, max_relative = 1e-6);
        assert_relative_eq!(p[1], -2.0 + 3e-4, max_relative = 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_params_even_with_zero_gradient() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut p = vec![2.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut st, &cfg).unwrap();
        // Gradient term is zero, decay multiplies by 1 - 0.1*0.5 = 0.95.
        assert_relative_eq!(p[0], 1.9, max_relative = 1e-12);
    }

    #[test]
    fn decay_does_not_leak_into_moments() {
        // Two configs differing only in weight decay must produce identical
        // moment estimates.
        let base = AdamConfig::default();
        let decayed = AdamConfig {
            weight_decay: 0.9,
            ..base.clone()
        };
        let mut p1 = vec![1.0];
        let mut p2 = vec![1.0];
        let mut s1 = AdamState::new(1);
        let mut s2 = AdamState::new(1);
        for step in 0..5 {
            let g = [0.3 + step as f64];
            adam_step(&mut p1, &g, &mut s1, &base).unwrap();
            adam_step(&mut p2, &g, &mut s2, &decayed).unwrap();
        }
        assert_eq!(s1.m, s2.m);
        assert_eq!(s1.v, s2.v);
        assert!(p2[0] < p1[0]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Minimize (p - 3)^2 from p = 0.
        let cfg = AdamConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 3.0)];
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "p = {}", p[0]);
    }

    #[test]
    fn rejects_non_finite_gradients_and_bad_lengths() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut st, &cfg).is_err());
        assert!(adam_step(&mut p, &[1.0], &mut st, &cfg).is_err());
        let mut st_short = AdamState::new(1);
        assert!(adam_step(&mut p, &[1.0, 1.0], &mut st_short, &cfg).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = AdamConfig::default();
        cfg.beta1 = 1.0;
        assert!(cfg.validate().is_err());
        cfg = AdamConfig::default();
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        cfg = AdamConfig::default();
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
