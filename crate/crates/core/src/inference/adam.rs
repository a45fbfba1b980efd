//! Adam with bias correction, stepping uphill.

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One ascent step: `params += lr * m̂ / (sqrt(v̂) + eps)`.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grad.len(), "gradient length");
    assert_eq!(params.len(), state.m.len(), "optimizer state length");
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] += lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1);
        assert!((s.m[0] - 0.45).abs() < 1e-15);
        assert!((s.v[0] - 0.24975).abs() < 1e-15);
        // stored momentum still moves the parameters; with fresh state nothing moves
        let mut q = vec![1.0, -2.0];
        adam_step(&mut q, &[0.0, 0.0], &mut AdamState::new(2), 0.1);
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_a_sign_step_of_size_lr() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.02, 100.0], &mut s, 5e-3);
        assert!((p[0] - 5e-3).abs() < 1e-10);
        assert!((p[1] + 5e-3).abs() < 1e-8);
        assert!((p[2] - 5e-3).abs() < 1e-10);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2);
            for _ in 0..5 {
                adam_step(&mut p, &[0.7, -1.1], &mut s, 1e-2);
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
