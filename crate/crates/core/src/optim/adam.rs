use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam moments for gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One ascent step: `params` moves along `+grad`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.len() || grad.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam state has {} entries, params {}, grad {}",
            state.len(),
            params.len(),
            grad.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] += state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut s = AdamState::new(2, 0.1);
        let mut p = [1.0, 2.0];
        adam_step(&mut s, &mut p, &[1.0, -1.0]).unwrap();
        let before = p;
        let m0 = s.first_moment.clone();
        s.learning_rate = 0.1;
        adam_step(&mut s, &mut p, &[0.0, 0.0]).unwrap();
        assert!(s.first_moment[0].abs() < m0[0].abs());
        // moments still carry the earlier gradient, so only a fresh state is exactly still
        let mut fresh = AdamState::new(2, 0.1);
        let mut q = before;
        adam_step(&mut fresh, &mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        let mut s = AdamState::new(3, 0.01);
        let mut p = [0.0; 3];
        let g = [2.0, -0.5, 1e-3];
        for _ in 0..2000 {
            let prev = p;
            adam_step(&mut s, &mut p, &g).unwrap();
            for i in 0..3 {
                let step = p[i] - prev[i];
                assert!((step.abs() - 0.01).abs() < 1e-4 && step.signum() == g[i].signum());
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_step(&mut s, &mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
