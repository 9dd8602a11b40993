//! First-order optimizers over flattened parameter vectors.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Adaptive-moment optimizer with coupled L2 weight decay
/// (`grad += decay * param` before the moment updates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub weight_decay: S,
    step: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize, weight_decay: S) -> Self {
        Self {
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            weight_decay,
            step: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [S], grad: &[S], lr: S) {
        debug_assert_eq!(params.len(), grad.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `params -= lr * grad`.
pub fn sgd_step<S: Scalar>(params: &mut [S], grad: &[S], lr: S) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Adam::new(2, 0.0);
        let mut p = vec![1.0f64, -1.0];
        opt.step(&mut p, &[0.5, -3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_keeps_params() {
        let mut opt = Adam::new(1, 0.0);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0], 0.1);
        assert_eq!(p, vec![2.0]);
    }

    #[test]
    fn sgd() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut p, &[1.0, -1.0], 0.5);
        assert_eq!(p, vec![0.5, 2.5]);
    }
}
