//! Momentum SGD with decoupled weight-decay mask and a cosine schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `lr_t = lr0 * (1 + cos(pi * t / T)) / 2`: cosine decay to zero, no warmup.
pub fn cosine_lr(base: f64, iteration: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (iteration as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    decay_mask: Vec<bool>,
    velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        Self { momentum: T::lit(momentum), weight_decay: T::lit(weight_decay), decay_mask, velocity: vec![T::zero(); n] }
    }

    /// `v <- m v + g + wd * theta` (masked), `theta <- theta - lr v`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::LayoutMismatch("optimizer state does not match parameter vector".into()));
        }
        let lr = T::lit(lr);
        for i in 0..params.len() {
            let mut g = grad[i];
            if self.decay_mask[i] {
                g += self.weight_decay * params[i];
            }
            let v = self.momentum * self.velocity[i] + g;
            self.velocity[i] = v;
            params[i] -= lr * v;
        }
        Ok(())
    }
}


/// Aborts a run whose loss stays above `10x` the first observed loss for
/// `window` consecutive iterations.
#[derive(Debug, Clone)]
pub struct DivergenceGuard {
    initial: Option<f64>,
    streak: usize,
    window: usize,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self { initial: None, streak: 0, window: 100 }
    }
}

impl DivergenceGuard {
    pub fn observe(&mut self, iteration: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NumericalFault { location: format!("iteration {iteration}"), detail: format!("loss = {loss}") });
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial {
            self.streak += 1;
            if self.streak >= self.window {
                return Err(Error::Diverged { iteration, loss, initial, window: self.window });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}
