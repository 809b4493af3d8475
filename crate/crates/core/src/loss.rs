//! Cross-entropy primitives on row-major logit matrices.
//!
//! Each routine returns the per-row loss and writes `scale * d loss / d logits`
//! into the matching rows of a gradient buffer, so callers can normalise and
//! weight several terms into one backward pass.

use crate::scalar::{argmax, log_sum_exp, softmax_into, Scalar};

/// `H(y, softmax(logits))` for a hard target.
pub fn hard_ce<T: Scalar>(logits: &[T], target: usize) -> T {
    log_sum_exp(logits) - logits[target]
}

/// `H(u, softmax(logits))` for the uniform target `u_k = 1/C`.
pub fn uniform_ce<T: Scalar>(logits: &[T]) -> T {
    let c = T::of_usize(logits.len());
    log_sum_exp(logits) - logits.iter().copied().sum::<T>() / c
}

/// Hard-target cross-entropy over rows; adds `scale * (p - onehot)` into `dlogits`.
pub fn hard_ce_rows<T: Scalar>(logits: &[T], width: usize, targets: &[usize], scale: T, dlogits: Option<&mut [T]>) -> Vec<T> {
    let losses: Vec<T> = logits.chunks_exact(width).zip(targets).map(|(row, &t)| hard_ce(row, t)).collect();
    if let Some(d) = dlogits {
        let mut p = vec![T::zero(); width];
        for ((row, drow), &t) in logits.chunks_exact(width).zip(d.chunks_exact_mut(width)).zip(targets) {
            softmax_into(row, &mut p);
            for (k, (g, &pk)) in drow.iter_mut().zip(&p).enumerate() {
                let y = if k == t { T::one() } else { T::zero() };
                *g += scale * (pk - y);
            }
        }
    }
    losses
}

/// Uniform-target cross-entropy over rows; adds `scale * (p - 1/C)` into `dlogits`.
pub fn uniform_ce_rows<T: Scalar>(logits: &[T], width: usize, scale: T, dlogits: Option<&mut [T]>) -> Vec<T> {
    let losses: Vec<T> = logits.chunks_exact(width).map(uniform_ce).collect();
    if let Some(d) = dlogits {
        let u = T::one() / T::of_usize(width);
        let mut p = vec![T::zero(); width];
        for (row, drow) in logits.chunks_exact(width).zip(d.chunks_exact_mut(width)) {
            softmax_into(row, &mut p);
            for (g, &pk) in drow.iter_mut().zip(&p) {
                *g += scale * (pk - u);
            }
        }
    }
    losses
}

/// Argmax of one logit row with its softmax confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub class: usize,
    pub confidence: f64,
    /// `sum_{j != class} exp(l_j - l_class)`, so `confidence = 1 / (1 + rival_mass)`.
    pub rival_mass: f64,
}

impl PseudoLabel {
    /// `confidence >= t`, decided on the rival mass so that `t = 1` is only met
    /// when every competing probability underflows.
    pub fn passes(&self, t: f64) -> bool {
        self.rival_mass <= 1.0 / t - 1.0
    }
}

/// Hard pseudo-labels: argmax per row, lowest index on ties.
pub fn pseudo_labels<T: Scalar>(logits: &[T], width: usize) -> Vec<PseudoLabel> {
    logits
        .chunks_exact(width)
        .map(|row| {
            let class = argmax(row);
            let top = row[class].as_f64();
            let rival_mass: f64 =
                row.iter().enumerate().filter(|&(j, _)| j != class).map(|(_, v)| (v.as_f64() - top).exp()).sum();
            PseudoLabel { class, confidence: 1.0 / (1.0 + rival_mass), rival_mass }
        })
        .collect()
}

/// Shannon entropy of `softmax(logits)` per row, in nats.
pub fn prediction_entropy<T: Scalar>(logits: &[T], width: usize) -> Vec<T> {
    let mut p = vec![T::zero(); width];
    logits
        .chunks_exact(width)
        .map(|row| {
            softmax_into(row, &mut p);
            p.iter().filter(|&&q| q > T::zero()).map(|&q| -q * q.ln()).sum()
        })
        .collect()
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        T::zero()
    } else {
        xs.iter().copied().sum::<T>() / T::of_usize(xs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        for c in [2usize, 4, 10] {
            let logits = vec![0.3f64; c];
            assert!((hard_ce(&logits, 1) - (c as f64).ln()).abs() < 1e-12);
            assert!((uniform_ce(&logits) - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_ce_is_bounded_below_by_log_c() {
        let logits = [2.0f64, -1.0, 0.5];
        assert!(uniform_ce(&logits) > 3f64.ln());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = [0.2f64, -0.7, 1.1, 0.05];
        let eps = 1e-6;
        let mut d_hard = vec![0.0; 4];
        let mut d_unif = vec![0.0; 4];
        hard_ce_rows(&logits, 4, &[2], 1.0, Some(&mut d_hard));
        uniform_ce_rows(&logits, 4, 1.0, Some(&mut d_unif));
        for k in 0..4 {
            let mut hi = logits;
            let mut lo = logits;
            hi[k] += eps;
            lo[k] -= eps;
            let fd_hard = (hard_ce(&hi, 2) - hard_ce(&lo, 2)) / (2.0 * eps);
            let fd_unif = (uniform_ce(&hi) - uniform_ce(&lo)) / (2.0 * eps);
            assert!((fd_hard - d_hard[k]).abs() < 1e-8);
            assert!((fd_unif - d_unif[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn pseudo_label_ties_pick_lowest_class() {
        let logits = [1.0f32, 3.0, 3.0, 0.0, 2.0, 2.0];
        let labels = pseudo_labels(&logits, 3);
        assert_eq!(labels[0].class, 1);
        assert_eq!(labels[1].class, 1);
        assert!((labels[0].confidence - 1.0 / (2.0 + (-2f64).exp())).abs() < 1e-12);
        let sharp = pseudo_labels(&[0.0f32, 40.0], 2)[0];
        assert!(sharp.passes(0.95) && !sharp.passes(1.0));
    }
}
