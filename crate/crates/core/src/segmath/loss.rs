//! Class-weighted cross-entropy.

use serde::{Deserialize, Serialize};

use super::ocr::softmax_in_place;
use crate::datasetops::ClassWeights;
use crate::error::{Error, Result};
use crate::imagecore::NUM_CLASSES;

/// Probabilities below this are clamped before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient with respect to the logits, same layout as the input.
    pub grad: Vec<f64>,
}

/// `w_i = (1 / mu_i)^beta`; absent classes borrow the rarest present
/// class's weight.
pub fn sample_weights(mu: &ClassWeights, beta: f64) -> Result<[f64; NUM_CLASSES]> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    let min_present = mu.present().map(|k| mu.get(k)).fold(f64::INFINITY, f64::min);
    if !min_present.is_finite() {
        return Err(Error::EmptyInput("no class is present".into()));
    }
    Ok(std::array::from_fn(|k| {
        let m = if mu.get(k) > 0.0 { mu.get(k) } else { min_present };
        (1.0 / m).powf(beta)
    }))
}

fn check(values: &[f64], truth: &[u8], k: usize) -> Result<usize> {
    if k == 0 || values.len() != truth.len() * k {
        return Err(Error::BufferSize {
            expected: truth.len() * k,
            actual: values.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no pixels".into()));
    }
    if let Some(&t) = truth.iter().find(|&&t| t as usize >= k) {
        return Err(Error::invalid(format!("label {t} outside {k} classes")));
    }
    Ok(truth.len())
}

/// Loss from per-pixel probabilities (`probs[i * K + k]`), averaged over pixels.
pub fn weighted_ce_probs(probs: &[f64], truth: &[u8], weights: &[f64]) -> Result<f64> {
    let k = weights.len();
    let n = check(probs, truth, k)?;
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let t = t as usize;
            -weights[t] * probs[i * k + t].max(PROB_FLOOR).ln()
        })
        .sum();
    Ok(total / n as f64)
}

/// Loss and logit gradient from raw per-pixel logits.
pub fn weighted_ce(logits: &[f64], truth: &[u8], weights: &[f64]) -> Result<LossGrad> {
    let k = weights.len();
    let n = check(logits, truth, k)?;
    let mut grad = logits.to_vec();
    let mut loss = 0.0;
    for (row, &t) in grad.chunks_exact_mut(k).zip(truth) {
        let t = t as usize;
        softmax_in_place(row);
        let w = weights[t];
        loss -= w * row[t].max(PROB_FLOOR).ln();
        row[t] -= 1.0;
        for g in row.iter_mut() {
            *g *= w / n as f64;
        }
    }
    Ok(LossGrad {
        loss: loss / n as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let probs = vec![1.0 / 7.0; 7 * 3];
        let l = weighted_ce_probs(&probs, &[0, 4, 6], &[1.0; 7]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        let lg = weighted_ce(&[0.3; 21], &[0, 4, 6], &[1.0; 7]).unwrap();
        assert!((lg.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let mut probs = vec![0.0; 14];
        probs[2] = 1.0;
        probs[7 + 5] = 1.0;
        assert_eq!(weighted_ce_probs(&probs, &[2, 5], &[3.0; 7]).unwrap(), 0.0);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let probs = [0.0, 1.0];
        let l = weighted_ce_probs(&probs, &[0], &[1.0, 1.0]).unwrap();
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn weights_from_mu() {
        let mut mu = [0.0; NUM_CLASSES];
        mu[0] = 0.9199;
        mu[1] = 0.25;
        let mu = ClassWeights(mu);
        let w = sample_weights(&mu, 1.0).unwrap();
        assert!((w[0] - 1.087).abs() < 5e-4);
        assert!((w[1] - 4.0).abs() < 1e-12);
        // absent classes reuse the rarest present weight
        assert_eq!(w[5], 4.0);
        assert!(sample_weights(&mu, 0.0).unwrap().iter().all(|&v| v == 1.0));
        assert!(sample_weights(&mu, -1.0).is_err());
        assert!(sample_weights(&ClassWeights([0.0; NUM_CLASSES]), 1.0).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(weighted_ce(&[0.0; 5], &[0], &[1.0; 7]).is_err());
        assert!(weighted_ce(&[0.0; 2], &[2], &[1.0; 2]).is_err());
        assert!(weighted_ce(&[], &[], &[1.0; 2]).is_err());
    }
}
