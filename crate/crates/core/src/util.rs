//! Small numeric helpers shared across the crate.

use rand::Rng;

/// Log of the sum of exponentials, shifted by the maximum for stability.
/// Returns `f64::NEG_INFINITY` for an empty slice or all-`-inf` input.
pub fn log_sum_exp(log_terms: &[f64]) -> f64 {
    let m = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = log_terms.iter().map(|&l| (l - m).exp()).sum();
    m + sum.ln()
}

/// Normalize a slice of log-weights into probabilities that sum to one.
/// Returns `None` when every entry is `-inf` (nothing to normalize).
pub fn normalize_log_probs(log_terms: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_terms);
    if !lse.is_finite() {
        return None;
    }
    Some(log_terms.iter().map(|&l| (l - lse).exp()).collect())
}

/// Draw an index from a normalized probability vector. Any residual mass
/// from rounding goes to the last index.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Effective sample size of a normalized weight vector, `1 / sum(w^2)`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}
