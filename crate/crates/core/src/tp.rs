//! Student-t process marginal likelihood, posterior predictive, and the
//! subsampled likelihood bound used for large clusters.
//!
//! Outputs are modeled as zero-mean with a heavy-tailed joint: for `N`
//! points the marginal is a multivariate student-t with `nu` degrees of
//! freedom and scale matrix `K + |h| I`, where `K` is the kernel block and
//! `|h|` the observation noise. As `nu` grows this degenerates to the
//! Gaussian process likelihood.

use crate::error::{Error, Result};
use crate::kernel::{build_cov, kernel_cross};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Per-cluster process parameters.
///
/// `sigma2` is the latent overall scale. It does not enter the marginal
/// likelihood (the marginal already integrates it out); it is carried as an
/// augmentation variable so the degrees of freedom can be resampled from a
/// closed-form conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TPParams {
    /// Kernel inverse-lengthscale, positive.
    pub theta: f64,
    /// Signed noise parameter; the model uses `|h|` as the noise variance.
    pub h: f64,
    /// Degrees of freedom, positive.
    pub nu: f64,
    /// Latent overall scale, positive.
    pub sigma2: f64,
}

impl TPParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(format!("theta must be positive, got {}", self.theta)));
        }
        if !self.h.is_finite() {
            return Err(Error::invalid(format!("h must be finite, got {}", self.h)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }
}

fn check_same_len(y: &DVector<f64>, xs: &[DVector<f64>]) -> Result<()> {
    if y.len() != xs.len() {
        return Err(Error::DimensionMismatch {
            context: "outputs vs inputs",
            expected: xs.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Zero-mean multivariate student-t log-density with an explicit noise
/// level, evaluated through the factored covariance.
fn log_marginal_with_noise(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    theta: f64,
    noise: f64,
    nu: f64,
) -> Result<f64> {
    let n = y.len() as f64;
    let cov = build_cov(xs, theta, noise)?;
    let quad = cov.quad_form(y)?;
    Ok(-0.5 * n * (nu * std::f64::consts::PI).ln() - 0.5 * cov.log_det()
        + ln_gamma(0.5 * (nu + n))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu + n) * (quad / nu).ln_1p())
}

/// Log marginal likelihood of a cluster's outputs under its process
/// parameters. An empty cluster has likelihood one (log zero).
pub fn tp_log_marginal(y: &DVector<f64>, xs: &[DVector<f64>], p: &TPParams) -> Result<f64> {
    p.validate()?;
    check_same_len(y, xs)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    log_marginal_with_noise(y, xs, p.theta, p.h.abs(), p.nu)
}

/// Joint student-t posterior predictive at `x_stars` given training data.
///
/// `scale` is a squared-scale matrix: a single test point follows a
/// univariate student-t with `dof` degrees of freedom, location `mean[0]`,
/// and squared scale `scale[(0,0)]`. The noise level appears on both the
/// training and test blocks, so this predicts a noisy future observation.
#[derive(Debug, Clone)]
pub struct StudentTPredictive {
    pub dof: f64,
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
}

pub fn tp_predict(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    x_stars: &[DVector<f64>],
    p: &TPParams,
) -> Result<StudentTPredictive> {
    let noise = p.h.abs();
    tp_predict_with_noise(y, xs, x_stars, p, noise, noise)
}

/// Posterior predictive with separate noise levels on the training and test
/// blocks; used when conditioning on an upweighted subsample, where the
/// training block carries the inflated noise but the prediction still
/// targets an ordinary noisy observation.
pub(crate) fn tp_predict_with_noise(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    x_stars: &[DVector<f64>],
    p: &TPParams,
    train_noise: f64,
    test_noise: f64,
) -> Result<StudentTPredictive> {
    p.validate()?;
    check_same_len(y, xs)?;
    if x_stars.is_empty() {
        return Err(Error::invalid("prediction requires at least one test point"));
    }
    let m = x_stars.len();

    let mut kss = kernel_cross(x_stars, x_stars, p.theta);
    for i in 0..m {
        kss[(i, i)] += test_noise;
    }

    if y.is_empty() {
        // No conditioning data: the prior predictive.
        return Ok(StudentTPredictive {
            dof: p.nu,
            mean: DVector::zeros(m),
            scale: kss,
        });
    }

    let n = y.len();
    let cov = build_cov(xs, p.theta, train_noise)?;
    let cross = kernel_cross(x_stars, xs, p.theta); // m x n
    let solved = cov.solve_mat(&cross.transpose())?; // n x m
    let mean = &cross * cov.solve_vec(y)?;
    let beta = cov.quad_form(y)?;
    let mut tail = kss - &cross * solved;
    // Symmetrize to wash out factorization round-off.
    for i in 0..m {
        for j in 0..i {
            let s = 0.5 * (tail[(i, j)] + tail[(j, i)]);
            tail[(i, j)] = s;
            tail[(j, i)] = s;
        }
    }
    let dof = p.nu + n as f64;
    let scale = tail * ((p.nu + beta) / dof);
    Ok(StudentTPredictive { dof, mean, scale })
}

/// Uniform subsample of `batch` indices out of `0..n`, sorted ascending.
/// Returns `None` when the whole set fits (`n <= batch`).
pub fn draw_minibatch_indices<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
    if n <= batch {
        return None;
    }
    // Partial Fisher-Yates over an index buffer: O(n) space, O(batch) swaps.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..batch {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(batch);
    idx.sort_unstable();
    Some(idx)
}

/// Subsampled log-likelihood of a cluster: exact when the cluster fits in
/// one batch, otherwise an upweighted evaluation on `subset` with the noise
/// inflated by `n / batch`.
///
/// `subset` must be the indices drawn by [`draw_minibatch_indices`] for this
/// cluster size; passing `None` asserts `n <= batch`.
pub fn minibatch_log_marginal(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    p: &TPParams,
    batch: usize,
    subset: Option<&[usize]>,
) -> Result<f64> {
    p.validate()?;
    check_same_len(y, xs)?;
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let n = y.len();
    match subset {
        None => {
            if n > batch {
                return Err(Error::invalid(format!(
                    "cluster of size {n} exceeds batch {batch} but no subset was drawn"
                )));
            }
            tp_log_marginal(y, xs, p)
        }
        Some(idx) => {
            if idx.len() != batch {
                return Err(Error::invalid(format!(
                    "subset has {} indices, expected batch {batch}",
                    idx.len()
                )));
            }
            if idx.iter().any(|&i| i >= n) {
                return Err(Error::invalid("subset index out of range"));
            }
            let ratio = n as f64 / batch as f64;
            let y_u = DVector::from_iterator(batch, idx.iter().map(|&i| y[i]));
            let xs_u: Vec<DVector<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
            let inflated = ratio * p.h.abs();
            Ok(ratio * log_marginal_with_noise(&y_u, &xs_u, p.theta, inflated, p.nu)?)
        }
    }
}

/// Convenience wrapper that draws the subset and evaluates in one call.
pub fn minibatch_log_likelihood<R: Rng>(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    p: &TPParams,
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let subset = draw_minibatch_indices(y.len(), batch, rng);
    minibatch_log_marginal(y, xs, p, batch, subset.as_deref())
}
