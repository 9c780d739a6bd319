//! Within-particle parameter moves: a univariate slice sampler for the
//! degrees of freedom, closed-form inverse-gamma Gibbs draws for the two
//! scale parameters, and an elliptical slice move for the kernel and noise
//! parameters under their Gaussian priors.

use crate::error::{Error, Result};
use crate::tp::{minibatch_log_marginal, TPParams};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Shape/rate parameterization of a Gamma density.
#[derive(Debug, Clone, Copy)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0)
            || !self.shape.is_finite()
            || !self.rate.is_finite()
        {
            return Err(Error::invalid(format!(
                "gamma parameters must be positive, got shape {} rate {}",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let g = Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| Error::Numerical(format!("gamma draw: {e}")))?;
        Ok(g.sample(rng))
    }
}

/// Shape/scale parameterization of an inverse-gamma density
/// (density proportional to `x^{-shape-1} exp(-scale/x)`).
#[derive(Debug, Clone, Copy)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let g = Gamma::new(self.shape, 1.0 / self.scale)
            .map_err(|e| Error::Numerical(format!("inverse-gamma draw: {e}")))?;
        let inv = g.sample(rng);
        if inv <= 0.0 {
            // Astronomically unlikely underflow guard.
            return Err(Error::Numerical("inverse-gamma draw underflowed".into()));
        }
        Ok(1.0 / inv)
    }
}

/// Knobs for the univariate slice sampler and the elliptical move.
#[derive(Debug, Clone, Copy)]
pub struct SliceConfig {
    /// Initial bracket width for stepping out.
    pub width: f64,
    /// Expansion budget for stepping out, split randomly between sides.
    pub max_expansions: u32,
    /// Shrinkage budget before giving up and keeping the current state.
    pub max_shrinks: u32,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            width: 1.0,
            max_expansions: 10,
            max_shrinks: 100,
        }
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// One transition of Neal's stepping-out-and-shrinkage slice sampler for a
/// univariate log-density. If the shrinkage budget runs out the current
/// point is returned unchanged.
pub fn slice_sample<R: Rng>(
    x0: f64,
    log_target: impl Fn(f64) -> f64,
    cfg: &SliceConfig,
    rng: &mut R,
) -> f64 {
    let f = |x: f64| finite_or_neg_inf(log_target(x));
    let f0 = f(x0);
    let log_y = f0 + rng.gen::<f64>().ln();

    // Place the initial bracket around x0, then step out with a randomly
    // split expansion budget.
    let mut left = x0 - cfg.width * rng.gen::<f64>();
    let mut right = left + cfg.width;
    let mut left_budget =
        ((rng.gen::<f64>() * (cfg.max_expansions as f64 + 1.0)) as u32).min(cfg.max_expansions);
    let mut right_budget = cfg.max_expansions - left_budget;
    while left_budget > 0 && f(left) > log_y {
        left -= cfg.width;
        left_budget -= 1;
    }
    while right_budget > 0 && f(right) > log_y {
        right += cfg.width;
        right_budget -= 1;
    }

    for _ in 0..cfg.max_shrinks {
        let cand = left + rng.gen::<f64>() * (right - left);
        if f(cand) > log_y {
            return cand;
        }
        if cand < x0 {
            left = cand;
        } else {
            right = cand;
        }
        if right - left < f64::EPSILON * (1.0 + x0.abs()) {
            break;
        }
    }
    x0
}

/// Log of the conditional density of the degrees of freedom given the
/// latent overall scale: gamma prior times the inverse-gamma likelihood of
/// `sigma2` with both inverse-gamma parameters equal to `nu / 2`.
fn log_nu_conditional(nu: f64, sigma2: f64, prior: &GammaParams) -> f64 {
    if nu <= 0.0 || !nu.is_finite() {
        return f64::NEG_INFINITY;
    }
    let half = 0.5 * nu;
    (prior.shape - 1.0) * nu.ln() - prior.rate * nu + half * half.ln() - ln_gamma(half)
        - (half + 1.0) * sigma2.ln()
        - half / sigma2
}

/// Slice-sample the degrees of freedom on the log scale (with the Jacobian
/// correction), holding the latent overall scale fixed.
pub fn slice_sample_nu<R: Rng>(
    nu: f64,
    sigma2: f64,
    prior: &GammaParams,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<f64> {
    prior.validate()?;
    if !(nu > 0.0 && sigma2 > 0.0) {
        return Err(Error::invalid(format!(
            "slice update requires positive nu and sigma2, got {nu}, {sigma2}"
        )));
    }
    let target = |t: f64| log_nu_conditional(t.exp(), sigma2, prior) + t;
    let t1 = slice_sample(nu.ln(), target, cfg, rng);
    Ok(t1.exp())
}

/// Posterior parameters for the latent overall scale of one cluster.
/// For clusters larger than `batch` the quadratic form is evaluated on the
/// provided subset with inflated noise and upweighted by `n / batch`, so
/// the conditional stays consistent with the subsampled likelihood.
pub fn sigma2_posterior_params(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    p: &TPParams,
    batch: usize,
    subset: Option<&[usize]>,
) -> Result<InvGammaParams> {
    p.validate()?;
    if y.len() != xs.len() {
        return Err(Error::DimensionMismatch {
            context: "outputs vs inputs",
            expected: xs.len(),
            got: y.len(),
        });
    }
    let n = y.len();
    if n == 0 {
        return Ok(InvGammaParams {
            shape: 0.5 * p.nu,
            scale: 0.5 * p.nu,
        });
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let weighted_quad = match subset {
        None => {
            if n > batch {
                return Err(Error::invalid(format!(
                    "cluster of size {n} exceeds batch {batch} but no subset was drawn"
                )));
            }
            let cov = crate::kernel::build_cov(xs, p.theta, p.h.abs())?;
            cov.quad_form(y)?
        }
        Some(idx) => {
            if idx.len() != batch || idx.iter().any(|&i| i >= n) {
                return Err(Error::invalid("bad minibatch subset"));
            }
            let ratio = n as f64 / batch as f64;
            let y_u = DVector::from_iterator(batch, idx.iter().map(|&i| y[i]));
            let xs_u: Vec<DVector<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
            let cov = crate::kernel::build_cov(&xs_u, p.theta, ratio * p.h.abs())?;
            ratio * cov.quad_form(&y_u)?
        }
    };
    Ok(InvGammaParams {
        shape: 0.5 * (p.nu + n as f64),
        scale: 0.5 * (p.nu + weighted_quad),
    })
}

/// Gibbs draw of the latent overall scale.
pub fn gibbs_sigma2<R: Rng>(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    p: &TPParams,
    batch: usize,
    subset: Option<&[usize]>,
    rng: &mut R,
) -> Result<f64> {
    sigma2_posterior_params(y, xs, p, batch, subset)?.sample(rng)
}

/// Posterior parameters for the shared noise-prior variance given every
/// cluster's noise parameter.
pub fn k0_posterior_params(hs: &[f64]) -> Result<InvGammaParams> {
    if hs.is_empty() {
        return Err(Error::invalid("noise-variance update requires at least one cluster"));
    }
    let k = hs.len() as f64;
    let sum_sq: f64 = hs.iter().map(|h| h * h).sum();
    Ok(InvGammaParams {
        shape: 0.5 * (k + 1.0),
        scale: (1.0 + sum_sq) / (2.0 * k),
    })
}

/// Gibbs draw of the shared noise-prior variance.
pub fn gibbs_k0_squared<R: Rng>(hs: &[f64], rng: &mut R) -> Result<f64> {
    k0_posterior_params(hs)?.sample(rng)
}

/// Outcome of one elliptical slice move.
#[derive(Debug, Clone, Copy)]
pub struct EssOutcome {
    pub state: [f64; 2],
    /// False when the angle bracket collapsed and the current state was kept.
    pub moved: bool,
    /// The slice threshold used for this transition.
    pub log_slice: f64,
    /// Log-likelihood at the returned state.
    pub log_lik: f64,
}

/// One elliptical slice transition for a bivariate state with independent
/// Gaussian priors `N(prior_mean[i], prior_sd[i]^2)`. The likelihood only
/// enters through its log; non-finite values act as rejections.
pub fn ess_step<R: Rng>(
    current: [f64; 2],
    prior_mean: [f64; 2],
    prior_sd: [f64; 2],
    log_lik: impl Fn(&[f64; 2]) -> f64,
    max_shrinks: u32,
    rng: &mut R,
) -> EssOutcome {
    use std::f64::consts::TAU;
    let ll = |s: &[f64; 2]| finite_or_neg_inf(log_lik(s));
    let ll_cur = ll(&current);
    let log_slice = ll_cur + rng.gen::<f64>().ln();

    let aux = [
        prior_sd[0] * rng.sample::<f64, _>(StandardNormal),
        prior_sd[1] * rng.sample::<f64, _>(StandardNormal),
    ];
    let centered = [current[0] - prior_mean[0], current[1] - prior_mean[1]];

    let mut phi = rng.gen::<f64>() * TAU;
    let (mut lo, mut hi) = (phi - TAU, phi);
    for _ in 0..max_shrinks {
        let (s, c) = phi.sin_cos();
        let prop = [
            prior_mean[0] + centered[0] * c + aux[0] * s,
            prior_mean[1] + centered[1] * c + aux[1] * s,
        ];
        let ll_prop = ll(&prop);
        if ll_prop > log_slice {
            return EssOutcome {
                state: prop,
                moved: true,
                log_slice,
                log_lik: ll_prop,
            };
        }
        if phi < 0.0 {
            lo = phi;
        } else {
            hi = phi;
        }
        if hi - lo < f64::EPSILON {
            break;
        }
        phi = lo + rng.gen::<f64>() * (hi - lo);
    }
    EssOutcome {
        state: current,
        moved: false,
        log_slice,
        log_lik: ll_cur,
    }
}

/// Jointly update a cluster's kernel parameter (on the log scale) and noise
/// parameter with one elliptical slice move against the subsampled process
/// likelihood. Returns the new `(theta, h)`.
#[allow(clippy::too_many_arguments)]
pub fn ess_update_theta_h<R: Rng>(
    y: &DVector<f64>,
    xs: &[DVector<f64>],
    p: &TPParams,
    kernel_log_mean: f64,
    kernel_log_var: f64,
    k0_squared: f64,
    batch: usize,
    subset: Option<&[usize]>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    p.validate()?;
    if !(kernel_log_var > 0.0 && k0_squared > 0.0) {
        return Err(Error::invalid(format!(
            "prior variances must be positive, got {kernel_log_var}, {k0_squared}"
        )));
    }
    let log_lik = |s: &[f64; 2]| {
        let cand = TPParams {
            theta: s[0].exp(),
            h: s[1],
            nu: p.nu,
            sigma2: p.sigma2,
        };
        if cand.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        minibatch_log_marginal(y, xs, &cand, batch, subset).unwrap_or(f64::NEG_INFINITY)
    };
    let out = ess_step(
        [p.theta.ln(), p.h],
        [kernel_log_mean, 0.0],
        [kernel_log_var.sqrt(), k0_squared.sqrt()],
        log_lik,
        SliceConfig::default().max_shrinks,
        rng,
    );
    Ok((out.state[0].exp(), out.state[1]))
}
