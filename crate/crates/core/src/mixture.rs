//! Input-space mixture: conjugate normal-inverse-Wishart cluster model,
//! restaurant-process assignment probabilities, and the auxiliary-variable
//! update for the concentration parameter.
//!
//! Each cluster keeps streaming sufficient statistics (count, mean, scatter)
//! of the inputs assigned to it. The posterior-predictive density of a new
//! input under a cluster is a multivariate student-t whose parameters come
//! from those statistics; an empty-statistics cluster yields the prior
//! predictive used for the "open a new cluster" branch.

use crate::error::{Error, Result};
use crate::kernel::cholesky_with_jitter;
use crate::util::normalize_log_probs;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

/// Normal-inverse-Wishart prior over a cluster's input mean and covariance.
#[derive(Debug, Clone)]
pub struct NIWPrior {
    pub mu0: DVector<f64>,
    pub lambda0: f64,
    pub psi0: DMatrix<f64>,
    pub nu0: f64,
}

impl NIWPrior {
    /// Unit-informative default: zero mean, unit strength, identity scale,
    /// `dim + 2` degrees of freedom.
    pub fn default_for_dim(dim: usize) -> Self {
        NIWPrior {
            mu0: DVector::zeros(dim),
            lambda0: 1.0,
            psi0: DMatrix::identity(dim, dim),
            nu0: dim as f64 + 2.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("prior dimension must be at least 1"));
        }
        if self.psi0.nrows() != d || self.psi0.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "prior scale matrix",
                expected: d,
                got: self.psi0.nrows(),
            });
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid("prior strength must be positive"));
        }
        if !(self.nu0 > d as f64 - 1.0) || !self.nu0.is_finite() {
            return Err(Error::invalid(format!(
                "prior degrees of freedom must exceed dim - 1 = {}",
                d as f64 - 1.0
            )));
        }
        Ok(())
    }
}

/// Streaming sufficient statistics of the inputs assigned to a cluster.
#[derive(Debug, Clone)]
pub struct ClusterInputStats {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl ClusterInputStats {
    pub fn empty(dim: usize) -> Self {
        ClusterInputStats {
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sum of outer products of deviations from the running mean.
    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Absorb one input point (Welford update; the scatter stays exactly
    /// symmetric by construction).
    pub fn push(&mut self, x: &DVector<f64>) {
        debug_assert_eq!(x.len(), self.dim());
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = x - &self.mean;
        // scatter += 0.5 (delta delta2^T + delta2 delta^T)
        let outer = &delta * delta2.transpose();
        self.scatter += 0.5 * (&outer + outer.transpose());
    }
}

/// Parameters of a cluster's posterior-predictive student-t density. The
/// scale matrix already includes the predictive inflation factor, so the
/// density is the standard multivariate student-t with these parameters.
#[derive(Debug, Clone)]
pub struct PredictiveT {
    pub dof: f64,
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
}

/// Posterior-predictive parameters given the prior and a cluster's
/// statistics; empty statistics give the prior predictive.
pub fn posterior_predictive(prior: &NIWPrior, stats: &ClusterInputStats) -> Result<PredictiveT> {
    prior.validate()?;
    let d = prior.dim();
    if stats.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "cluster statistics",
            expected: d,
            got: stats.dim(),
        });
    }
    let np = stats.n as f64;
    let lambda_n = prior.lambda0 + np;
    let dof = prior.nu0 + np - d as f64 + 1.0;
    let mean = (&prior.mu0 * prior.lambda0 + stats.mean() * np) / lambda_n;
    let dev = stats.mean() - &prior.mu0;
    let psi_n = &prior.psi0
        + stats.scatter()
        + (prior.lambda0 * np / lambda_n) * (&dev * dev.transpose());
    let scale = psi_n * ((lambda_n + 1.0) / (lambda_n * dof));
    Ok(PredictiveT { dof, mean, scale })
}

/// Multivariate student-t log-density.
pub fn t_log_density(t: &PredictiveT, x: &DVector<f64>) -> Result<f64> {
    let d = t.mean.len();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            context: "density evaluation",
            expected: d,
            got: x.len(),
        });
    }
    let (chol, log_det, _) = cholesky_with_jitter(&t.scale)?;
    let centered = x - &t.mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&centered)
        .ok_or_else(|| Error::Numerical("singular predictive scale".into()))?;
    let quad = z.norm_squared();
    let df = t.dof;
    let dd = d as f64;
    Ok(ln_gamma(0.5 * (df + dd)) - ln_gamma(0.5 * df)
        - 0.5 * dd * (df * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * (df + dd) * (quad / df).ln_1p())
}

/// Posterior-predictive log-density of input `x` under a cluster's
/// statistics (prior predictive when the statistics are empty).
pub fn input_log_density(
    prior: &NIWPrior,
    stats: &ClusterInputStats,
    x: &DVector<f64>,
) -> Result<f64> {
    let t = posterior_predictive(prior, stats)?;
    t_log_density(&t, x)
}

/// Normalized assignment probabilities over `K` existing clusters plus a
/// new one (last entry). Existing clusters weigh as `count * density`, the
/// new cluster as `alpha * prior predictive density`; everything is
/// combined in log space.
pub fn crp_assignment_probs(
    alpha: f64,
    counts: &[usize],
    log_densities: &[f64],
    log_density_new: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("concentration must be positive, got {alpha}")));
    }
    if counts.len() != log_densities.len() {
        return Err(Error::DimensionMismatch {
            context: "assignment weights",
            expected: counts.len(),
            got: log_densities.len(),
        });
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("existing clusters must be nonempty"));
    }
    let mut log_w: Vec<f64> = counts
        .iter()
        .zip(log_densities)
        .map(|(&c, &ld)| (c as f64).ln() + ld)
        .collect();
    log_w.push(alpha.ln() + log_density_new);
    normalize_log_probs(&log_w)
        .ok_or_else(|| Error::Numerical("all assignment weights vanished".into()))
}

/// Gamma prior on the concentration parameter (shape/rate).
#[derive(Debug, Clone, Copy)]
pub struct AlphaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for AlphaPrior {
    fn default() -> Self {
        AlphaPrior { shape: 1.0, rate: 1.0 }
    }
}

/// The two-component Gamma mixture from which the concentration is redrawn,
/// given the auxiliary beta variable `rho`.
#[derive(Debug, Clone, Copy)]
pub struct AlphaMixture {
    /// Probability of the higher-shape component.
    pub pi_high: f64,
    pub shape_low: f64,
    pub shape_high: f64,
    pub rate: f64,
}

/// Mixture parameters for `K` occupied clusters after `n_obs` observations.
pub fn alpha_posterior_mixture(
    prior: &AlphaPrior,
    n_clusters: usize,
    n_obs: usize,
    rho: f64,
) -> Result<AlphaMixture> {
    if n_clusters == 0 || n_obs == 0 {
        return Err(Error::invalid("mixture update requires data and clusters"));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("auxiliary variable must lie in (0,1), got {rho}")));
    }
    let k = n_clusters as f64;
    let rate = prior.rate - rho.ln();
    let odds = (prior.shape + k - 1.0) / (n_obs as f64 * rate);
    Ok(AlphaMixture {
        pi_high: odds / (1.0 + odds),
        shape_low: prior.shape + k - 1.0,
        shape_high: prior.shape + k,
        rate,
    })
}

/// Draw from the mixture for a fixed auxiliary variable.
pub fn sample_alpha_given_rho<R: Rng>(
    prior: &AlphaPrior,
    n_clusters: usize,
    n_obs: usize,
    rho: f64,
    rng: &mut R,
) -> Result<f64> {
    let mix = alpha_posterior_mixture(prior, n_clusters, n_obs, rho)?;
    let shape = if rng.gen::<f64>() < mix.pi_high {
        mix.shape_high
    } else {
        mix.shape_low
    };
    let gamma = Gamma::new(shape, 1.0 / mix.rate)
        .map_err(|e| Error::Numerical(format!("gamma draw: {e}")))?;
    Ok(gamma.sample(rng))
}

/// One auxiliary-variable update of the concentration: draw
/// `rho ~ Beta(alpha + 1, n_obs)`, then redraw alpha from the induced
/// two-Gamma mixture.
pub fn sample_alpha<R: Rng>(
    prior: &AlphaPrior,
    alpha: f64,
    n_clusters: usize,
    n_obs: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("concentration must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha + 1.0, n_obs as f64)
        .map_err(|e| Error::Numerical(format!("beta draw: {e}")))?;
    let rho = beta.sample(rng).clamp(1e-15, 1.0 - 1e-15);
    sample_alpha_given_rho(prior, n_clusters, n_obs, rho, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    fn stats_from(points: &[DVector<f64>]) -> ClusterInputStats {
        let mut s = ClusterInputStats::empty(points[0].len());
        for p in points {
            s.push(p);
        }
        s
    }

    /// Direct batch mean/scatter, no streaming.
    fn batch_stats(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let d = points[0].len();
        let n = points.len() as f64;
        let mean = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / n;
        let scatter = points.iter().fold(DMatrix::zeros(d, d), |acc, p| {
            let dev = p - &mean;
            acc + &dev * dev.transpose()
        });
        (mean, scatter)
    }

    #[test]
    fn stats_single_point() {
        let s = stats_from(&[v(&[2.0, -1.0])]);
        assert_eq!(s.n(), 1);
        assert_eq!(s.mean(), &v(&[2.0, -1.0]));
        assert_eq!(s.scatter().iter().copied().sum::<f64>(), 0.0);
    }

    #[test]
    fn stats_incremental_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=3usize {
            for _ in 0..40 {
                let n = rng.gen_range(2..20);
                let pts: Vec<DVector<f64>> = (0..n)
                    .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-4.0..4.0)))
                    .collect();
                let s = stats_from(&pts);
                let (mean, scatter) = batch_stats(&pts);
                assert_relative_eq!(s.mean(), &mean, epsilon = 1e-10);
                assert_relative_eq!(s.scatter(), &scatter, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn prior_predictive_matches_hand_parameters() {
        // Unit prior in one dimension: dof 3, zero mean, squared scale 2/3.
        let prior = NIWPrior::default_for_dim(1);
        let t = posterior_predictive(&prior, &ClusterInputStats::empty(1)).unwrap();
        assert_abs_diff_eq!(t.dof, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.mean[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.scale[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        // Frozen density values checked against an independent evaluation.
        let at0 = input_log_density(&prior, &ClusterInputStats::empty(1), &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(at0, -0.7981562955694275, epsilon = 1e-12);
        let at25 = input_log_density(&prior, &ClusterInputStats::empty(1), &v(&[2.5])).unwrap();
        assert_abs_diff_eq!(at25, -3.632288335142716, epsilon = 1e-12);
    }

    #[test]
    fn one_point_posterior_matches_hand_parameters() {
        let prior = NIWPrior::default_for_dim(1);
        let x = 1.4;
        let t = posterior_predictive(&prior, &stats_from(&[v(&[x])])).unwrap();
        // strength 2, dof nu0 + 1 - 1 + 1 = 4, mean x/2,
        // scale (1 + x^2/2) * 3 / (2 * 4)
        assert_abs_diff_eq!(t.dof, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.mean[0], x / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            t.scale[(0, 0)],
            (1.0 + x * x / 2.0) * 3.0 / 8.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn density_is_symmetric_about_predictive_mean() {
        let prior = NIWPrior::default_for_dim(1);
        let stats = stats_from(&[v(&[1.0]), v(&[3.0])]);
        let t = posterior_predictive(&prior, &stats).unwrap();
        let m = t.mean[0];
        for delta in [0.3, 1.1, 4.0] {
            let hi = input_log_density(&prior, &stats, &v(&[m + delta])).unwrap();
            let lo = input_log_density(&prior, &stats, &v(&[m - delta])).unwrap();
            assert_abs_diff_eq!(hi, lo, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_at_origin_grows_with_repeated_origin_points() {
        let prior = NIWPrior::default_for_dim(1);
        let origin = v(&[0.0]);
        let mut prev = f64::NEG_INFINITY;
        let mut stats = ClusterInputStats::empty(1);
        for _ in 0..10 {
            stats.push(&origin);
            let ld = input_log_density(&prior, &stats, &origin).unwrap();
            assert!(ld > prev, "density should concentrate, {ld} <= {prev}");
            prev = ld;
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let prior = NIWPrior::default_for_dim(1);
        for stats in [
            ClusterInputStats::empty(1),
            stats_from(&[v(&[0.5]), v(&[-1.0]), v(&[2.0])]),
        ] {
            // Simpson's rule over a wide bracket; dof >= 3 tails decay fast
            // enough that the truncation error is far below the tolerance.
            let (a, b, m) = (-300.0, 300.0, 600_000usize);
            let hstep = (b - a) / m as f64;
            let f = |x: f64| input_log_density(&prior, &stats, &v(&[x])).unwrap().exp();
            let mut total = f(a) + f(b);
            for i in 1..m {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                total += w * f(a + i as f64 * hstep);
            }
            total *= hstep / 3.0;
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn mv_density_matches_univariate_formula_in_1d() {
        let t = PredictiveT {
            dof: 5.0,
            mean: v(&[0.7]),
            scale: DMatrix::from_element(1, 1, 1.9),
        };
        let x = 1.3;
        let z = (x - 0.7f64).powi(2) / 1.9;
        let expect = ln_gamma(3.0) - ln_gamma(2.5)
            - 0.5 * (5.0 * std::f64::consts::PI * 1.9).ln()
            - 3.0 * (z / 5.0).ln_1p();
        assert_abs_diff_eq!(t_log_density(&t, &v(&[x])).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn assignment_probs_counts_only_case() {
        // Equal densities cancel: weights reduce to (3, 1, alpha) / 5.
        let ld = -1.3;
        let probs = crp_assignment_probs(1.0, &[3, 1], &[ld, ld], ld).unwrap();
        assert_eq!(probs.len(), 3);
        assert_abs_diff_eq!(probs[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn assignment_probs_match_direct_space_oracle() {
        let counts = [4usize, 2, 7];
        let lds = [-0.8, -2.2, -1.1];
        let ld_new = -1.9;
        let alpha = 0.7;
        let probs = crp_assignment_probs(alpha, &counts, &lds, ld_new).unwrap();
        // Direct-space computation.
        let mut w: Vec<f64> = counts
            .iter()
            .zip(&lds)
            .map(|(&c, &ld)| c as f64 * ld.exp())
            .collect();
        w.push(alpha * ld_new.exp());
        let z: f64 = w.iter().sum();
        for (p, wi) in probs.iter().zip(&w) {
            assert_relative_eq!(*p, wi / z, max_relative = 1e-12);
        }
        assert_relative_eq!(probs.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn assignment_probs_relabeling_permutes() {
        let probs = crp_assignment_probs(0.5, &[2, 5], &[-1.0, -0.4], -1.2).unwrap();
        let swapped = crp_assignment_probs(0.5, &[5, 2], &[-0.4, -1.0], -1.2).unwrap();
        assert_abs_diff_eq!(probs[0], swapped[1], epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], swapped[0], epsilon = 1e-15);
        assert_abs_diff_eq!(probs[2], swapped[2], epsilon = 1e-15);
    }

    #[test]
    fn assignment_new_cluster_limits_in_alpha() {
        let counts = [3usize];
        let lds = [-1.0];
        let mut prev = 0.0;
        for alpha in [1e-6, 1e-3, 1.0, 1e3, 1e6] {
            let p_new = crp_assignment_probs(alpha, &counts, &lds, -1.0).unwrap()[1];
            assert!(p_new > prev);
            prev = p_new;
        }
        assert!(crp_assignment_probs(1e-12, &counts, &lds, -1.0).unwrap()[1] < 1e-9);
        assert!(crp_assignment_probs(1e12, &counts, &lds, -1.0).unwrap()[1] > 1.0 - 1e-9);
    }

    #[test]
    fn no_clusters_forces_new() {
        let probs = crp_assignment_probs(0.8, &[], &[], -2.0).unwrap();
        assert_eq!(probs, vec![1.0]);
    }

    #[test]
    fn alpha_mixture_worked_example() {
        // shape 1, rate 1, two clusters, ten observations, rho one-half.
        let mix = alpha_posterior_mixture(&AlphaPrior::default(), 2, 10, 0.5).unwrap();
        assert_abs_diff_eq!(mix.rate, 1.0 - 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(mix.pi_high, 0.10564418976703387, epsilon = 1e-10);
        assert_eq!(mix.shape_low, 2.0);
        assert_eq!(mix.shape_high, 3.0);
    }

    #[test]
    fn alpha_samples_positive_and_deterministic() {
        let prior = AlphaPrior::default();
        let mut a = ChaCha8Rng::seed_from_u64(10);
        let mut b = ChaCha8Rng::seed_from_u64(10);
        for i in 1..50usize {
            let x = sample_alpha(&prior, 1.0 + i as f64 * 0.1, 1 + i % 4, i, &mut a).unwrap();
            let y = sample_alpha(&prior, 1.0 + i as f64 * 0.1, 1 + i % 4, i, &mut b).unwrap();
            assert!(x > 0.0 && x.is_finite());
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn alpha_given_rho_matches_mixture_moments() {
        // Mean of the two-Gamma mixture: sum of pi * shape / rate.
        let prior = AlphaPrior::default();
        let (k, n, rho) = (2usize, 10usize, 0.5f64);
        let mix = alpha_posterior_mixture(&prior, k, n, rho).unwrap();
        let expect =
            mix.pi_high * mix.shape_high / mix.rate + (1.0 - mix.pi_high) * mix.shape_low / mix.rate;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = 200_000;
        let mean = (0..m)
            .map(|_| sample_alpha_given_rho(&prior, k, n, rho, &mut rng).unwrap())
            .sum::<f64>()
            / m as f64;
        assert_relative_eq!(mean, expect, max_relative = 0.02);
    }

    #[test]
    fn rejects_bad_arguments() {
        let prior = NIWPrior::default_for_dim(1);
        assert!(input_log_density(&prior, &ClusterInputStats::empty(2), &v(&[0.0])).is_err());
        assert!(input_log_density(&prior, &ClusterInputStats::empty(1), &v(&[0.0, 1.0])).is_err());
        assert!(crp_assignment_probs(0.0, &[1], &[-1.0], -1.0).is_err());
        assert!(crp_assignment_probs(1.0, &[0], &[-1.0], -1.0).is_err());
        assert!(crp_assignment_probs(1.0, &[1], &[-1.0, -2.0], -1.0).is_err());
        assert!(alpha_posterior_mixture(&AlphaPrior::default(), 0, 5, 0.5).is_err());
        assert!(alpha_posterior_mixture(&AlphaPrior::default(), 1, 5, 1.0).is_err());
        let bad = NIWPrior {
            mu0: DVector::zeros(2),
            lambda0: 1.0,
            psi0: DMatrix::identity(2, 2),
            nu0: 0.5,
        };
        assert!(bad.validate().is_err());
    }
}
