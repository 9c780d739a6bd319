//! Streaming inference: a population of particles, each carrying a full
//! mixture state (assignments, per-cluster process parameters, shared
//! hyperparameters), advanced one observation at a time.
//!
//! Per observation, every particle independently (and in parallel) assigns
//! the new input to a cluster, refreshes the concentration parameter, runs
//! one sweep of parameter moves on the receiving cluster, and accumulates
//! an importance-weight factor. The population is then renormalized and
//! multinomially resampled whenever the effective sample size drops below
//! a threshold fraction of the population.
//!
//! Cost per observation stays bounded as the stream grows: every likelihood
//! evaluation inside a particle update touches at most `batch` points of the
//! receiving cluster (see [`crate::tp::minibatch_log_marginal`]).

use crate::error::{Error, Result};
use crate::mixture::{
    crp_assignment_probs, input_log_density, sample_alpha, AlphaPrior, ClusterInputStats, NIWPrior,
};
use crate::rng::{stream, StreamDomain};
use crate::samplers::{
    ess_update_theta_h, gibbs_k0_squared, gibbs_sigma2, slice_sample_nu, GammaParams,
    InvGammaParams, SliceConfig,
};
use crate::tp::{draw_minibatch_indices, minibatch_log_marginal, tp_log_marginal, TPParams};
use crate::util::{effective_sample_size, normalize_log_probs, sample_categorical};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// All fixed hyperparameters of the generative model.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    /// Conjugate prior over each cluster's input distribution.
    pub niw: NIWPrior,
    /// Mean of the log-normal prior on the kernel parameter.
    pub kernel_log_mean: f64,
    /// Variance of the log-normal prior on the kernel parameter.
    pub kernel_log_var: f64,
    /// Gamma prior on the mixture concentration.
    pub alpha: AlphaPrior,
    /// Gamma prior on each cluster's degrees of freedom.
    pub nu_prior: GammaParams,
}

impl PriorConfig {
    pub fn default_for_dim(dim: usize) -> Self {
        PriorConfig {
            niw: NIWPrior::default_for_dim(dim),
            kernel_log_mean: 0.0,
            kernel_log_var: 1.0,
            alpha: AlphaPrior::default(),
            nu_prior: GammaParams {
                shape: 2.0,
                rate: 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.niw.validate()?;
        self.nu_prior.validate()?;
        if !(self.kernel_log_var > 0.0 && self.kernel_log_var.is_finite()) {
            return Err(Error::invalid("kernel log-prior variance must be positive"));
        }
        if !self.kernel_log_mean.is_finite() {
            return Err(Error::invalid("kernel log-prior mean must be finite"));
        }
        if !(self.alpha.shape > 0.0 && self.alpha.rate > 0.0) {
            return Err(Error::invalid("concentration prior must be positive"));
        }
        Ok(())
    }
}

/// Sampler knobs.
#[derive(Debug, Clone)]
pub struct SmcConfig {
    /// Population size.
    pub n_particles: usize,
    /// Likelihood evaluations touch at most this many points per cluster.
    pub batch: usize,
    /// Resample when the effective sample size drops below this fraction
    /// of the population; must lie in (0, 1].
    pub resample_threshold: f64,
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Monte Carlo draws for predictive quantiles.
    pub mc_draws: usize,
    /// Slice-sampler bracket knobs.
    pub slice: SliceConfig,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n_particles: 100,
            batch: 50,
            resample_threshold: 0.5,
            seed: 0,
            mc_draws: 4000,
            slice: SliceConfig::default(),
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("population must have at least one particle"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "resample threshold must lie in (0, 1], got {}",
                self.resample_threshold
            )));
        }
        if self.mc_draws == 0 {
            return Err(Error::invalid("predictive draws must be at least 1"));
        }
        Ok(())
    }
}

/// One mixture component inside a particle.
#[derive(Debug, Clone)]
pub struct ClusterState {
    /// Indices into the shared observation store, in arrival order.
    pub members: Vec<usize>,
    /// Streaming statistics of the member inputs.
    pub stats: ClusterInputStats,
    /// Process parameters of this cluster.
    pub params: TPParams,
}

/// One hypothesis about the clustering and all parameters.
#[derive(Debug, Clone)]
pub struct Particle {
    /// Cluster id of each observation, in arrival order.
    pub assignments: Vec<usize>,
    pub clusters: Vec<ClusterState>,
    /// Mixture concentration.
    pub alpha: f64,
    /// Shared prior variance of the per-cluster noise parameters.
    pub k0_squared: f64,
    /// Unnormalized log-weight.
    pub log_weight: f64,
    /// Stream lane: random draws for this particle come from
    /// `(seed, domain, lane, step)`. Reset to the slot index on resampling
    /// so copies of one ancestor diverge afterwards.
    pub lane: u64,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct StepSummary {
    /// Effective sample size after weighting, before any resampling.
    pub n_eff: f64,
    pub resampled: bool,
    /// Particles whose weight update failed or went non-finite this step.
    pub zeroed_weights: usize,
}

/// The particle population plus the shared observation store.
pub struct ParticleEnsemble {
    pub(crate) prior: PriorConfig,
    pub(crate) cfg: SmcConfig,
    pub(crate) xs: Vec<DVector<f64>>,
    pub(crate) ys: Vec<f64>,
    pub(crate) particles: Vec<Particle>,
    /// Normalized weights, kept in lockstep with `particles`.
    pub(crate) weights: Vec<f64>,
    pub(crate) zeroed_total: usize,
    pub(crate) resample_count: usize,
}

fn draw_cluster_params<R: Rng>(
    prior: &PriorConfig,
    k0_squared: f64,
    rng: &mut R,
) -> Result<TPParams> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let theta = (prior.kernel_log_mean + prior.kernel_log_var.sqrt() * normal.sample(rng)).exp();
    let h = k0_squared.sqrt() * normal.sample(rng);
    let nu = prior.nu_prior.sample(rng)?;
    let sigma2 = InvGammaParams {
        shape: 0.5 * nu,
        scale: 0.5 * nu,
    }
    .sample(rng)?;
    Ok(TPParams {
        theta,
        h,
        nu,
        sigma2,
    })
}

/// Gather a cluster's outputs and inputs from the shared store.
pub(crate) fn gather(
    members: &[usize],
    xs: &[DVector<f64>],
    ys: &[f64],
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let y = DVector::from_iterator(members.len(), members.iter().map(|&i| ys[i]));
    let x = members.iter().map(|&i| xs[i].clone()).collect();
    (y, x)
}

impl ParticleEnsemble {
    /// Start a run on its first observation: every particle draws its
    /// hyperparameters and first-cluster parameters from the priors and is
    /// weighted by the joint density of `(x1, y1)` under its draw.
    pub fn init(
        prior: PriorConfig,
        cfg: SmcConfig,
        x1: &DVector<f64>,
        y1: f64,
    ) -> Result<Self> {
        prior.validate()?;
        cfg.validate()?;
        if x1.len() != prior.niw.dim() {
            return Err(Error::DimensionMismatch {
                context: "first observation",
                expected: prior.niw.dim(),
                got: x1.len(),
            });
        }
        if !y1.is_finite() {
            return Err(Error::invalid("outputs must be finite"));
        }
        let dim = x1.len();
        // The first input always opens the first cluster, so its density
        // contribution is the prior predictive (common to all particles,
        // but kept in the weight for fidelity to the model).
        let empty = ClusterInputStats::empty(dim);
        let ld_first = input_log_density(&prior.niw, &empty, x1)?;

        let mut particles = Vec::with_capacity(cfg.n_particles);
        for lane in 0..cfg.n_particles as u64 {
            let mut rng = stream(cfg.seed, StreamDomain::Init, lane, 0);
            let alpha = GammaParams {
                shape: prior.alpha.shape,
                rate: prior.alpha.rate,
            }
            .sample(&mut rng)?;
            let k0_squared = InvGammaParams {
                shape: 0.5,
                scale: 0.5,
            }
            .sample(&mut rng)?;
            let params = draw_cluster_params(&prior, k0_squared, &mut rng)?;
            let mut stats = ClusterInputStats::empty(dim);
            stats.push(x1);
            let y = DVector::from_element(1, y1);
            let log_lik = tp_log_marginal(&y, std::slice::from_ref(x1), &params)?;
            particles.push(Particle {
                assignments: vec![0],
                clusters: vec![ClusterState {
                    members: vec![0],
                    stats,
                    params,
                }],
                alpha,
                k0_squared,
                log_weight: log_lik + ld_first,
                lane,
            });
        }
        let mut ens = ParticleEnsemble {
            prior,
            cfg,
            xs: vec![x1.clone()],
            ys: vec![y1],
            particles,
            weights: Vec::new(),
            zeroed_total: 0,
            resample_count: 0,
        };
        ens.normalize_weights()?;
        Ok(ens)
    }

    pub fn n_obs(&self) -> usize {
        self.ys.len()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Normalized particle weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn config(&self) -> &SmcConfig {
        &self.cfg
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.xs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.ys
    }

    /// Total particles zeroed over the whole run.
    pub fn zeroed_weight_count(&self) -> usize {
        self.zeroed_total
    }

    pub fn resample_count(&self) -> usize {
        self.resample_count
    }

    /// Highest-weight particle (first one on ties).
    pub fn map_particle(&self) -> &Particle {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        &self.particles[best]
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// Absorb one observation: assign it, refresh parameters, reweight,
    /// and resample if the population has degenerated.
    pub fn step(&mut self, x: &DVector<f64>, y: f64) -> Result<StepSummary> {
        if x.len() != self.prior.niw.dim() {
            return Err(Error::DimensionMismatch {
                context: "new observation",
                expected: self.prior.niw.dim(),
                got: x.len(),
            });
        }
        if !y.is_finite() {
            return Err(Error::invalid("outputs must be finite"));
        }
        let t = self.ys.len();
        self.xs.push(x.clone());
        self.ys.push(y);

        // Prior-predictive density of x is particle-independent.
        let empty = ClusterInputStats::empty(self.prior.niw.dim());
        let ld_new_cluster = input_log_density(&self.prior.niw, &empty, x)?;

        let prior = &self.prior;
        let cfg = &self.cfg;
        let xs = &self.xs;
        let ys = &self.ys;
        let failures: Vec<Option<Error>> = self
            .particles
            .par_iter_mut()
            .map(|particle| {
                match update_particle(particle, prior, cfg, xs, ys, t, x, ld_new_cluster) {
                    Ok(()) => None,
                    Err(e) => {
                        particle.log_weight = f64::NEG_INFINITY;
                        Some(e)
                    }
                }
            })
            .collect();
        let zeroed_now = failures.iter().flatten().count();

        let zeroed_by_norm = self.normalize_weights()?;
        let n_eff = self.effective_sample_size();
        let resampled = n_eff < self.cfg.resample_threshold * self.cfg.n_particles as f64;
        if resampled {
            self.resample();
        }
        Ok(StepSummary {
            n_eff,
            resampled,
            zeroed_weights: zeroed_now + zeroed_by_norm,
        })
    }

    /// Renormalize particle weights; non-finite log-weights (or update
    /// failures) zero the particle out. Errors only when the entire
    /// population has vanished. Returns how many particles were zeroed.
    fn normalize_weights(&mut self) -> Result<usize> {
        let mut zeroed = 0;
        for p in &mut self.particles {
            // NaN and +inf both poison the normalization; -inf is already
            // an honest zero.
            if p.log_weight.is_nan() || p.log_weight == f64::INFINITY {
                p.log_weight = f64::NEG_INFINITY;
            }
            if p.log_weight == f64::NEG_INFINITY {
                zeroed += 1;
            }
        }
        self.zeroed_total += zeroed;
        let logs: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        self.weights = normalize_log_probs(&logs).ok_or_else(|| {
            Error::Numerical("every particle weight vanished; the run cannot continue".into())
        })?;
        Ok(zeroed)
    }

    /// Overwrite the unnormalized log-weights, e.g. to study resampling
    /// behavior under a chosen weight profile. Non-finite entries zero the
    /// particle exactly as a failed update would.
    pub fn set_log_weights(&mut self, logs: &[f64]) -> Result<()> {
        if logs.len() != self.particles.len() {
            return Err(Error::DimensionMismatch {
                context: "log-weights",
                expected: self.particles.len(),
                got: logs.len(),
            });
        }
        for (p, &lw) in self.particles.iter_mut().zip(logs) {
            p.log_weight = lw;
        }
        self.normalize_weights().map(|_| ())
    }

    /// Multinomial resampling: draw a fresh population of ancestors in
    /// proportion to the weights, then reset to uniform weights. Stream
    /// lanes are reset to slot indices so copies diverge afterwards.
    pub fn resample(&mut self) {
        let t = (self.ys.len() - 1) as u64;
        let mut rng = stream(self.cfg.seed, StreamDomain::Resample, 0, t);
        let j = self.cfg.n_particles;
        let ancestors: Vec<usize> = (0..j)
            .map(|_| sample_categorical(&self.weights, &mut rng))
            .collect();
        let mut next = Vec::with_capacity(j);
        for (slot, &a) in ancestors.iter().enumerate() {
            let mut p = self.particles[a].clone();
            p.lane = slot as u64;
            p.log_weight = 0.0;
            next.push(p);
        }
        self.particles = next;
        self.weights = vec![1.0 / j as f64; j];
        self.resample_count += 1;
    }
}

/// The per-particle move at one observation. Order: assignment, then
/// concentration, then the receiving cluster's kernel/noise pair, then the
/// shared noise-prior variance, then the cluster's latent scale and degrees
/// of freedom, and finally the weight factor.
#[allow(clippy::too_many_arguments)]
fn update_particle(
    particle: &mut Particle,
    prior: &PriorConfig,
    cfg: &SmcConfig,
    xs: &[DVector<f64>],
    ys: &[f64],
    t: usize,
    x: &DVector<f64>,
    ld_new_cluster: f64,
) -> Result<()> {
    let mut rng = stream(cfg.seed, StreamDomain::Step, particle.lane, t as u64);

    // Assignment probabilities from pre-update statistics.
    let counts: Vec<usize> = particle.clusters.iter().map(|c| c.members.len()).collect();
    let mut densities = Vec::with_capacity(counts.len());
    for c in &particle.clusters {
        densities.push(input_log_density(&prior.niw, &c.stats, x)?);
    }
    let probs = crp_assignment_probs(particle.alpha, &counts, &densities, ld_new_cluster)?;
    let zi = sample_categorical(&probs, &mut rng);
    let is_new = zi == particle.clusters.len();
    let ld_choice = if is_new { ld_new_cluster } else { densities[zi] };

    if is_new {
        let params = draw_cluster_params(prior, particle.k0_squared, &mut rng)?;
        particle.clusters.push(ClusterState {
            members: Vec::new(),
            stats: ClusterInputStats::empty(prior.niw.dim()),
            params,
        });
    }
    let old_params = if is_new {
        None
    } else {
        Some(particle.clusters[zi].params)
    };
    {
        let cluster = &mut particle.clusters[zi];
        cluster.members.push(t);
        cluster.stats.push(x);
    }
    particle.assignments.push(zi);

    // Minibatch subsets for this update: one for the receiving cluster's
    // current data (shared by the parameter moves and the weight numerator),
    // one for its pre-arrival data (weight denominator).
    let n_new = particle.clusters[zi].members.len();
    let subset_new = draw_minibatch_indices(n_new, cfg.batch, &mut rng);
    let subset_old = if is_new {
        None
    } else {
        draw_minibatch_indices(n_new - 1, cfg.batch, &mut rng)
    };

    // Concentration refresh given the (possibly grown) table configuration.
    particle.alpha = sample_alpha(
        &prior.alpha,
        particle.alpha,
        particle.clusters.len(),
        t + 1,
        &mut rng,
    )?;

    // Parameter sweep on the receiving cluster.
    let (y_k, xs_k) = gather(&particle.clusters[zi].members, xs, ys);
    let (theta, h) = ess_update_theta_h(
        &y_k,
        &xs_k,
        &particle.clusters[zi].params,
        prior.kernel_log_mean,
        prior.kernel_log_var,
        particle.k0_squared,
        cfg.batch,
        subset_new.as_deref(),
        &mut rng,
    )?;
    particle.clusters[zi].params.theta = theta;
    particle.clusters[zi].params.h = h;

    let hs: Vec<f64> = particle.clusters.iter().map(|c| c.params.h).collect();
    particle.k0_squared = gibbs_k0_squared(&hs, &mut rng)?;

    particle.clusters[zi].params.sigma2 = gibbs_sigma2(
        &y_k,
        &xs_k,
        &particle.clusters[zi].params,
        cfg.batch,
        subset_new.as_deref(),
        &mut rng,
    )?;

    particle.clusters[zi].params.nu = slice_sample_nu(
        particle.clusters[zi].params.nu,
        particle.clusters[zi].params.sigma2,
        &prior.nu_prior,
        &cfg.slice,
        &mut rng,
    )?;

    // Weight factor: input density of the chosen branch times the ratio of
    // the receiving cluster's output likelihood (new data, new parameters)
    // to its pre-arrival likelihood (old data, old parameters).
    let log_new = minibatch_log_marginal(
        &y_k,
        &xs_k,
        &particle.clusters[zi].params,
        cfg.batch,
        subset_new.as_deref(),
    )?;
    let log_old = match old_params {
        None => 0.0,
        Some(ref op) => {
            let old_members = &particle.clusters[zi].members[..n_new - 1];
            let (y_old, xs_old) = gather(old_members, xs, ys);
            minibatch_log_marginal(&y_old, &xs_old, op, cfg.batch, subset_old.as_deref())?
        }
    };
    particle.log_weight += ld_choice + log_new - log_old;
    Ok(())
}
