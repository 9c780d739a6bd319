//! One-step-ahead prediction from the weighted particle population.
//!
//! Each particle contributes a mixture over its existing clusters, gated by
//! cluster size times the cluster's input density at the query point; the
//! population-level predictive is the particle-weighted mixture of those
//! mixtures. The combined mean is computed analytically; interval endpoints
//! come from seeded Monte Carlo draws of the mixture, so conditioning work
//! per cluster stays bounded by the batch size.

use crate::error::{Error, Result};
use crate::mixture::{input_log_density, NIWPrior};
use crate::rng::{stream, StreamDomain};
use crate::smc::{gather, Particle, ParticleEnsemble};
use crate::tp::{draw_minibatch_indices, tp_predict, tp_predict_with_noise};
use crate::util::{normalize_log_probs, sample_categorical};
use nalgebra::DVector;
use rand_distr::{Distribution, StudentT};

/// One cluster's contribution to the population predictive.
#[derive(Debug, Clone, Copy)]
pub struct PredictiveComponent {
    /// Index of the particle this component came from.
    pub particle: usize,
    /// Cluster index inside that particle.
    pub cluster: usize,
    /// Particle weight times gate weight; components sum to one.
    pub weight: f64,
    pub cluster_size: usize,
    /// Student-t degrees of freedom of this component.
    pub dof: f64,
    pub mean: f64,
    /// Squared scale of this component.
    pub scale2: f64,
}

/// The population predictive at one query point.
#[derive(Debug, Clone)]
pub struct PredictiveResult {
    /// Exact mixture mean.
    pub mean: f64,
    /// 2.5% Monte Carlo quantile.
    pub lower95: f64,
    /// 97.5% Monte Carlo quantile.
    pub upper95: f64,
    pub components: Vec<PredictiveComponent>,
}

/// Within-particle gate weights at a query input: proportional to cluster
/// size times the cluster's posterior-predictive input density. Only
/// existing clusters participate; prediction never opens a new cluster.
pub fn gate_weights(particle: &Particle, prior: &NIWPrior, x: &DVector<f64>) -> Result<Vec<f64>> {
    let mut logs = Vec::with_capacity(particle.clusters.len());
    for c in &particle.clusters {
        let ld = input_log_density(prior, &c.stats, x)?;
        logs.push((c.members.len() as f64).ln() + ld);
    }
    normalize_log_probs(&logs)
        .ok_or_else(|| Error::Numerical("every gate weight vanished at the query point".into()))
}

/// Predict the output at `x_star` from the current population state.
///
/// Deterministic given the ensemble state: the subsample and Monte Carlo
/// streams are keyed by the master seed and the number of observations
/// absorbed so far. The ensemble itself is left untouched.
pub fn predict(ens: &ParticleEnsemble, x_star: &DVector<f64>) -> Result<PredictiveResult> {
    let prior = ens.prior();
    let cfg = ens.config();
    if x_star.len() != prior.niw.dim() {
        return Err(Error::DimensionMismatch {
            context: "query input",
            expected: prior.niw.dim(),
            got: x_star.len(),
        });
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query input must be finite"));
    }
    let t = ens.n_obs() as u64;
    let star = std::slice::from_ref(x_star);

    let mut components = Vec::new();
    for (j, (particle, &w)) in ens.particles().iter().zip(ens.weights()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let gates = gate_weights(particle, &prior.niw, x_star)?;
        let mut subset_rng = stream(cfg.seed, StreamDomain::PredictSubset, particle.lane, t);
        for (k, (cluster, &gate)) in particle.clusters.iter().zip(&gates).enumerate() {
            let (y_k, xs_k) = gather(&cluster.members, ens.inputs(), ens.outputs());
            let n_k = y_k.len();
            let p = &cluster.params;
            let pred = match draw_minibatch_indices(n_k, cfg.batch, &mut subset_rng) {
                None => tp_predict(&y_k, &xs_k, star, p)?,
                Some(idx) => {
                    // Condition on a bounded subsample under the inflated
                    // noise it carries in the subsampled model; the test
                    // point keeps the ordinary noise level.
                    let ratio = n_k as f64 / cfg.batch as f64;
                    let y_u = DVector::from_iterator(cfg.batch, idx.iter().map(|&i| y_k[i]));
                    let xs_u: Vec<DVector<f64>> =
                        idx.iter().map(|&i| xs_k[i].clone()).collect();
                    tp_predict_with_noise(&y_u, &xs_u, star, p, ratio * p.h.abs(), p.h.abs())?
                }
            };
            components.push(PredictiveComponent {
                particle: j,
                cluster: k,
                weight: w * gate,
                cluster_size: n_k,
                dof: pred.dof,
                mean: pred.mean[0],
                scale2: pred.scale[(0, 0)].max(0.0),
            });
        }
    }
    if components.is_empty() {
        return Err(Error::Numerical("no live component to predict from".into()));
    }

    let mean: f64 = components.iter().map(|c| c.weight * c.mean).sum();

    // Interval endpoints by Monte Carlo over the mixture.
    let comp_weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
    let mut draw_rng = stream(cfg.seed, StreamDomain::PredictDraw, 0, t);
    let m = cfg.mc_draws;
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let c = &components[sample_categorical(&comp_weights, &mut draw_rng)];
        let t_draw = StudentT::new(c.dof)
            .map_err(|e| Error::Numerical(format!("student-t draw: {e}")))?
            .sample(&mut draw_rng);
        draws.push(c.mean + c.scale2.sqrt() * t_draw);
    }
    draws.sort_by(|a, b| a.total_cmp(b));
    let lo_idx = ((0.025 * m as f64).floor() as usize).min(m - 1);
    let hi_idx = ((0.975 * m as f64).ceil() as usize).max(1).min(m) - 1;
    Ok(PredictiveResult {
        mean,
        lower95: draws[lo_idx],
        upper95: draws[hi_idx],
        components,
    })
}
