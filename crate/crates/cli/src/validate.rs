//! Fast built-in self-checks behind `tpmix validate`: a reduced version of
//! the repository's heavyweight test suites, runnable anywhere the binary
//! is, finishing in seconds. Any failure exits with the numerical-failure
//! code.

use crate::config::{RunConfig, StandardizeMode};
use crate::dataset::{Affine, Dataset};
use crate::engine::EngineModel;
use crate::error::{CliError, Result};
use crate::harness::{run_stream, summarize};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use tpmix::mixture::{alpha_posterior_mixture, input_log_density, ClusterInputStats};
use tpmix::samplers::gibbs_k0_squared;
use tpmix::tp::{minibatch_log_likelihood, tp_log_marginal, tp_predict};
use tpmix::{NIWPrior, ParticleEnsemble, PriorConfig, SmcConfig, TPParams};

type Check = (&'static str, fn() -> std::result::Result<(), String>);

const CHECKS: &[Check] = &[
    ("heavy-dof limit matches the Gaussian process", heavy_dof_degeneracy),
    ("joint density factors into marginal times conditional", chain_rule),
    ("subsampled likelihood is exact when the cluster fits", minibatch_exact_when_fits),
    ("streaming input statistics equal batch recomputation", streaming_input_stats),
    ("concentration posterior mixture worked example", concentration_worked_example),
    ("noise-prior conditional has the right mean", noise_prior_moments),
    ("resampling copies ancestors in proportion to weight", resample_proportionality),
    ("fixed seed reproduces a run bit for bit", run_determinism),
    ("smooth series is predicted well below the trivial baseline", smooth_series_mse),
];

/// Run every check, printing one line each; error out (exit code 2) if any
/// fails.
pub fn run_all() -> Result<()> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("ok      {name}"),
            Err(msg) => {
                println!("FAILED  {name}: {msg}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Internal(format!(
            "{failed} of {} self-checks failed",
            CHECKS.len()
        )));
    }
    println!("all {} self-checks passed", CHECKS.len());
    Ok(())
}

fn random_case(seed: u64, n: usize) -> (DVector<f64>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(1, |_, _| rng.gen_range(-3.0..3.0)))
        .collect();
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    (y, xs)
}

fn params(theta: f64, h: f64, nu: f64) -> TPParams {
    TPParams {
        theta,
        h,
        nu,
        sigma2: 1.0,
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn heavy_dof_degeneracy() -> std::result::Result<(), String> {
    for seed in 0..20u64 {
        let n = 2 + (seed as usize % 6);
        let (y, xs) = random_case(seed, n);
        let (theta, noise) = (0.7, 0.3);
        let heavy =
            tp_log_marginal(&y, &xs, &params(theta, noise, 1e6)).map_err(|e| e.to_string())?;
        // Dense zero-mean Gaussian log-density, assembled independently.
        let mut k = DMatrix::from_fn(n, n, |i, j| {
            (-0.5 * theta * (&xs[i] - &xs[j]).norm_squared()).exp()
        });
        for i in 0..n {
            k[(i, i)] += noise;
        }
        let inv = k.clone().try_inverse().ok_or("singular oracle matrix")?;
        let quad = y.dot(&(&inv * &y));
        let gauss = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * k.determinant().ln()
            - 0.5 * quad;
        ensure((heavy - gauss).abs() < 1e-3, || {
            format!("seed {seed}: |{heavy} - {gauss}| >= 1e-3")
        })?;
    }
    Ok(())
}

fn chain_rule() -> std::result::Result<(), String> {
    fn t_log_pdf(x: f64, dof: f64, loc: f64, scale2: f64) -> f64 {
        let z = (x - loc) * (x - loc) / scale2;
        ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof)
            - 0.5 * (dof * std::f64::consts::PI * scale2).ln()
            - 0.5 * (dof + 1.0) * (z / dof).ln_1p()
    }
    for seed in 0..10u64 {
        let (y, xs) = random_case(seed + 40, 2);
        let p = params(0.9, 0.25, 3.5);
        let joint = tp_log_marginal(&y, &xs, &p).map_err(|e| e.to_string())?;
        let y1 = DVector::from_element(1, y[0]);
        let marg = tp_log_marginal(&y1, &xs[..1], &p).map_err(|e| e.to_string())?;
        let pred = tp_predict(&y1, &xs[..1], &xs[1..], &p).map_err(|e| e.to_string())?;
        let cond = t_log_pdf(y[1], pred.dof, pred.mean[0], pred.scale[(0, 0)]);
        ensure((joint - (marg + cond)).abs() < 1e-8, || {
            format!("seed {seed}: joint {joint} vs factored {}", marg + cond)
        })?;
    }
    Ok(())
}

fn minibatch_exact_when_fits() -> std::result::Result<(), String> {
    for seed in 0..10u64 {
        let n = 3 + (seed as usize % 5);
        let (y, xs) = random_case(seed + 90, n);
        let p = params(0.8, 0.2, 5.0);
        let exact = tp_log_marginal(&y, &xs, &p).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budgeted =
            minibatch_log_likelihood(&y, &xs, &p, n + 2, &mut rng).map_err(|e| e.to_string())?;
        ensure(budgeted.to_bits() == exact.to_bits(), || {
            format!("seed {seed}: {budgeted} != {exact}")
        })?;
    }
    Ok(())
}

fn streaming_input_stats() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let dim = 1 + case % 2;
        let n = rng.gen_range(1..25);
        let points: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-4.0..4.0)))
            .collect();
        let mut stats = ClusterInputStats::empty(dim);
        for p in &points {
            stats.push(p);
        }
        // Batch recomputation.
        let mean = points.iter().fold(DVector::zeros(dim), |a, p| a + p) / n as f64;
        let mut scatter = DMatrix::zeros(dim, dim);
        for p in &points {
            let d = p - &mean;
            scatter += &d * d.transpose();
        }
        let prior = NIWPrior::default_for_dim(dim);
        let probe = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));
        let inc = input_log_density(&prior, &stats, &probe).map_err(|e| e.to_string())?;
        let mut batch_stats = ClusterInputStats::empty(dim);
        for p in &points {
            batch_stats.push(p);
        }
        let err_mean = (stats.mean() - &mean).norm();
        let err_scatter = (stats.scatter() - &scatter).norm();
        ensure(err_mean < 1e-10 && err_scatter < 1e-10, || {
            format!("case {case}: mean drift {err_mean}, scatter drift {err_scatter}")
        })?;
        let again = input_log_density(&prior, &batch_stats, &probe).map_err(|e| e.to_string())?;
        ensure((inc - again).abs() < 1e-10, || {
            format!("case {case}: density drift {inc} vs {again}")
        })?;
    }
    Ok(())
}

fn concentration_worked_example() -> std::result::Result<(), String> {
    let prior = tpmix::AlphaPrior {
        shape: 1.0,
        rate: 1.0,
    };
    let mix = alpha_posterior_mixture(&prior, 2, 10, 0.5).map_err(|e| e.to_string())?;
    let expect = 0.10564418976703387;
    ensure((mix.pi_high - expect).abs() < 1e-12, || {
        format!("pi {} vs {expect}", mix.pi_high)
    })
}

fn noise_prior_moments() -> std::result::Result<(), String> {
    // Five noise parameters: the conditional is inverse-gamma with shape 3,
    // whose mean is scale / 2.
    let hs = [0.3, -0.5, 0.8, 0.1, -0.2];
    let sum_sq: f64 = hs.iter().map(|h| h * h).sum();
    let scale = (1.0 + sum_sq) / (2.0 * hs.len() as f64);
    let expect = scale / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 20_000;
    let mean = (0..draws)
        .map(|_| gibbs_k0_squared(&hs, &mut rng).unwrap())
        .sum::<f64>()
        / draws as f64;
    ensure((mean - expect).abs() < 0.05 * expect, || {
        format!("sample mean {mean} vs {expect}")
    })
}

fn resample_proportionality() -> std::result::Result<(), String> {
    let target = [0.7f64, 0.2, 0.1];
    let reps = 2000u64;
    let mut counts = [0usize; 3];
    for seed in 0..reps {
        let mut ens = ParticleEnsemble::init(
            PriorConfig::default_for_dim(1),
            SmcConfig {
                n_particles: 3,
                seed,
                mc_draws: 10,
                ..SmcConfig::default()
            },
            &DVector::from_element(1, 0.0),
            0.3,
        )
        .map_err(|e| e.to_string())?;
        let tags: Vec<f64> = ens.particles().iter().map(|p| p.alpha).collect();
        let logs: Vec<f64> = target.iter().map(|w| w.ln()).collect();
        ens.set_log_weights(&logs).map_err(|e| e.to_string())?;
        ens.resample();
        for p in ens.particles() {
            let a = tags
                .iter()
                .position(|&t| t == p.alpha)
                .ok_or("untraceable ancestor")?;
            counts[a] += 1;
        }
    }
    let total = (reps * 3) as f64;
    for (c, w) in counts.iter().zip(target) {
        let freq = *c as f64 / total;
        let sd = (w * (1.0 - w) / total).sqrt();
        ensure((freq - w).abs() < 4.0 * sd, || {
            format!("ancestor frequency {freq} vs weight {w}")
        })?;
    }
    Ok(())
}

fn run_determinism() -> std::result::Result<(), String> {
    let drive = || -> std::result::Result<Vec<u64>, String> {
        let mut ens = ParticleEnsemble::init(
            PriorConfig::default_for_dim(1),
            SmcConfig {
                n_particles: 8,
                batch: 10,
                seed: 21,
                mc_draws: 50,
                ..SmcConfig::default()
            },
            &DVector::from_element(1, -1.2),
            0.4,
        )
        .map_err(|e| e.to_string())?;
        for i in 1..12 {
            ens.step(&DVector::from_element(1, -1.2 + 0.2 * i as f64), (i as f64).sin())
                .map_err(|e| e.to_string())?;
        }
        Ok(ens.weights().iter().map(|w| w.to_bits()).collect())
    };
    ensure(drive()? == drive()?, || "two identical runs diverged".into())
}

fn smooth_series_mse() -> std::result::Result<(), String> {
    // A standardized smooth series must be predicted far better than the
    // trivial zero predictor (whose MSE is 1 by construction).
    let n = 30;
    let raw_y: Vec<f64> = (1..=n).map(|i| (i as f64 * 0.4).sin()).collect();
    let raw_x: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let standardize = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        vals.iter().map(|x| (x - m) / v.sqrt()).collect::<Vec<f64>>()
    };
    let ds = Dataset {
        name: "sine".into(),
        xs: standardize(&raw_x),
        ys: standardize(&raw_y),
        times: raw_x,
        x_transform: Affine::identity(),
        y_transform: Affine::identity(),
    };
    let cfg = RunConfig {
        particles: 8,
        batch: 10,
        seed: 1,
        mc_draws: 200,
        ..RunConfig::default()
    };
    let mut model = EngineModel::new(&cfg);
    let (records, _) =
        run_stream(&ds, StandardizeMode::Offline, &mut model).map_err(|e| e.to_string())?;
    let (mse, _) = summarize(&records);
    let mse = mse.ok_or("no predictions")?;
    ensure(mse < 0.9, || format!("one-step MSE {mse} not below 0.9"))
}
