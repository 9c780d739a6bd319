//! Flat run configuration: a JSON document whose every key also exists as a
//! command-line flag of the same name. Defaults match the reference
//! experimental setup (100 particles, batch 50, resample threshold 0.5).

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use tpmix::samplers::GammaParams;
use tpmix::{AlphaPrior, NIWPrior, PriorConfig, SmcConfig};

/// How observations are scaled before they reach the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// Whole-series standardization up front (the benchmark protocol).
    Offline,
    /// Experimental: each point is scaled by the statistics of the points
    /// seen strictly before it.
    Running,
}

impl std::str::FromStr for StandardizeMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "offline" => Ok(StandardizeMode::Offline),
            "running" => Ok(StandardizeMode::Running),
            other => Err(format!("unknown standardize mode '{other}' (offline|running)")),
        }
    }
}

/// Everything a run needs besides the dataset path.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Particle population size.
    pub particles: usize,
    /// Likelihood minibatch budget per cluster.
    pub batch: usize,
    /// Resample when the effective sample size falls below this fraction
    /// of the population.
    pub threshold: f64,
    /// Master seed for every random stream in the run.
    pub seed: u64,
    /// Monte Carlo draws behind each predictive interval.
    pub mc_draws: usize,
    /// Seeds per benchmark (seed, seed+1, ...).
    pub repeats: usize,
    /// Worker threads for the particle loop; 0 picks the machine default.
    pub threads: usize,
    /// Input-model prior: mean location.
    pub mu0: f64,
    /// Input-model prior: mean-precision scale.
    pub lambda0: f64,
    /// Input-model prior: scatter scale (times the identity).
    pub psi0: f64,
    /// Input-model prior: scatter degrees of freedom.
    pub nu0: f64,
    /// Concentration prior shape.
    pub a0: f64,
    /// Concentration prior rate.
    pub b0: f64,
    /// Log-kernel prior mean.
    pub m0: f64,
    /// Log-kernel prior variance.
    pub s0sq: f64,
    /// Degrees-of-freedom prior shape.
    pub nu_shape: f64,
    /// Degrees-of-freedom prior rate.
    pub nu_rate: f64,
    /// Header name of the time column.
    pub time_column: String,
    /// Header name of the value column.
    pub value_column: String,
    pub standardize: StandardizeMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            particles: 100,
            batch: 50,
            threshold: 0.5,
            seed: 0,
            mc_draws: 4000,
            repeats: 5,
            threads: 0,
            mu0: 0.0,
            lambda0: 1.0,
            psi0: 1.0,
            nu0: 3.0,
            a0: 1.0,
            b0: 1.0,
            m0: 0.0,
            s0sq: 1.0,
            nu_shape: 2.0,
            nu_rate: 0.1,
            time_column: "t".into(),
            value_column: "y".into(),
            standardize: StandardizeMode::Offline,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(CliError::input("particles must be at least 1"));
        }
        if self.batch == 0 {
            return Err(CliError::input("batch must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CliError::input(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.mc_draws == 0 {
            return Err(CliError::input("mc_draws must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(CliError::input("repeats must be at least 1"));
        }
        self.prior_config()
            .validate()
            .and(self.smc_config().validate())
            .map_err(|e| CliError::input(e.to_string()))
    }

    /// Model priors for one-dimensional inputs.
    pub fn prior_config(&self) -> PriorConfig {
        let mut niw = NIWPrior::default_for_dim(1);
        niw.mu0[0] = self.mu0;
        niw.lambda0 = self.lambda0;
        niw.psi0[(0, 0)] = self.psi0;
        niw.nu0 = self.nu0;
        PriorConfig {
            niw,
            kernel_log_mean: self.m0,
            kernel_log_var: self.s0sq,
            alpha: AlphaPrior {
                shape: self.a0,
                rate: self.b0,
            },
            nu_prior: GammaParams {
                shape: self.nu_shape,
                rate: self.nu_rate,
            },
        }
    }

    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            n_particles: self.particles,
            batch: self.batch,
            resample_threshold: self.threshold,
            seed: self.seed,
            mc_draws: self.mc_draws,
            ..SmcConfig::default()
        }
    }
}
