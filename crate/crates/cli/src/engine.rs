//! Adapter driving the particle engine through the streaming protocol.

use crate::config::RunConfig;
use crate::harness::{Prediction, StepInfo, StreamModel};
use nalgebra::DVector;
use tpmix::{ParticleEnsemble, PriorConfig, SmcConfig};

pub struct EngineModel {
    prior: PriorConfig,
    cfg: SmcConfig,
    ens: Option<ParticleEnsemble>,
}

impl EngineModel {
    pub fn new(cfg: &RunConfig) -> Self {
        EngineModel {
            prior: cfg.prior_config(),
            cfg: cfg.smc_config(),
            ens: None,
        }
    }

    /// Same configuration, different master seed (for repeat runs).
    pub fn with_seed(cfg: &RunConfig, seed: u64) -> Self {
        let mut model = EngineModel::new(cfg);
        model.cfg.seed = seed;
        model
    }

    pub fn ensemble(&self) -> Option<&ParticleEnsemble> {
        self.ens.as_ref()
    }

    fn live(&mut self) -> tpmix::Result<&mut ParticleEnsemble> {
        self.ens
            .as_mut()
            .ok_or_else(|| tpmix::Error::invalid("model used before init"))
    }
}

impl StreamModel for EngineModel {
    fn init(&mut self, x: f64, y: f64) -> tpmix::Result<()> {
        let x = DVector::from_element(1, x);
        self.ens = Some(ParticleEnsemble::init(
            self.prior.clone(),
            self.cfg.clone(),
            &x,
            y,
        )?);
        Ok(())
    }

    fn predict(&mut self, x: f64) -> tpmix::Result<Prediction> {
        let ens = self.live()?;
        let result = tpmix::predict(ens, &DVector::from_element(1, x))?;
        Ok(Prediction {
            mean: result.mean,
            lower95: result.lower95,
            upper95: result.upper95,
        })
    }

    fn update(&mut self, x: f64, y: f64) -> tpmix::Result<StepInfo> {
        let ens = self.live()?;
        let summary = ens.step(&DVector::from_element(1, x), y)?;
        let cluster = *ens
            .map_particle()
            .assignments
            .last()
            .expect("populated ensemble");
        Ok(StepInfo {
            n_eff: summary.n_eff,
            resampled: summary.resampled,
            cluster,
        })
    }
}
