//! The streaming evaluation protocol: initialize on the first observation,
//! then for every later observation predict first and update after. The
//! model never sees an output before it has predicted at that input.

use crate::config::{RunConfig, StandardizeMode};
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// One-step-ahead predictive summary handed back by a model.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Post-update diagnostics handed back by a model.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Effective sample size before any resampling this step.
    pub n_eff: f64,
    pub resampled: bool,
    /// Cluster the best particle assigned the newest observation to.
    pub cluster: usize,
}

/// Anything that can be driven by the streaming protocol. Methods return
/// engine errors; the harness attaches the observation index.
pub trait StreamModel {
    fn init(&mut self, x: f64, y: f64) -> tpmix::Result<()>;
    fn predict(&mut self, x: f64) -> tpmix::Result<Prediction>;
    fn update(&mut self, x: f64, y: f64) -> tpmix::Result<StepInfo>;
}

/// One evaluated stream position (observation 2 onward).
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 1-based observation index.
    pub i: usize,
    /// Model input as the model saw it.
    pub x: f64,
    /// True output, same scale as the prediction.
    pub y_true: f64,
    pub pred_mean: f64,
    pub lower95: f64,
    pub upper95: f64,
    /// Exactly `(pred_mean - y_true)^2`.
    pub sq_err: f64,
    pub cluster: usize,
    pub n_eff: f64,
    pub resampled: bool,
    /// Wall-clock time of predict + update for this step.
    pub micros: u64,
}

/// Run summary written as `summary.json`; field order is the file's key
/// order.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub dataset: String,
    pub n: usize,
    pub mse: Option<f64>,
    pub coverage95: Option<f64>,
    pub seed: u64,
    pub config: RunConfig,
    pub runtime_s: f64,
}

/// Streaming mean/variance scaler for the experimental running mode: each
/// point is scaled by the statistics of the points the model has already
/// absorbed (identity until there is history, shift-only until the
/// variance is informative).
struct RunningScaler {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningScaler {
    fn new() -> Self {
        RunningScaler {
            n: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn apply(&self, raw: f64) -> f64 {
        if self.n == 0 {
            return raw;
        }
        let var = self.m2 / self.n as f64;
        let scale = if var > 1e-12 { var.sqrt() } else { 1.0 };
        (raw - self.mean) / scale
    }

    fn push(&mut self, raw: f64) {
        self.n += 1;
        let d = raw - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (raw - self.mean);
    }
}

/// Drive a model over the series. In offline mode the dataset must already
/// be standardized; in running mode raw values are scaled on the fly.
/// Returns the per-step records and total runtime in seconds.
pub fn run_stream(
    ds: &Dataset,
    mode: StandardizeMode,
    model: &mut dyn StreamModel,
) -> Result<(Vec<StepRecord>, f64)> {
    let n = ds.ys.len();
    if n == 0 {
        return Err(CliError::input(format!("dataset '{}' is empty", ds.name)));
    }
    let started = Instant::now();
    let mut x_scaler = RunningScaler::new();
    let mut y_scaler = RunningScaler::new();
    let scale = |xs: &RunningScaler, ys: &RunningScaler, idx: usize| match mode {
        StandardizeMode::Offline => (ds.xs[idx], ds.ys[idx]),
        StandardizeMode::Running => (xs.apply(ds.xs[idx]), ys.apply(ds.ys[idx])),
    };

    let (x1, y1) = scale(&x_scaler, &y_scaler, 0);
    model
        .init(x1, y1)
        .map_err(|source| CliError::Engine { index: 1, source })?;
    x_scaler.push(ds.xs[0]);
    y_scaler.push(ds.ys[0]);

    let mut records = Vec::with_capacity(n.saturating_sub(1));
    for i in 2..=n {
        let idx = i - 1;
        let (x, y) = scale(&x_scaler, &y_scaler, idx);
        let step_started = Instant::now();
        let pred = model
            .predict(x)
            .map_err(|source| CliError::Engine { index: i, source })?;
        let info = model
            .update(x, y)
            .map_err(|source| CliError::Engine { index: i, source })?;
        let micros = step_started.elapsed().as_micros() as u64;
        records.push(StepRecord {
            i,
            x,
            y_true: y,
            pred_mean: pred.mean,
            lower95: pred.lower95,
            upper95: pred.upper95,
            sq_err: (pred.mean - y) * (pred.mean - y),
            cluster: info.cluster,
            n_eff: info.n_eff,
            resampled: info.resampled,
            micros,
        });
        x_scaler.push(ds.xs[idx]);
        y_scaler.push(ds.ys[idx]);
    }
    Ok((records, started.elapsed().as_secs_f64()))
}

/// Mean squared error and 95%-interval coverage over the records; `None`
/// when nothing was predicted.
pub fn summarize(records: &[StepRecord]) -> (Option<f64>, Option<f64>) {
    if records.is_empty() {
        return (None, None);
    }
    let n = records.len() as f64;
    let mse = records.iter().map(|r| r.sq_err).sum::<f64>() / n;
    let covered = records
        .iter()
        .filter(|r| r.lower95 <= r.y_true && r.y_true <= r.upper95)
        .count() as f64;
    (Some(mse), Some(covered / n))
}

pub const STEPS_HEADER: &str =
    "i,x,y_true,pred_mean,lower95,upper95,sq_err,cluster,n_eff,resampled,micros";

/// Write `steps.csv` and `summary.json` into `out_dir` (created if needed).
pub fn emit_results(records: &[StepRecord], summary: &RunSummary, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };

    let steps_path = out_dir.join("steps.csv");
    let mut steps = String::with_capacity(64 * (records.len() + 1));
    steps.push_str(STEPS_HEADER);
    steps.push('\n');
    for r in records {
        steps.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.i,
            r.x,
            r.y_true,
            r.pred_mean,
            r.lower95,
            r.upper95,
            r.sq_err,
            r.cluster,
            r.n_eff,
            r.resampled,
            r.micros
        ));
    }
    let mut f = std::fs::File::create(&steps_path).map_err(io_err(&steps_path))?;
    f.write_all(steps.as_bytes()).map_err(io_err(&steps_path))?;

    let summary_path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Internal(format!("summary serialization: {e}")))?;
    let mut f = std::fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    f.write_all(text.as_bytes()).map_err(io_err(&summary_path))?;
    f.write_all(b"\n").map_err(io_err(&summary_path))?;
    Ok(())
}
