//! Held-out prediction and the smoothing/forecasting experiment harness.

use crate::chains::{step, ChainState};
use crate::data::{
    compute_metrics, generate_zinb, load_counts, make_mask, MaskMode, MaskSpec, Metrics,
    ZinbConfig,
};
use crate::error::{Error, Result};
use crate::inference::{run_gibbs, trailing_delta, PosteriorTrace, Schedule};
use crate::model::{LatentState, ModelConfig};
use crate::rng::{streams, RngStream};
use crate::transition::{CommunityState, GsState, TransitionState};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Window of trailing burstiness scales averaged into the forecast scale.
pub const FORECAST_DELTA_WINDOW: usize = 5;

/// Default stochastic rollouts per retained sample when forecasting.
pub const DEFAULT_FORECAST_ROLLOUTS: usize = 8;

/// Analytic mean rates over a forecast horizon: iterate the chain's
/// conditional-mean recursion from the last fitted state and scale by the
/// trailing-window burstiness. Result is V x S.
pub fn forecast_mean_rates(state: &LatentState, config: &ModelConfig, s: usize) -> Array2<f64> {
    let (v, k) = (state.v(), state.k());
    let t_fit = state.t();
    let delta_fc = trailing_delta(&state.delta, FORECAST_DELTA_WINDOW);
    let mut theta_hat: Array1<f64> = state.theta.column(t_fit).to_owned();
    let mut rates = Array2::zeros((v, s));
    for si in 0..s {
        let drive = state.pi.dot(&theta_hat);
        let base = config.eps0_theta / config.tau;
        for ki in 0..k {
            theta_hat[ki] = match config.chain {
                crate::chains::ChainFamily::Nbrgmp => base + drive[ki] / config.psi,
                crate::chains::ChainFamily::Prgmc => base + drive[ki],
                crate::chains::ChainFamily::Gmc => drive[ki],
            };
        }
        for vi in 0..v {
            let mut acc = 0.0;
            for ki in 0..k {
                acc += state.lambda[ki] * state.phi[(vi, ki)] * theta_hat[ki];
            }
            rates[(vi, si)] = delta_fc * acc;
        }
    }
    rates
}

/// Posterior-mean estimates over the masked cells.
///
/// Smoothing: the mean of each retained sample's Poisson rate. Forecast:
/// each retained sample's chain is rolled `rollouts` times over the horizon
/// with [`crate::chains::step`], rates averaged across rollouts and
/// samples. Unmasked cells of the returned matrix are zero.
pub fn predict_heldout(
    trace: &PosteriorTrace,
    mask: &MaskSpec,
    rollouts: usize,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    if trace.samples.is_empty() {
        return Err(Error::Config("prediction from an empty trace".into()));
    }
    let config = &trace.config;
    let mut estimate = Array2::zeros((config.v, config.t));
    match mask.mode {
        MaskMode::Smoothing => {
            for sample in &trace.samples {
                for &(v, t) in &mask.cells {
                    estimate[(v, t)] += sample.poisson_rate(v, t);
                }
            }
            let n = trace.samples.len() as f64;
            for &(v, t) in &mask.cells {
                estimate[(v, t)] /= n;
            }
        }
        MaskMode::Forecast => {
            let rollouts = rollouts.max(1);
            let s = mask
                .horizon
                .ok_or_else(|| Error::Config("forecast mask without horizon".into()))?;
            let chain_config = {
                let mut c = config.chain_config();
                c.k = config.k;
                c
            };
            for (i, sample) in trace.samples.iter().enumerate() {
                let t_fit = sample.t();
                let delta_fc = trailing_delta(&sample.delta, FORECAST_DELTA_WINDOW);
                let mut acc = Array2::<f64>::zeros((config.v, s));
                for r in 0..rollouts {
                    let mut stream = rng.substream((i * rollouts + r) as u64);
                    let mut chain =
                        ChainState::from_theta(sample.theta.column(t_fit).to_owned());
                    for si in 0..s {
                        chain = step(&chain_config, &sample.pi.view(), &chain, &mut stream)?;
                        for vi in 0..config.v {
                            let mut rate = 0.0;
                            for ki in 0..config.k {
                                rate += sample.lambda[ki]
                                    * sample.phi[(vi, ki)]
                                    * chain.theta[ki];
                            }
                            acc[(vi, si)] += delta_fc * rate;
                        }
                    }
                }
                for &(v, t) in &mask.cells {
                    estimate[(v, t)] += acc[(v, t - t_fit)] / rollouts as f64;
                }
            }
            let n = trace.samples.len() as f64;
            for &(v, t) in &mask.cells {
                estimate[(v, t)] /= n;
            }
        }
    }
    Ok(estimate)
}

/// Posterior-mean graph-structured state: means of the magnitudes and
/// community factors, mask on by majority vote. Errors unless every sample
/// is graph-structured.
pub fn posterior_mean_gs(trace: &PosteriorTrace) -> Result<GsState> {
    if trace.samples.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    let first = match &trace.samples[0].transition {
        TransitionState::GraphStructured(gs) => gs,
        other => {
            return Err(Error::Config(format!(
                "graph extraction needs a graph-structured fit, found {}",
                other.variant()
            )))
        }
    };
    let k = first.d.nrows();
    let c = first.communities.c();
    let mut d = Array2::<f64>::zeros((k, k));
    let mut z_votes = Array2::<f64>::zeros((k, k));
    let mut m = Array2::<f64>::zeros((k, c));
    let mut r = Array1::<f64>::zeros(c);
    for sample in &trace.samples {
        let gs = match &sample.transition {
            TransitionState::GraphStructured(gs) => gs,
            other => {
                return Err(Error::Config(format!(
                    "mixed trace: expected graph-structured, found {}",
                    other.variant()
                )))
            }
        };
        d += &gs.d;
        z_votes += &gs.z.mapv(f64::from);
        m += &gs.communities.m;
        r += &gs.communities.r;
    }
    let n = trace.samples.len() as f64;
    d /= n;
    m /= n;
    r /= n;
    let z = z_votes.mapv(|v| u8::from(v / n >= 0.5));
    let mut w = z.mapv(|zi| zi as u64);
    for i in 0..k {
        w[(i, i)] = 1;
    }
    let mut z = z;
    for i in 0..k {
        z[(i, i)] = 1;
    }
    Ok(GsState {
        d,
        z,
        w,
        communities: CommunityState { m, r },
    })
}

/// Where an experiment's data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv { path: PathBuf },
    Zinb { config: ZinbConfig },
}

/// Mask parameters of an experiment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskParams {
    pub mode: MaskMode,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub horizon: Option<usize>,
}

/// One model entry: a display name and its config (dimensions resolved from
/// the data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub config: ModelConfig,
}

/// A full experiment: data, models, mask protocol, schedule, repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub data: DataSource,
    pub models: Vec<ModelEntry>,
    pub mask: MaskParams,
    pub schedule: Schedule,
    pub n_repeats: usize,
    pub seed: u64,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

fn default_schema() -> u32 {
    1
}
fn default_rollouts() -> usize {
    DEFAULT_FORECAST_ROLLOUTS
}

/// One (model, repeat) outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub repeat: usize,
    pub metrics: Metrics,
}

/// Aggregated results row: mean and standard deviation over repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub rows: Vec<ExperimentRow>,
    pub runs: Vec<RunResult>,
}

/// Run every (model x repeat) cell: fit, predict, score. Repeats are paired
/// — all models of a repeat share its data, mask and fit streams — and run
/// concurrently; aggregation is order-independent.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    if spec.models.is_empty() {
        return Err(Error::Config("experiment needs at least one model".into()));
    }
    if spec.n_repeats == 0 {
        return Err(Error::Config("experiment needs at least one repeat".into()));
    }
    spec.schedule.validate()?;
    let root = RngStream::new(spec.seed, streams::EXPERIMENT);
    let counts = match &spec.data {
        DataSource::Csv { path } => load_counts(path)?,
        DataSource::Zinb { config } => generate_zinb(config, &mut root.substream(0))?.0,
    };
    let task = match spec.mask.mode {
        MaskMode::Smoothing => "smoothing",
        MaskMode::Forecast => "forecast",
    };
    let jobs: Vec<(usize, usize)> = (0..spec.models.len())
        .flat_map(|m| (0..spec.n_repeats).map(move |r| (m, r)))
        .collect();
    let mut runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(mi, ri)| -> Result<RunResult> {
            let entry = &spec.models[mi];
            let config = entry.config.resolved_for(counts.v(), counts.t());
            config.validate()?;
            // Paired streams: the mask and fit streams depend only on the
            // repeat, so every model in a repeat sees the same split and
            // the same randomness.
            let repeat_stream = root.substream(1 + ri as u64);
            let mask = make_mask(
                &counts,
                spec.mask.mode,
                spec.mask.fraction,
                spec.mask.horizon,
                &mut repeat_stream.substream(0),
            )?;
            let mut fit_stream = repeat_stream.substream(1);
            let trace = run_gibbs(&counts, &mask, &config, spec.schedule, &mut fit_stream)?;
            let mut predict_stream = repeat_stream.substream(2);
            let estimate = predict_heldout(&trace, &mask, spec.rollouts, &mut predict_stream)?;
            let metrics = compute_metrics(&counts, &estimate, &mask)?;
            Ok(RunResult {
                model: entry.name.clone(),
                repeat: ri,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (a.model.as_str(), a.repeat).cmp(&(b.model.as_str(), b.repeat)));

    let mut rows = Vec::new();
    for entry in &spec.models {
        let maes: Vec<f64> = runs
            .iter()
            .filter(|r| r.model == entry.name)
            .map(|r| r.metrics.mae)
            .collect();
        let mres: Vec<f64> = runs
            .iter()
            .filter(|r| r.model == entry.name)
            .map(|r| r.metrics.mre)
            .collect();
        for (metric, vals) in [("mae", maes), ("mre", mres)] {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            rows.push(ExperimentRow {
                model: entry.name.clone(),
                task: task.to_string(),
                metric: metric.to_string(),
                mean,
                std,
            });
        }
    }
    Ok(ExperimentResults { rows, runs })
}

/// Results table CSV: model, task, metric, mean, std.
pub fn save_results_csv(results: &ExperimentResults, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(b"model,task,metric,mean,std\n")
        .map_err(|e| Error::io(path, e))?;
    for row in &results.rows {
        file.write_all(
            format!(
                "{},{},{},{},{}\n",
                row.model, row.task, row.metric, row.mean, row.std
            )
            .as_bytes(),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
