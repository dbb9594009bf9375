//! Forward/successive-conditional sampler validation ("getting it right").
//!
//! Two ways of sampling the joint law of (latents, data) must agree:
//! independent forward draws (prior then likelihood), and a successive
//! chain that alternates a Gibbs sweep against the current data with data
//! regeneration from the current latents. Moment mismatches in tracked
//! statistics expose incorrect conditionals; z-scores use batch-means
//! standard errors on the autocorrelated successive side.

use crate::data::MaskSpec;
use crate::error::Result;
use crate::inference::{GibbsSampler, SweepOptions};
use crate::model::{generate_counts, sample_prior, CountMatrix, LatentState, ModelConfig};
use crate::rng::RngStream;

pub const TRACKED_STATISTICS: [&str; 5] = [
    "mean_theta",
    "mean_lambda",
    "mean_delta",
    "mean_pi_diagonal",
    "data_mean",
];

#[derive(Debug, Clone, Copy)]
pub struct GewekeOptions {
    /// 1.0 is the exact sampler; anything else corrupts the chain-state
    /// update rate, which a sound harness must flag.
    pub theta_rate_scale: f64,
}

impl Default for GewekeOptions {
    fn default() -> Self {
        GewekeOptions {
            theta_rate_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: &'static str,
    pub forward_mean: f64,
    pub successive_mean: f64,
    pub forward_se: f64,
    pub successive_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats
            .iter()
            .map(|s| s.z.abs())
            .fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GewekeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for s in &self.stats {
            writeln!(
                f,
                "{:>16}: forward {:>10.4} ({:.4}) successive {:>10.4} ({:.4}) z = {:+.2}",
                s.name, s.forward_mean, s.forward_se, s.successive_mean, s.successive_se, s.z
            )?;
        }
        Ok(())
    }
}

fn tracked(state: &LatentState, counts: &CountMatrix) -> [f64; 5] {
    let (k, t) = (state.k(), state.t());
    let mean_theta = state
        .theta
        .slice(ndarray::s![.., 1..])
        .mean()
        .unwrap_or(0.0);
    let mean_lambda = state.lambda.mean().unwrap_or(0.0);
    let mean_delta = state.delta.mean().unwrap_or(0.0);
    let mean_pi_diag = (0..k).map(|i| state.pi[(i, i)]).sum::<f64>() / k as f64;
    let data_mean = counts.values.iter().map(|&n| n as f64).sum::<f64>()
        / (counts.v() * counts.t()) as f64;
    let _ = t;
    [
        mean_theta,
        mean_lambda,
        mean_delta,
        mean_pi_diag,
        data_mean,
    ]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Squared standard error of the mean for iid draws.
fn iid_se2(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1).max(1) as f64;
    var / xs.len() as f64
}

/// Squared standard error of the mean by batch means, robust to the
/// autocorrelation of the successive chain.
fn batch_se2(xs: &[f64]) -> f64 {
    let n = xs.len();
    let n_batches = if n >= 1000 { 50 } else { n.min(10).max(1) };
    let size = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    let m = mean(&means);
    let var =
        means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_batches - 1).max(1) as f64;
    var / n_batches as f64
}

/// Compare forward and successive-conditional moments of the tracked
/// statistics. `n_forward` and `n_successive` are sample counts; both zero
/// gives an empty report.
pub fn geweke_test(
    config: &ModelConfig,
    n_forward: usize,
    n_successive: usize,
    opts: GewekeOptions,
    rng: &mut RngStream,
) -> Result<GewekeReport> {
    config.validate()?;
    if n_forward == 0 && n_successive == 0 {
        return Ok(GewekeReport::default());
    }

    let mut forward: Vec<[f64; 5]> = Vec::with_capacity(n_forward);
    {
        let mut stream = rng.substream(0);
        for _ in 0..n_forward {
            let state = sample_prior(config, &mut stream)?;
            let counts = generate_counts(config, &state, &mut stream)?;
            forward.push(tracked(&state, &counts));
        }
    }

    let mut successive: Vec<[f64; 5]> = Vec::with_capacity(n_successive);
    {
        let mut stream = rng.substream(1);
        let state0 = sample_prior(config, &mut stream)?;
        let counts0 = generate_counts(config, &state0, &mut stream)?;
        let mut sampler = GibbsSampler::new(counts0, MaskSpec::none(), config.clone(), &mut stream)?
            .with_options(SweepOptions {
                theta_rate_scale: opts.theta_rate_scale,
            });
        for _ in 0..n_successive {
            sampler.sweep(&mut stream)?;
            let counts = generate_counts(config, sampler.state(), &mut stream)?;
            successive.push(tracked(sampler.state(), &counts));
            sampler.replace_counts(counts)?;
        }
    }

    let mut report = GewekeReport::default();
    for (i, name) in TRACKED_STATISTICS.iter().enumerate() {
        let f: Vec<f64> = forward.iter().map(|s| s[i]).collect();
        let s: Vec<f64> = successive.iter().map(|s| s[i]).collect();
        if f.is_empty() || s.is_empty() {
            continue;
        }
        let fm = mean(&f);
        let sm = mean(&s);
        let f_se2 = iid_se2(&f);
        let s_se2 = batch_se2(&s);
        let z = (fm - sm) / (f_se2 + s_se2).sqrt().max(1e-300);
        report.stats.push(GewekeStat {
            name,
            forward_mean: fm,
            successive_mean: sm,
            forward_se: f_se2.sqrt(),
            successive_se: s_se2.sqrt(),
            z,
        });
    }
    Ok(report)
}
