//! The full generative model: Poisson observations over a latent chain of
//! weighted components.
//!
//! Observation v at time step t is
//! `n_v^(t) ~ Pois(delta^(t) * sum_k lambda_k phi_vk theta_k^(t))` where
//! * `delta^(t)` is a per-step burstiness scale (shared across steps when
//!   the process is stationary),
//! * `phi` columns live on the simplex and give each component's loading
//!   over dimensions,
//! * `lambda` are component weights under a shrinking hierarchical prior
//!   (`lambda_k ~ Gam(eps0_lambda/K + g_k, beta)`, `g_k ~ Pois(gamma/K)`),
//! * `theta` evolves by the configured chain family with `theta^(0) =
//!   lambda`, through a column-stochastic transition whose Dirichlet
//!   concentrations come from the plain, factor-structured or
//!   graph-structured prior.

use crate::chains::ChainFamily;
use crate::dist::{sample_dirichlet, sample_gamma, sample_poisson};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::transition::{CommunityState, FsState, GsState, TransitionState, TransitionVariant};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub const STATE_SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    1
}
fn default_eps0() -> f64 {
    0.1
}
fn default_eps0_theta() -> f64 {
    0.1
}
fn default_eps0_lambda() -> f64 {
    1.0
}
fn default_unit() -> f64 {
    1.0
}
fn default_horizon() -> usize {
    2
}
fn default_chain() -> ChainFamily {
    ChainFamily::Nbrgmp
}
fn default_variant() -> TransitionVariant {
    TransitionVariant::Plain
}

/// Full model configuration. Serializes as the JSON config-file format the
/// CLI accepts; every field has a weakly-informative default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Observed dimensions; 0 in a config file means "take it from the data".
    #[serde(default)]
    pub v: usize,
    /// Time steps; 0 in a config file means "take it from the data".
    #[serde(default)]
    pub t: usize,
    /// Latent components; 0 means the default rule (100 if V >= 1000 else 25).
    #[serde(default)]
    pub k: usize,
    /// Community truncation for the factor/graph priors; 0 means C = K.
    #[serde(default)]
    pub c: usize,
    #[serde(default = "default_variant")]
    pub variant: TransitionVariant,
    #[serde(default = "default_chain")]
    pub chain: ChainFamily,
    #[serde(default)]
    pub stationary_delta: bool,
    /// Generic hyperprior constant.
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Chain shape offset; 0 enables the zero-absorbing regime.
    #[serde(default = "default_eps0_theta")]
    pub eps0_theta: f64,
    /// Total component-weight mass hyperparameter.
    #[serde(default = "default_eps0_lambda")]
    pub eps0_lambda: f64,
    #[serde(default = "default_unit")]
    pub tau: f64,
    #[serde(default = "default_unit")]
    pub psi: f64,
    /// Gibbs-update psi each sweep instead of holding it fixed.
    #[serde(default)]
    pub sample_psi: bool,
    /// Random-walk Metropolis update of log tau each sweep.
    #[serde(default)]
    pub sample_tau: bool,
    /// Community weight hyperparameters: r_c ~ Gam(r0/C, c0).
    #[serde(default = "default_unit")]
    pub r0: f64,
    #[serde(default = "default_unit")]
    pub c0: f64,
    /// Community loading hyperparameters: m_kc ~ Gam(a_hat, b_hat).
    #[serde(default = "default_unit")]
    pub a_hat: f64,
    #[serde(default = "default_unit")]
    pub b_hat: f64,
    /// Forecast horizon S.
    #[serde(default = "default_horizon")]
    pub forecast_horizon: usize,
}

impl ModelConfig {
    /// A config with all hyperparameters at their defaults.
    pub fn new(v: usize, t: usize, k: usize, c: usize) -> Self {
        ModelConfig {
            schema_version: 1,
            v,
            t,
            k,
            c,
            variant: TransitionVariant::Plain,
            chain: ChainFamily::Nbrgmp,
            stationary_delta: false,
            eps0: default_eps0(),
            eps0_theta: default_eps0_theta(),
            eps0_lambda: default_eps0_lambda(),
            tau: 1.0,
            psi: 1.0,
            sample_psi: false,
            sample_tau: false,
            r0: 1.0,
            c0: 1.0,
            a_hat: 1.0,
            b_hat: 1.0,
            forecast_horizon: default_horizon(),
        }
    }

    /// Default latent dimension rule: K = 100 for V >= 1000, else 25; C = K.
    pub fn default_k_for(v: usize) -> usize {
        if v >= 1000 {
            100
        } else {
            25
        }
    }

    /// Fill unresolved dimensions from the data shape and the default rules
    /// (K by the V-threshold rule, C = K).
    pub fn resolved_for(&self, v: usize, t: usize) -> ModelConfig {
        let mut c = self.clone();
        if c.v == 0 {
            c.v = v;
        }
        if c.t == 0 {
            c.t = t;
        }
        if c.k == 0 {
            c.k = Self::default_k_for(c.v);
        }
        if c.c == 0 {
            c.c = c.k;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.v == 0 || self.t == 0 || self.k == 0 || self.c == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive (V={}, T={}, K={}, C={})",
                self.v, self.t, self.k, self.c
            )));
        }
        for (name, v, allow_zero) in [
            ("eps0", self.eps0, false),
            ("eps0_theta", self.eps0_theta, true),
            ("eps0_lambda", self.eps0_lambda, false),
            ("tau", self.tau, false),
            ("psi", self.psi, false),
            ("r0", self.r0, false),
            ("c0", self.c0, false),
            ("a_hat", self.a_hat, false),
            ("b_hat", self.b_hat, false),
        ] {
            if !v.is_finite() || v < 0.0 || (!allow_zero && v == 0.0) {
                return Err(Error::Config(format!("hyperparameter {name} = {v} invalid")));
            }
        }
        if self.forecast_horizon == 0 {
            return Err(Error::Config("forecast horizon must be positive".into()));
        }
        if self.chain == ChainFamily::Gmc {
            return Err(Error::Config(
                "inference supports the prgmc and nbrgmp chain families; gmc is simulation-only"
                    .into(),
            ));
        }
        if self.sample_psi && self.chain != ChainFamily::Nbrgmp {
            return Err(Error::Config(
                "sample_psi requires the nbrgmp chain".into(),
            ));
        }
        Ok(())
    }

    /// Chain parameters implied by this model config.
    pub fn chain_config(&self) -> crate::chains::ChainConfig {
        crate::chains::ChainConfig {
            family: self.chain,
            k: self.k,
            tau: self.tau,
            tau0: self.tau,
            psi: self.psi,
            eps0_theta: self.eps0_theta,
        }
    }
}

/// A V x T matrix of counts with row and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub values: Array2<u64>,
    pub dim_labels: Vec<String>,
    pub time_labels: Vec<String>,
}

impl CountMatrix {
    pub fn new(values: Array2<u64>) -> Self {
        let (v, t) = values.dim();
        CountMatrix {
            values,
            dim_labels: (0..v).map(|i| format!("v{i}")).collect(),
            time_labels: (0..t).map(|i| format!("t{}", i + 1)).collect(),
        }
    }

    pub fn v(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    /// Copy of the first `t` columns, keeping labels.
    pub fn truncate_time(&self, t: usize) -> CountMatrix {
        CountMatrix {
            values: self.values.slice(ndarray::s![.., ..t]).to_owned(),
            dim_labels: self.dim_labels.clone(),
            time_labels: self.time_labels[..t].to_vec(),
        }
    }
}

/// Every latent variable of the model. `theta` is K x (T+1) with column 0
/// holding the component weights (`theta^(0) = lambda` exactly); `h`/`h_hat`
/// are the chain's latent counts and their gamma mixing masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentState {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub theta: Array2<f64>,
    pub h: Array2<u64>,
    pub h_hat: Array2<f64>,
    pub lambda: Array1<f64>,
    pub g: Array1<u64>,
    /// Total-activity hyperparameter (rate of the g_k Poissons times K).
    pub gamma_weight: f64,
    /// Rate of the component-weight gammas.
    pub beta_rate: f64,
    /// Per-step burstiness scale; all entries equal when stationary.
    pub delta: Array1<f64>,
    /// V x K loading matrix, columns on the simplex.
    pub phi: Array2<f64>,
    /// K x K column-stochastic transition; entry (k1, k2) is the effect of
    /// source k2 on target k1.
    pub pi: Array2<f64>,
    pub transition: TransitionState,
    pub psi: f64,
    pub tau: f64,
}

impl LatentState {
    pub fn k(&self) -> usize {
        self.theta.nrows()
    }

    pub fn t(&self) -> usize {
        self.theta.ncols() - 1
    }

    pub fn v(&self) -> usize {
        self.phi.nrows()
    }

    /// theta column for 0-based time step t (column t+1 of storage).
    pub fn theta_at(&self, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.theta.column(t + 1)
    }

    /// Poisson rate of cell (v, t): `delta^(t) sum_k lambda_k phi_vk theta_k^(t)`.
    pub fn poisson_rate(&self, v: usize, t: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.k() {
            acc += self.lambda[k] * self.phi[(v, k)] * self.theta[(k, t + 1)];
        }
        self.delta[t] * acc
    }

    /// Consistency checks on simplex columns, the lambda/theta tie, and the
    /// transition prior structure. Used by tests and the fuzz suite.
    pub fn check_invariants(&self) -> Result<()> {
        for k in 0..self.k() {
            let s: f64 = self.phi.column(k).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Structural(format!("phi column {k} sums to {s}")));
            }
            let s: f64 = self.pi.column(k).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Structural(format!("pi column {k} sums to {s}")));
            }
            if self.theta[(k, 0)] != self.lambda[k] {
                return Err(Error::Structural(format!(
                    "theta column 0 detached from lambda at component {k}"
                )));
            }
        }
        if self.theta.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Structural("negative or non-finite theta".into()));
        }
        self.transition.check_invariants()?;
        Ok(())
    }
}

/// Draw every latent variable from the prior.
pub fn sample_prior(config: &ModelConfig, rng: &mut RngStream) -> Result<LatentState> {
    config.validate()?;
    let (v, t, k) = (config.v, config.t, config.k);

    let gamma_weight = sample_gamma(config.eps0, config.eps0, rng)?;
    let beta_rate = sample_gamma(config.eps0, config.eps0, rng)?;
    let mut g = Array1::zeros(k);
    let mut lambda = Array1::zeros(k);
    for i in 0..k {
        g[i] = sample_poisson(gamma_weight / k as f64, rng)?;
        lambda[i] = sample_gamma(
            config.eps0_lambda / k as f64 + g[i] as f64,
            beta_rate,
            rng,
        )?;
    }

    let mut phi = Array2::zeros((v, k));
    for col in 0..k {
        let column = sample_dirichlet(&vec![config.eps0; v], rng)?;
        for (row, &x) in column.iter().enumerate() {
            phi[(row, col)] = x;
        }
    }

    let mut delta = Array1::zeros(t);
    if config.stationary_delta {
        let d = sample_gamma(config.eps0, config.eps0, rng)?;
        delta.fill(d);
    } else {
        for i in 0..t {
            delta[i] = sample_gamma(config.eps0, config.eps0, rng)?;
        }
    }

    let transition = sample_transition_prior(config, rng)?;
    let mut pi = Array2::zeros((k, k));
    for col in 0..k {
        let conc = transition.concentration_column(col, k);
        let column = sample_dirichlet(&conc, rng)?;
        for (row, &x) in column.iter().enumerate() {
            pi[(row, col)] = x;
        }
    }

    // Chain rollout with theta^(0) = lambda.
    let mut theta = Array2::zeros((k, t + 1));
    let mut h = Array2::zeros((k, t));
    let mut h_hat = Array2::zeros((k, t));
    for i in 0..k {
        theta[(i, 0)] = lambda[i];
    }
    for step in 0..t {
        for i in 0..k {
            let mut drive = 0.0;
            for j in 0..k {
                drive += pi[(i, j)] * theta[(j, step)];
            }
            let shape = config.tau * drive;
            match config.chain {
                ChainFamily::Nbrgmp => {
                    h_hat[(i, step)] = sample_gamma(shape, config.psi, rng)?;
                    h[(i, step)] = sample_poisson(h_hat[(i, step)], rng)?;
                }
                ChainFamily::Prgmc => {
                    h[(i, step)] = sample_poisson(shape, rng)?;
                }
                ChainFamily::Gmc => unreachable!("rejected by validate"),
            }
            theta[(i, step + 1)] = sample_gamma(
                config.eps0_theta + h[(i, step)] as f64,
                config.tau,
                rng,
            )?;
        }
    }

    Ok(LatentState {
        schema_version: STATE_SCHEMA_VERSION,
        theta,
        h,
        h_hat,
        lambda,
        g,
        gamma_weight,
        beta_rate,
        delta,
        phi,
        pi,
        transition,
        psi: config.psi,
        tau: config.tau,
    })
}

/// Draw the transition-prior block (communities, concentrations, masks).
pub fn sample_transition_prior(
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<TransitionState> {
    let (k, c) = (config.k, config.c);
    match config.variant {
        TransitionVariant::Plain => Ok(TransitionState::Plain {
            concentration: config.eps0,
        }),
        TransitionVariant::FactorStructured => {
            let communities = CommunityState::sample_prior(k, c, config, rng)?;
            let mu_self = sample_gamma(config.eps0, config.eps0, rng)?;
            let mut a = Array2::zeros((k, k));
            for k1 in 0..k {
                for k2 in 0..k {
                    if k1 == k2 {
                        // Shifted Poisson keeps every column's self-transition
                        // concentration strictly positive.
                        a[(k1, k2)] = 1 + sample_poisson(mu_self, rng)?;
                    } else {
                        a[(k1, k2)] = sample_poisson(communities.pair_rate(k1, k2), rng)?;
                    }
                }
            }
            Ok(TransitionState::FactorStructured(FsState {
                a,
                mu_self,
                communities,
            }))
        }
        TransitionVariant::GraphStructured => {
            let communities = CommunityState::sample_prior(k, c, config, rng)?;
            let mut d = Array2::zeros((k, k));
            let mut z = Array2::zeros((k, k));
            let mut w = Array2::zeros((k, k));
            for k1 in 0..k {
                for k2 in 0..k {
                    d[(k1, k2)] = sample_gamma(config.eps0, config.eps0, rng)?;
                    if k1 == k2 {
                        // Forced self-edge; w is a dummy 1 to keep z = 1(w >= 1).
                        z[(k1, k2)] = 1;
                        w[(k1, k2)] = 1;
                    } else {
                        w[(k1, k2)] = sample_poisson(communities.pair_rate(k1, k2), rng)?;
                        z[(k1, k2)] = u8::from(w[(k1, k2)] >= 1);
                    }
                }
            }
            Ok(TransitionState::GraphStructured(GsState {
                d,
                z,
                w,
                communities,
            }))
        }
    }
}

/// Poisson draw per cell from the state's rates.
pub fn generate_counts(
    config: &ModelConfig,
    state: &LatentState,
    rng: &mut RngStream,
) -> Result<CountMatrix> {
    if state.k() != config.k || state.v() != config.v || state.t() != config.t {
        return Err(Error::Config("state dimensions do not match config".into()));
    }
    let mut values = Array2::zeros((config.v, config.t));
    for v in 0..config.v {
        for t in 0..config.t {
            let rate = state.poisson_rate(v, t);
            if !rate.is_finite() {
                return Err(Error::Degeneracy(format!(
                    "non-finite Poisson rate at cell ({v}, {t})"
                )));
            }
            values[(v, t)] = sample_poisson(rate, rng)?;
        }
    }
    Ok(CountMatrix::new(values))
}
