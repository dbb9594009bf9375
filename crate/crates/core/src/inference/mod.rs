//! The Gibbs sampler: a compositional sweep over every latent variable,
//! missing-data handling, trace recording, and the forward/successive
//! correctness harness in [`geweke`].
//!
//! Sweep order (frozen; each move is a valid conditional of the current
//! augmented state):
//! 1. allocate observation tokens over components (masked cells skipped);
//! 2. with the chain's mixing masses marginalized, draw per-step tables —
//!    CRT counts of `h` against the transition mass for the NB chain, `h`
//!    itself for the Poisson chain — and split them over source components;
//! 3. update the chain states `theta` forward in time (conjugate given
//!    tokens, own count, and next-step tables);
//! 4. update the component-weight block (lambda, g, gamma, beta);
//! 5. update the transition-prior block (FS/GS concentrations, masks,
//!    communities) from the aggregated tables;
//! 6. update the transition columns (Dirichlet);
//! 7. discard the tables and re-instantiate the chain's latent counts
//!    (`h_hat` then `h`) against the refreshed state;
//! 8. update loading columns, burstiness scales, and optionally psi/tau.
//!
//! The tables must be consumed by steps 3–6 before `h` is re-instantiated:
//! they were drawn against the current `h`, and the weight/transition
//! conditionals are only the stated conjugate forms while that coupling
//! holds.

pub mod geweke;
pub mod updates;

use crate::chains::ChainFamily;
use crate::data::{MaskMode, MaskSpec};
use crate::dist::{
    sample_bessel, sample_crt, sample_dirichlet, sample_gamma, sample_multinomial_thinning,
};
use crate::error::{Error, Result};
use crate::model::{sample_prior, CountMatrix, LatentState, ModelConfig};
use crate::rng::RngStream;
use crate::transition::update_transition_block;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use updates::*;

/// Density-evaluation floor for exact zeros; never applied to samples.
const LOG_FLOOR: f64 = 1e-300;

/// Iteration schedule: total sweeps, burn-in, and retention stride.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub total: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Schedule {
    pub fn new(total: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let s = Schedule {
            total,
            burn_in,
            thin,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total {
            return Err(Error::Config(format!(
                "burn-in {} must be below total {}",
                self.burn_in, self.total
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning stride must be positive".into()));
        }
        Ok(())
    }

    /// Number of retained samples: floor((total - burn_in) / thin).
    pub fn retained(&self) -> usize {
        (self.total - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

impl Default for Schedule {
    /// The reference protocol: 5000 sweeps, 3000 burn-in, thin 10.
    fn default() -> Self {
        Schedule {
            total: 5000,
            burn_in: 3000,
            thin: 10,
        }
    }
}

/// Per-iteration diagnostics recorded for every sweep (including burn-in).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub heldout_mae: f64,
    pub heldout_mre: f64,
    pub joint_loglik: f64,
}

/// Thinned post-burn-in snapshots plus per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorTrace {
    pub config: ModelConfig,
    pub schedule: Schedule,
    pub mask: MaskSpec,
    pub samples: Vec<LatentState>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Observation-token statistics and chain tables regenerated each sweep.
#[derive(Debug, Clone)]
pub struct AuxiliaryCounts {
    /// V x K: tokens per (dimension, component), aggregated over time.
    pub phi_tokens: Array2<u64>,
    /// K x T: tokens per (component, step).
    pub comp_tokens: Array2<u64>,
    /// K x T: per-step table counts at each target component.
    pub tables: Array2<u64>,
    /// K x T: tables attributed to each source component per step.
    pub table_source_sums: Array2<u64>,
    /// K x K: tables aggregated over steps, (target, source).
    pub table_totals: Array2<u64>,
}

impl AuxiliaryCounts {
    fn new(v: usize, k: usize, t: usize) -> Self {
        AuxiliaryCounts {
            phi_tokens: Array2::zeros((v, k)),
            comp_tokens: Array2::zeros((k, t)),
            tables: Array2::zeros((k, t)),
            table_source_sums: Array2::zeros((k, t)),
            table_totals: Array2::zeros((k, k)),
        }
    }

    fn reset_tokens(&mut self) {
        self.phi_tokens.fill(0);
        self.comp_tokens.fill(0);
    }

    fn reset_tables(&mut self) {
        self.tables.fill(0);
        self.table_source_sums.fill(0);
        self.table_totals.fill(0);
    }
}

/// Sweep knobs; `theta_rate_scale` deliberately mis-scales the chain-state
/// update rate for sampler-validation mutation tests and must stay 1.0 in
/// real use.
#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub theta_rate_scale: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            theta_rate_scale: 1.0,
        }
    }
}

/// The sampler over one count matrix and mask.
pub struct GibbsSampler {
    config: ModelConfig,
    counts: CountMatrix,
    mask: MaskSpec,
    state: LatentState,
    aux: AuxiliaryCounts,
    /// K x T observed loading mass per component and step.
    obs_mass: Array2<f64>,
    /// Masked dimensions per step.
    masked_by_t: Vec<Vec<usize>>,
    /// Observed (v, t, n) cells with n > 0.
    nonzero_cells: Vec<(usize, usize, u64)>,
    /// Observed count total per step.
    observed_col_totals: Vec<u64>,
    /// K x T transition drive (Pi theta^(t-1))_k, refreshed with the chain.
    drive: Array2<f64>,
    opts: SweepOptions,
    weights_buf: Vec<f64>,
}

impl GibbsSampler {
    /// Initializes the latent state from the prior. `config.t` must match
    /// `counts`; forecast trimming happens in [`run_gibbs`].
    pub fn new(
        counts: CountMatrix,
        mask: MaskSpec,
        config: ModelConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        config.validate()?;
        if counts.v() != config.v || counts.t() != config.t {
            return Err(Error::Config(format!(
                "counts are {}x{} but the config says {}x{}",
                counts.v(),
                counts.t(),
                config.v,
                config.t
            )));
        }
        for &(v, t) in &mask.cells {
            if v >= config.v || t >= config.t {
                return Err(Error::Config(format!(
                    "mask cell ({v}, {t}) out of range"
                )));
            }
        }
        let state = sample_prior(&config, rng)?;
        let (v, k, t) = (config.v, config.k, config.t);
        let mut sampler = GibbsSampler {
            config,
            counts,
            mask,
            state,
            aux: AuxiliaryCounts::new(v, k, t),
            obs_mass: Array2::zeros((k, t)),
            masked_by_t: Vec::new(),
            nonzero_cells: Vec::new(),
            observed_col_totals: Vec::new(),
            drive: Array2::zeros((k, t)),
            opts: SweepOptions::default(),
            weights_buf: vec![0.0; k],
        };
        sampler.rebuild_data_caches();
        sampler.recompute_obs_mass();
        Ok(sampler)
    }

    pub fn with_options(mut self, opts: SweepOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    /// Replace the latent state (warm starts, targeted tests). Dimensions
    /// must match the config.
    pub fn set_state(&mut self, state: LatentState) -> Result<()> {
        if state.k() != self.config.k || state.v() != self.config.v || state.t() != self.config.t
        {
            return Err(Error::Config("state dimensions do not match config".into()));
        }
        self.state = state;
        self.recompute_obs_mass();
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn aux(&self) -> &AuxiliaryCounts {
        &self.aux
    }

    /// Swap in a fresh count matrix of the same shape (used by the
    /// successive-conditional harness, which regenerates data each step).
    pub fn replace_counts(&mut self, counts: CountMatrix) -> Result<()> {
        if counts.v() != self.config.v || counts.t() != self.config.t {
            return Err(Error::Config("replacement counts shape mismatch".into()));
        }
        self.counts = counts;
        self.rebuild_data_caches();
        Ok(())
    }

    fn rebuild_data_caches(&mut self) {
        let (v, t) = (self.config.v, self.config.t);
        self.masked_by_t = vec![Vec::new(); t];
        for &(mv, mt) in &self.mask.cells {
            self.masked_by_t[mt].push(mv);
        }
        self.nonzero_cells.clear();
        self.observed_col_totals = vec![0; t];
        for ti in 0..t {
            for vi in 0..v {
                if self.mask.is_masked(vi, ti) {
                    continue;
                }
                let n = self.counts.values[(vi, ti)];
                if n > 0 {
                    self.nonzero_cells.push((vi, ti, n));
                    self.observed_col_totals[ti] += n;
                }
            }
        }
    }

    /// obs_mass[k][t] = sum of phi[v][k] over observed v at step t,
    /// computed as 1 minus the masked mass.
    pub fn recompute_obs_mass(&mut self) {
        let (k, t) = (self.config.k, self.config.t);
        for ki in 0..k {
            for ti in 0..t {
                self.obs_mass[(ki, ti)] = 1.0;
            }
        }
        for (ti, masked) in self.masked_by_t.iter().enumerate() {
            for &vi in masked {
                for ki in 0..k {
                    self.obs_mass[(ki, ti)] -= self.state.phi[(vi, ki)];
                }
            }
        }
        self.obs_mass.mapv_inplace(|x| x.max(0.0));
    }

    /// Chain-table exposure: tau ln(1 + 1/psi) for the NB chain (counts
    /// reach the transition mass through CRT tables), tau for the Poisson
    /// chain (counts are the tables).
    fn chain_exposure(&self) -> f64 {
        match self.config.chain {
            ChainFamily::Nbrgmp => self.state.tau * (1.0 + 1.0 / self.state.psi).ln(),
            ChainFamily::Prgmc => self.state.tau,
            ChainFamily::Gmc => unreachable!("rejected by validate"),
        }
    }

    fn refresh_drive(&mut self) {
        let (k, t) = (self.config.k, self.config.t);
        for ti in 0..t {
            for k1 in 0..k {
                let mut acc = 0.0;
                for k2 in 0..k {
                    acc += self.state.pi[(k1, k2)] * self.state.theta[(k2, ti)];
                }
                self.drive[(k1, ti)] = acc;
            }
        }
    }

    /// One full sweep.
    pub fn sweep(&mut self, rng: &mut RngStream) -> Result<()> {
        self.allocate_tokens(rng)?;
        self.sample_chain_tables(rng)?;
        self.sample_theta(rng)?;
        self.sample_lambda_block(rng)?;
        update_transition_block(
            &mut self.state.transition,
            &self.aux.table_totals,
            &self.config,
            rng,
        )?;
        self.sample_pi(rng)?;
        self.reinstantiate_chain(rng)?;
        self.sample_phi(rng)?;
        self.recompute_obs_mass();
        self.sample_delta(rng)?;
        if self.config.sample_psi {
            self.sample_psi(rng)?;
        }
        if self.config.sample_tau {
            self.sample_tau_mh(rng)?;
        }
        Ok(())
    }

    /// Multinomial token allocation over components for every observed cell
    /// with a positive count. Masked cells contribute nothing.
    pub fn allocate_tokens(&mut self, rng: &mut RngStream) -> Result<()> {
        self.aux.reset_tokens();
        let k = self.config.k;
        for idx in 0..self.nonzero_cells.len() {
            let (v, t, n) = self.nonzero_cells[idx];
            let mut wsum = 0.0;
            for ki in 0..k {
                let w = self.state.lambda[ki]
                    * self.state.phi[(v, ki)]
                    * self.state.theta[(ki, t + 1)];
                self.weights_buf[ki] = w;
                wsum += w;
            }
            if wsum <= 0.0 {
                return Err(Error::Degeneracy(format!(
                    "component collapse: cell ({v}, {t}) holds {n} counts but every \
                     component weight is zero"
                )));
            }
            let split = sample_multinomial_thinning(n, &self.weights_buf, rng)?;
            for (ki, &x) in split.iter().enumerate() {
                if x > 0 {
                    self.aux.phi_tokens[(v, ki)] += x;
                    self.aux.comp_tokens[(ki, t)] += x;
                }
            }
        }
        Ok(())
    }

    /// Backward pass over steps drawing the chain tables and splitting them
    /// over source components. For the NB chain the table count is
    /// CRT(h, tau * drive); for the Poisson chain the latent count itself is
    /// the table mass.
    pub fn sample_chain_tables(&mut self, rng: &mut RngStream) -> Result<()> {
        self.aux.reset_tables();
        self.refresh_drive();
        let (k, t) = (self.config.k, self.config.t);
        for ti in (0..t).rev() {
            for k1 in 0..k {
                let h = self.state.h[(k1, ti)];
                if h == 0 {
                    continue;
                }
                let shape_mass = self.state.tau * self.drive[(k1, ti)];
                let l = match self.config.chain {
                    ChainFamily::Nbrgmp => {
                        if shape_mass <= 0.0 {
                            return Err(Error::Degeneracy(format!(
                                "latent count {h} at ({k1}, {ti}) with zero transition mass"
                            )));
                        }
                        sample_crt(h, shape_mass, rng)?
                    }
                    ChainFamily::Prgmc => h,
                    ChainFamily::Gmc => unreachable!(),
                };
                if l == 0 {
                    continue;
                }
                self.aux.tables[(k1, ti)] = l;
                for k2 in 0..k {
                    self.weights_buf[k2] =
                        self.state.pi[(k1, k2)] * self.state.theta[(k2, ti)];
                }
                let split = sample_multinomial_thinning(l, &self.weights_buf, rng)?;
                for (k2, &x) in split.iter().enumerate() {
                    if x > 0 {
                        self.aux.table_source_sums[(k2, ti)] += x;
                        self.aux.table_totals[(k1, k2)] += x;
                    }
                }
            }
        }
        Ok(())
    }

    /// Forward pass over chain states. Conjugate given the latent count,
    /// the step's tokens, and the next step's incoming tables.
    pub fn sample_theta(&mut self, rng: &mut RngStream) -> Result<()> {
        let (k, t) = (self.config.k, self.config.t);
        let exposure = self.chain_exposure();
        for ti in 0..t {
            for ki in 0..k {
                let future = if ti + 1 < t {
                    self.aux.table_source_sums[(ki, ti + 1)]
                } else {
                    0
                };
                let post = theta_posterior(
                    self.config.eps0_theta,
                    self.state.h[(ki, ti)],
                    self.aux.comp_tokens[(ki, ti)],
                    future,
                    self.state.tau,
                    self.state.delta[ti] * self.state.lambda[ki] * self.obs_mass[(ki, ti)],
                    if ti + 1 < t { exposure } else { 0.0 },
                );
                self.state.theta[(ki, ti + 1)] =
                    sample_gamma(post.shape, post.rate * self.opts.theta_rate_scale, rng)?;
            }
        }
        Ok(())
    }

    /// Component weights and their hierarchy: lambda, then g (Bessel), then
    /// gamma and beta. Keeps theta's initial column tied to lambda.
    pub fn sample_lambda_block(&mut self, rng: &mut RngStream) -> Result<()> {
        let (k, t) = (self.config.k, self.config.t);
        let exposure = self.chain_exposure();
        for ki in 0..k {
            let total_tokens: u64 = (0..t).map(|ti| self.aux.comp_tokens[(ki, ti)]).sum();
            let mut obs_rate_sum = 0.0;
            for ti in 0..t {
                obs_rate_sum += self.state.delta[ti]
                    * self.state.theta[(ki, ti + 1)]
                    * self.obs_mass[(ki, ti)];
            }
            let post = lambda_posterior(
                self.config.eps0_lambda,
                k,
                self.state.g[ki],
                total_tokens,
                self.aux.table_source_sums[(ki, 0)],
                self.state.beta_rate,
                obs_rate_sum,
                exposure,
            );
            let lambda = sample_gamma(post.shape, post.rate, rng)?;
            self.state.lambda[ki] = lambda;
            self.state.theta[(ki, 0)] = lambda;
        }
        let nu = self.config.eps0_lambda / k as f64 - 1.0;
        for ki in 0..k {
            let z = 2.0
                * (self.state.gamma_weight * self.state.beta_rate * self.state.lambda[ki]
                    / k as f64)
                    .sqrt();
            self.state.g[ki] = if z == 0.0 && nu == -1.0 {
                1
            } else {
                sample_bessel(nu, z, rng)?
            };
        }
        let g_sum: u64 = self.state.g.iter().sum();
        let post = gamma_weight_posterior(self.config.eps0, g_sum);
        self.state.gamma_weight = sample_gamma(post.shape, post.rate, rng)?;
        let post = beta_posterior(
            self.config.eps0,
            self.config.eps0_lambda,
            g_sum,
            self.state.lambda.sum(),
        );
        self.state.beta_rate = sample_gamma(post.shape, post.rate, rng)?;
        Ok(())
    }

    /// Transition columns: Dirichlet(prior concentrations + tables).
    pub fn sample_pi(&mut self, rng: &mut RngStream) -> Result<()> {
        let k = self.config.k;
        let mut alphas = vec![0.0; k];
        for col in 0..k {
            for row in 0..k {
                alphas[row] = self.state.transition.concentration(row, col)
                    + self.aux.table_totals[(row, col)] as f64;
            }
            let column = sample_dirichlet(&alphas, rng)?;
            for (row, &x) in column.iter().enumerate() {
                self.state.pi[(row, col)] = x;
            }
        }
        Ok(())
    }

    /// Discard the tables and redraw the chain's latent counts against the
    /// refreshed state: the mixing mass from gamma-Poisson conjugacy, the
    /// count from its Bessel conditional.
    pub fn reinstantiate_chain(&mut self, rng: &mut RngStream) -> Result<()> {
        self.refresh_drive();
        let (k, t) = (self.config.k, self.config.t);
        let nu = self.config.eps0_theta - 1.0;
        for ti in 0..t {
            for ki in 0..k {
                let shape_mass = self.state.tau * self.drive[(ki, ti)];
                let theta = self.state.theta[(ki, ti + 1)];
                let mix = match self.config.chain {
                    ChainFamily::Nbrgmp => {
                        let h_hat = sample_gamma(
                            shape_mass + self.state.h[(ki, ti)] as f64,
                            self.state.psi + 1.0,
                            rng,
                        )?;
                        self.state.h_hat[(ki, ti)] = h_hat;
                        h_hat
                    }
                    ChainFamily::Prgmc => shape_mass,
                    ChainFamily::Gmc => unreachable!(),
                };
                let z = 2.0 * (self.state.tau * theta * mix).sqrt();
                self.state.h[(ki, ti)] = if self.config.eps0_theta == 0.0 && theta == 0.0 {
                    // Zero-absorbing branch: a zero state forces a zero count.
                    0
                } else if nu == -1.0 && z == 0.0 {
                    // Vanishing mixing mass under a positive state: the
                    // Bessel conditional degenerates to its support floor.
                    1
                } else {
                    sample_bessel(nu, z, rng)?
                };
            }
        }
        Ok(())
    }

    /// Loading columns: Dirichlet(eps0 + tokens).
    pub fn sample_phi(&mut self, rng: &mut RngStream) -> Result<()> {
        let (v, k) = (self.config.v, self.config.k);
        let mut alphas = vec![0.0; v];
        for col in 0..k {
            for row in 0..v {
                alphas[row] = self.config.eps0 + self.aux.phi_tokens[(row, col)] as f64;
            }
            let column = sample_dirichlet(&alphas, rng)?;
            for (row, &x) in column.iter().enumerate() {
                self.state.phi[(row, col)] = x;
            }
        }
        Ok(())
    }

    /// Burstiness scales, per step or pooled when stationary.
    pub fn sample_delta(&mut self, rng: &mut RngStream) -> Result<()> {
        let (k, t) = (self.config.k, self.config.t);
        let rate_mass_at = |state: &LatentState, obs_mass: &Array2<f64>, ti: usize| -> f64 {
            (0..k)
                .map(|ki| state.lambda[ki] * state.theta[(ki, ti + 1)] * obs_mass[(ki, ti)])
                .sum()
        };
        if self.config.stationary_delta {
            let total: u64 = self.observed_col_totals.iter().sum();
            let mass: f64 = (0..t)
                .map(|ti| rate_mass_at(&self.state, &self.obs_mass, ti))
                .sum();
            let post = delta_posterior(self.config.eps0, total, mass);
            let d = sample_gamma(post.shape, post.rate, rng)?;
            self.state.delta.fill(d);
        } else {
            for ti in 0..t {
                let post = delta_posterior(
                    self.config.eps0,
                    self.observed_col_totals[ti],
                    rate_mass_at(&self.state, &self.obs_mass, ti),
                );
                self.state.delta[ti] = sample_gamma(post.shape, post.rate, rng)?;
            }
        }
        Ok(())
    }

    /// Overdispersion update by gamma-rate conjugacy of the mixing masses.
    pub fn sample_psi(&mut self, rng: &mut RngStream) -> Result<()> {
        let (k, t) = (self.config.k, self.config.t);
        let mut shape_sum = 0.0;
        let mut h_hat_sum = 0.0;
        for ti in 0..t {
            for ki in 0..k {
                shape_sum += self.state.tau * self.drive[(ki, ti)];
                h_hat_sum += self.state.h_hat[(ki, ti)];
            }
        }
        let post = psi_posterior(self.config.eps0, shape_sum, h_hat_sum);
        self.state.psi = sample_gamma(post.shape, post.rate, rng)?;
        Ok(())
    }

    /// Random-walk Metropolis on log tau. The chain's shape mass and the
    /// state draws both move with tau, so this is the one non-conjugate
    /// update; a Gam(eps0, eps0) prior keeps it proper.
    pub fn sample_tau_mh(&mut self, rng: &mut RngStream) -> Result<()> {
        let (k, t) = (self.config.k, self.config.t);
        let log_joint = |tau: f64| -> f64 {
            let mut lp = (self.config.eps0 - 1.0) * tau.ln() - self.config.eps0 * tau;
            for ti in 0..t {
                for ki in 0..k {
                    let drive = self.drive[(ki, ti)];
                    let h = self.state.h[(ki, ti)] as f64;
                    let theta = self.state.theta[(ki, ti + 1)];
                    if drive > 0.0 {
                        let s = tau * drive;
                        match self.config.chain {
                            ChainFamily::Nbrgmp => {
                                let h_hat = self.state.h_hat[(ki, ti)].max(LOG_FLOOR);
                                lp += s * self.state.psi.ln() + (s - 1.0) * h_hat.ln()
                                    - ln_gamma(s);
                            }
                            ChainFamily::Prgmc => {
                                lp += h * s.ln() - s;
                            }
                            ChainFamily::Gmc => unreachable!(),
                        }
                    }
                    let shape = self.config.eps0_theta + h;
                    if shape > 0.0 {
                        lp += shape * tau.ln() - tau * theta;
                    }
                }
            }
            lp
        };
        let current = self.state.tau;
        let step: f64 = rand_distr::Normal::new(0.0, 0.25)
            .unwrap()
            .sample(rng);
        let proposal = (current.ln() + step).exp();
        if !proposal.is_finite() || proposal <= 0.0 {
            return Ok(());
        }
        let log_alpha =
            log_joint(proposal) - log_joint(current) + proposal.ln() - current.ln();
        if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
            self.state.tau = proposal;
        }
        Ok(())
    }

    /// Observed-data Poisson log-likelihood under the current state.
    pub fn joint_loglik(&self) -> f64 {
        let (k, t) = (self.config.k, self.config.t);
        let mut ll = 0.0;
        for ti in 0..t {
            let mut mass = 0.0;
            for ki in 0..k {
                mass += self.state.lambda[ki]
                    * self.state.theta[(ki, ti + 1)]
                    * self.obs_mass[(ki, ti)];
            }
            ll -= self.state.delta[ti] * mass;
        }
        for &(v, ti, n) in &self.nonzero_cells {
            let rate = self.state.poisson_rate(v, ti).max(LOG_FLOOR);
            ll += n as f64 * rate.ln() - ln_gamma(n as f64 + 1.0);
        }
        ll
    }
}

/// Run the sampler and record a trace.
///
/// Smoothing masks keep the full horizon and simply hide cells from every
/// sufficient statistic. Forecast masks trim the held-out columns from the
/// fitted window entirely (the chain runs over the training prefix);
/// prediction later rolls the chain forward over the horizon.
pub fn run_gibbs(
    counts: &CountMatrix,
    mask: &MaskSpec,
    config: &ModelConfig,
    schedule: Schedule,
    rng: &mut RngStream,
) -> Result<PosteriorTrace> {
    schedule.validate()?;
    config.validate()?;
    if counts.v() != config.v || counts.t() != config.t {
        return Err(Error::Config(format!(
            "counts are {}x{} but the config says {}x{}",
            counts.v(),
            counts.t(),
            config.v,
            config.t
        )));
    }
    let (fit_counts, fit_mask, fit_config) = match mask.mode {
        MaskMode::Forecast => {
            let s = mask
                .horizon
                .ok_or_else(|| Error::Config("forecast mask without horizon".into()))?;
            if s >= config.t {
                return Err(Error::Config(format!(
                    "forecast horizon {s} must be below T = {}",
                    config.t
                )));
            }
            let mut c = config.clone();
            c.t = config.t - s;
            (counts.truncate_time(c.t), MaskSpec::none(), c)
        }
        MaskMode::Smoothing => (counts.clone(), mask.clone(), config.clone()),
    };
    let mut sampler = GibbsSampler::new(fit_counts, fit_mask, fit_config, rng)?;
    let mut samples = Vec::with_capacity(schedule.retained());
    let mut diagnostics = Vec::with_capacity(schedule.total);
    for iteration in 1..=schedule.total {
        sampler.sweep(rng)?;
        let (mae, mre) = heldout_point_metrics(&sampler, counts, mask, config);
        diagnostics.push(IterationDiagnostics {
            iteration,
            heldout_mae: mae,
            heldout_mre: mre,
            joint_loglik: sampler.joint_loglik(),
        });
        if schedule.keeps(iteration) {
            samples.push(sampler.state().clone());
        }
    }
    Ok(PosteriorTrace {
        config: config.clone(),
        schedule,
        mask: mask.clone(),
        samples,
        diagnostics,
    })
}

/// Held-out MAE/MRE of the current state's point rates. Smoothing masks use
/// the in-window rates; forecast masks use the analytic mean recursion over
/// the horizon with a trailing-window burstiness scale.
fn heldout_point_metrics(
    sampler: &GibbsSampler,
    full_counts: &CountMatrix,
    mask: &MaskSpec,
    config: &ModelConfig,
) -> (f64, f64) {
    if mask.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let state = sampler.state();
    let (mut mae, mut mre) = (0.0, 0.0);
    match mask.mode {
        MaskMode::Smoothing => {
            for &(v, t) in &mask.cells {
                let n = full_counts.values[(v, t)] as f64;
                let err = (n - state.poisson_rate(v, t)).abs();
                mae += err;
                mre += err / (1.0 + n);
            }
        }
        MaskMode::Forecast => {
            let t_train = sampler.config().t;
            let s = config.t - t_train;
            let rates = crate::eval::forecast_mean_rates(state, config, s);
            for &(v, t) in &mask.cells {
                let n = full_counts.values[(v, t)] as f64;
                let err = (n - rates[(v, t - t_train)]).abs();
                mae += err;
                mre += err / (1.0 + n);
            }
        }
    }
    let count = mask.len() as f64;
    (mae / count, mre / count)
}

/// Trace persistence: a header record, then one state snapshot per line.
pub fn save_trace(trace: &PosteriorTrace, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        schema_version: u32,
        kind: &'a str,
        config: &'a ModelConfig,
        schedule: &'a Schedule,
        mask: &'a MaskSpec,
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = Header {
        schema_version: 1,
        kind: "nbrgds-trace",
        config: &trace.config,
        schedule: &trace.schedule,
        mask: &trace.mask,
    };
    let mut line =
        serde_json::to_string(&header).map_err(|e| Error::Serde(e.to_string()))?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    for sample in &trace.samples {
        let mut line =
            serde_json::to_string(sample).map_err(|e| Error::Serde(e.to_string()))?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<PosteriorTrace> {
    #[derive(Deserialize)]
    struct Header {
        #[allow(dead_code)]
        schema_version: u32,
        kind: String,
        config: ModelConfig,
        schedule: Schedule,
        mask: MaskSpec,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Serde("empty trace file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::Serde(e.to_string()))?;
    if header.kind != "nbrgds-trace" {
        return Err(Error::Serde(format!(
            "not a trace file (kind = {})",
            header.kind
        )));
    }
    let mut mask = header.mask;
    mask.reindex();
    let mut samples = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(
            serde_json::from_str(&line).map_err(|e| Error::Serde(e.to_string()))?,
        );
    }
    Ok(PosteriorTrace {
        config: header.config,
        schedule: header.schedule,
        mask,
        samples,
        diagnostics: Vec::new(),
    })
}

/// Diagnostics CSV: iteration, heldout_mae, heldout_mre, joint_loglik.
pub fn save_diagnostics(trace: &PosteriorTrace, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(b"iteration,heldout_mae,heldout_mre,joint_loglik\n")
        .map_err(|e| Error::io(path, e))?;
    for d in &trace.diagnostics {
        file.write_all(
            format!(
                "{},{},{},{}\n",
                d.iteration, d.heldout_mae, d.heldout_mre, d.joint_loglik
            )
            .as_bytes(),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Mean of the last `window` burstiness scales, the forecast-time scale.
pub fn trailing_delta(delta: &Array1<f64>, window: usize) -> f64 {
    let t = delta.len();
    let w = window.min(t).max(1);
    delta.iter().skip(t - w).sum::<f64>() / w as f64
}

#[cfg(test)]
mod tests;
