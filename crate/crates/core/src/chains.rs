//! Forward simulation and closed-form conditional moments for the three
//! latent chain families.
//!
//! * GMC — gamma Markov chain: `theta' ~ Gam(tau0 * Pi theta, tau0)`.
//! * PRGMC — Poisson-randomized gamma Markov chain:
//!   `h ~ Pois(tau * Pi theta)`, `theta' ~ Gam(eps0_theta + h, tau)`.
//! * NBRGMP — negative-binomial-randomized gamma Markov process:
//!   `h_hat ~ Gam(tau * Pi theta, psi)`, `h ~ Pois(h_hat)`,
//!   `theta' ~ Gam(eps0_theta + h, tau)`; the extra mixing layer makes the
//!   innovation overdispersed, with `psi` controlling the regime.

use crate::dist::{sample_gamma, sample_poisson};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Column-stochasticity tolerance for transition matrices.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainFamily {
    /// Plain gamma Markov chain.
    Gmc,
    /// Poisson-randomized gamma Markov chain.
    Prgmc,
    /// Negative-binomial-randomized gamma Markov process.
    Nbrgmp,
}

impl std::fmt::Display for ChainFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainFamily::Gmc => write!(f, "gmc"),
            ChainFamily::Prgmc => write!(f, "prgmc"),
            ChainFamily::Nbrgmp => write!(f, "nbrgmp"),
        }
    }
}

impl std::str::FromStr for ChainFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmc" => Ok(ChainFamily::Gmc),
            "prgmc" => Ok(ChainFamily::Prgmc),
            "nbrgmp" => Ok(ChainFamily::Nbrgmp),
            other => Err(Error::Config(format!(
                "unknown chain family '{other}' (expected gmc, prgmc or nbrgmp)"
            ))),
        }
    }
}

/// Parameters of one latent chain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChainConfig {
    pub family: ChainFamily,
    /// Latent dimension.
    pub k: usize,
    /// Gamma rate of the state draw (PRGMC/NBRGMP).
    pub tau: f64,
    /// GMC-only concentration.
    pub tau0: f64,
    /// NBRGMP-only overdispersion control.
    pub psi: f64,
    /// Shape offset of the state draw; 0 enables the zero-absorbing regime.
    pub eps0_theta: f64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("chain dimension K must be positive".into()));
        }
        for (name, v, strict) in [
            ("tau", self.tau, true),
            ("tau0", self.tau0, true),
            ("psi", self.psi, true),
            ("eps0_theta", self.eps0_theta, false),
        ] {
            if !v.is_finite() || v < 0.0 || (strict && v == 0.0) {
                return Err(Error::Config(format!("chain parameter {name} = {v} invalid")));
            }
        }
        Ok(())
    }
}

/// One time slice of a chain. `h` exists for PRGMC/NBRGMP, `h_hat` for
/// NBRGMP only.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Array1<f64>,
    pub h: Option<Array1<u64>>,
    pub h_hat: Option<Array1<f64>>,
}

impl ChainState {
    pub fn from_theta(theta: Array1<f64>) -> Self {
        ChainState {
            theta,
            h: None,
            h_hat: None,
        }
    }
}

/// Checks that every column of `pi` sums to 1 within [`COLUMN_SUM_TOL`].
pub fn validate_column_stochastic(pi: &ArrayView2<f64>) -> Result<()> {
    if pi.nrows() != pi.ncols() {
        return Err(Error::Parameter(format!(
            "transition matrix must be square, got {}x{}",
            pi.nrows(),
            pi.ncols()
        )));
    }
    for (k, col) in pi.columns().into_iter().enumerate() {
        let sum: f64 = col.sum();
        if !(sum - 1.0).abs().le(&COLUMN_SUM_TOL) || col.iter().any(|&x| !(0.0..=1.0 + COLUMN_SUM_TOL).contains(&x)) {
            return Err(Error::Parameter(format!(
                "transition matrix column {k} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// `(Pi theta)_k = sum_k2 pi[k, k2] * theta[k2]`: row k of the product,
/// reading entry (k1, k2) as the effect of source k2 on target k1.
pub fn transition_mass(pi: &ArrayView2<f64>, theta: &Array1<f64>) -> Array1<f64> {
    pi.dot(theta)
}

/// One-step draw of the configured family.
pub fn step(
    config: &ChainConfig,
    pi: &ArrayView2<f64>,
    state: &ChainState,
    rng: &mut RngStream,
) -> Result<ChainState> {
    config.validate()?;
    validate_column_stochastic(pi)?;
    if state.theta.len() != config.k || pi.nrows() != config.k {
        return Err(Error::Parameter("chain state/transition size mismatch".into()));
    }
    if state.theta.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Parameter("chain state must be finite and nonnegative".into()));
    }
    let drive = transition_mass(pi, &state.theta);
    let mut theta = Array1::zeros(config.k);
    match config.family {
        ChainFamily::Gmc => {
            for k in 0..config.k {
                theta[k] = sample_gamma(config.tau0 * drive[k], config.tau0, rng)?;
            }
            Ok(ChainState::from_theta(theta))
        }
        ChainFamily::Prgmc => {
            let mut h = Array1::zeros(config.k);
            for k in 0..config.k {
                h[k] = sample_poisson(config.tau * drive[k], rng)?;
                theta[k] = sample_gamma(config.eps0_theta + h[k] as f64, config.tau, rng)?;
            }
            Ok(ChainState {
                theta,
                h: Some(h),
                h_hat: None,
            })
        }
        ChainFamily::Nbrgmp => {
            let mut h = Array1::zeros(config.k);
            let mut h_hat = Array1::zeros(config.k);
            for k in 0..config.k {
                h_hat[k] = sample_gamma(config.tau * drive[k], config.psi, rng)?;
                h[k] = sample_poisson(h_hat[k], rng)?;
                theta[k] = sample_gamma(config.eps0_theta + h[k] as f64, config.tau, rng)?;
            }
            Ok(ChainState {
                theta,
                h: Some(h),
                h_hat: Some(h_hat),
            })
        }
    }
}

/// Closed-form one-step conditional mean and variance of the next state
/// given the previous one.
pub fn conditional_moments(
    config: &ChainConfig,
    pi: &ArrayView2<f64>,
    theta_prev: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    config.validate()?;
    validate_column_stochastic(pi)?;
    let drive = transition_mass(pi, theta_prev);
    let k = theta_prev.len();
    let mut mean = Array1::zeros(k);
    let mut var = Array1::zeros(k);
    match config.family {
        ChainFamily::Gmc => {
            for i in 0..k {
                mean[i] = drive[i];
                var[i] = drive[i] / config.tau0;
            }
        }
        ChainFamily::Prgmc => {
            let (e0, tau) = (config.eps0_theta, config.tau);
            for i in 0..k {
                mean[i] = e0 / tau + drive[i];
                var[i] = e0 / (tau * tau) + 2.0 * drive[i] / tau;
            }
        }
        ChainFamily::Nbrgmp => {
            let (e0, tau, psi) = (config.eps0_theta, config.tau, config.psi);
            for i in 0..k {
                mean[i] = e0 / tau + drive[i] / psi;
                var[i] = e0 / (tau * tau) + (1.0 + 2.0 * psi) * drive[i] / (psi * psi * tau);
            }
        }
    }
    Ok((mean, var))
}

/// Independent forward rollouts; the result is indexed
/// `(chain, component, time)` with `time` running over 1..=horizon.
pub fn simulate_realizations(
    config: &ChainConfig,
    pi: &ArrayView2<f64>,
    theta0: &Array1<f64>,
    horizon: usize,
    n_chains: usize,
    rng: &mut RngStream,
) -> Result<Array3<f64>> {
    config.validate()?;
    validate_column_stochastic(pi)?;
    if horizon == 0 {
        return Err(Error::Config("simulation horizon must be at least 1".into()));
    }
    let mut out = Array3::zeros((n_chains, config.k, horizon));
    for c in 0..n_chains {
        let mut stream = rng.substream(c as u64);
        let mut state = ChainState::from_theta(theta0.clone());
        for t in 0..horizon {
            state = step(config, pi, &state, &mut stream)?;
            for k in 0..config.k {
                out[(c, k, t)] = state.theta[k];
            }
        }
    }
    Ok(out)
}

/// Identity transition of size k, the simplest column-stochastic matrix.
pub fn identity_transition(k: usize) -> Array2<f64> {
    Array2::eye(k)
}

/// Draw a random column-stochastic matrix with Dirichlet(alpha) columns.
pub fn random_transition(k: usize, alpha: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let mut pi = Array2::zeros((k, k));
    for col in 0..k {
        let column = crate::dist::sample_dirichlet(&vec![alpha; k], rng)?;
        for (row, &v) in column.iter().enumerate() {
            pi[(row, col)] = v;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(family: ChainFamily, psi: f64, eps0_theta: f64) -> ChainConfig {
        ChainConfig {
            family,
            k: 1,
            tau: 1.0,
            tau0: 1.0,
            psi,
            eps0_theta,
        }
    }

    fn one_step_ensemble(config: &ChainConfig, theta0: f64, n: usize, seed: u64) -> (f64, f64) {
        let pi = identity_transition(config.k);
        let state = ChainState::from_theta(Array1::from_elem(config.k, theta0));
        let mut rng = RngStream::new(seed, 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| step(config, &pi.view(), &state, &mut rng).unwrap().theta[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var)
    }

    #[test]
    fn nbrgmp_one_step_moments() {
        let config = cfg(ChainFamily::Nbrgmp, 1.0, 0.0);
        let (mean, var) = one_step_ensemble(&config, 2.0, 100_000, 21);
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
        assert!((var - 6.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn prgmc_one_step_moments() {
        let config = cfg(ChainFamily::Prgmc, 1.0, 0.0);
        let (mean, var) = one_step_ensemble(&config, 2.0, 100_000, 22);
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
        assert!((var - 4.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn zero_state_is_absorbing_without_offset() {
        let config = cfg(ChainFamily::Nbrgmp, 1.0, 0.0);
        let pi = identity_transition(1);
        let mut rng = RngStream::new(23, 0);
        let mut state = ChainState::from_theta(Array1::zeros(1));
        for _ in 0..50 {
            state = step(&config, &pi.view(), &state, &mut rng).unwrap();
            assert_eq!(state.theta[0], 0.0);
        }
    }

    #[test]
    fn conditional_moments_match_formulas() {
        let pi = identity_transition(1);
        let theta = Array1::from_elem(1, 2.0);

        let config = cfg(ChainFamily::Nbrgmp, 1.0, 0.0);
        let (mean, var) = conditional_moments(&config, &pi.view(), &theta).unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-12);
        assert!((var[0] - 6.0).abs() < 1e-12);

        // psi -> infinity: both data terms vanish.
        let config = cfg(ChainFamily::Nbrgmp, 1e12, 1.0);
        let (mean, var) = conditional_moments(&config, &pi.view(), &theta).unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-9);
        assert!((var[0] - 1.0).abs() < 1e-9);

        let mut config = cfg(ChainFamily::Gmc, 1.0, 0.0);
        config.tau0 = 4.0;
        let theta3 = Array1::from_elem(1, 3.0);
        let (mean, var) = conditional_moments(&config, &pi.view(), &theta3).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-12);
        assert!((var[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn variance_regime_ratio_at_unit_psi() {
        // With psi = 1 and no shape offset, the NBRGMP conditional variance
        // is exactly 1.5x the PRGMC one for identical (Pi, theta, tau).
        let pi = random_transition(3, 1.0, &mut RngStream::new(5, 5)).unwrap();
        let theta = Array1::from_vec(vec![0.4, 2.0, 5.5]);
        let nb = ChainConfig {
            family: ChainFamily::Nbrgmp,
            k: 3,
            tau: 1.7,
            tau0: 1.0,
            psi: 1.0,
            eps0_theta: 0.0,
        };
        let pr = ChainConfig {
            family: ChainFamily::Prgmc,
            ..nb
        };
        let (_, v_nb) = conditional_moments(&nb, &pi.view(), &theta).unwrap();
        let (_, v_pr) = conditional_moments(&pr, &pi.view(), &theta).unwrap();
        for k in 0..3 {
            assert_eq!(v_nb[k], 1.5 * v_pr[k]);
        }
    }

    #[test]
    fn monte_carlo_matches_conditional_moments_within_3se() {
        for &family in &[ChainFamily::Gmc, ChainFamily::Prgmc, ChainFamily::Nbrgmp] {
            for &psi in &[0.5, 1.0, 3.0] {
                let config = ChainConfig {
                    family,
                    k: 2,
                    tau: 1.0,
                    tau0: 2.0,
                    psi,
                    eps0_theta: 0.5,
                };
                let pi = random_transition(2, 1.0, &mut RngStream::new(77, psi.to_bits())).unwrap();
                let theta = Array1::from_vec(vec![1.5, 3.0]);
                let (mean, var) = conditional_moments(&config, &pi.view(), &theta).unwrap();
                let n = 100_000;
                let mut rng = RngStream::new(78, psi.to_bits());
                let state = ChainState::from_theta(theta.clone());
                let mut sums = vec![0.0; 2];
                let mut sq = vec![0.0; 2];
                let mut q4 = vec![0.0; 2];
                let mut draws = Vec::with_capacity(n);
                for _ in 0..n {
                    let s = step(&config, &pi.view(), &state, &mut rng).unwrap();
                    draws.push([s.theta[0], s.theta[1]]);
                }
                for d in &draws {
                    for k in 0..2 {
                        sums[k] += d[k];
                    }
                }
                let nf = n as f64;
                let means: Vec<f64> = sums.iter().map(|s| s / nf).collect();
                for d in &draws {
                    for k in 0..2 {
                        let c = d[k] - means[k];
                        sq[k] += c * c;
                        q4[k] += c * c * c * c;
                    }
                }
                for k in 0..2 {
                    let mc_var = sq[k] / nf;
                    let m4 = q4[k] / nf;
                    let se_mean = (mc_var / nf).sqrt();
                    let se_var = ((m4 - mc_var * mc_var).max(0.0) / nf).sqrt();
                    assert!(
                        (means[k] - mean[k]).abs() <= 3.0 * se_mean,
                        "{family:?} psi {psi} k {k}: mean {} vs {} (se {se_mean})",
                        means[k],
                        mean[k]
                    );
                    assert!(
                        (mc_var - var[k]).abs() <= 3.0 * se_var,
                        "{family:?} psi {psi} k {k}: var {mc_var} vs {} (se {se_var})",
                        var[k]
                    );
                }
            }
        }
    }

    #[test]
    fn ensemble_mean_follows_recursion() {
        // psi = 1, identity transition: the ensemble mean stays at theta0.
        let config = ChainConfig {
            family: ChainFamily::Nbrgmp,
            k: 1,
            tau: 1.0,
            tau0: 1.0,
            psi: 1.0,
            eps0_theta: 0.0,
        };
        let pi = identity_transition(1);
        let mut rng = RngStream::new(31, 0);
        let traj = simulate_realizations(
            &config,
            &pi.view(),
            &Array1::from_elem(1, 1.0),
            8,
            10_000,
            &mut rng,
        )
        .unwrap();
        for t in 0..8 {
            let mean: f64 = (0..10_000).map(|c| traj[(c, 0, t)]).sum::<f64>() / 1e4;
            assert!((mean - 1.0).abs() < 0.05, "t {t}: mean {mean}");
        }

        // psi = 2: the mean halves each step.
        let config = ChainConfig {
            psi: 2.0,
            ..config
        };
        let mut rng = RngStream::new(32, 0);
        let traj = simulate_realizations(
            &config,
            &pi.view(),
            &Array1::from_elem(1, 1000.0),
            5,
            4_000,
            &mut rng,
        )
        .unwrap();
        for t in 0..5 {
            let mean: f64 = (0..4_000).map(|c| traj[(c, 0, t)]).sum::<f64>() / 4e3;
            let expect = 1000.0 * 0.5f64.powi(t as i32 + 1);
            assert!(
                (mean - expect).abs() < 0.05 * expect,
                "t {t}: mean {mean} expect {expect}"
            );
        }

        // zero start, zero offset: identically zero.
        let mut rng = RngStream::new(33, 0);
        let traj = simulate_realizations(
            &config,
            &pi.view(),
            &Array1::zeros(1),
            5,
            100,
            &mut rng,
        )
        .unwrap();
        assert!(traj.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_non_stochastic_transition() {
        let config = cfg(ChainFamily::Nbrgmp, 1.0, 0.1);
        let mut pi = identity_transition(1);
        pi[(0, 0)] = 0.7;
        let state = ChainState::from_theta(Array1::from_elem(1, 1.0));
        let mut rng = RngStream::new(1, 1);
        assert!(step(&config, &pi.view(), &state, &mut rng).is_err());
    }

    #[test]
    fn simulated_states_stay_nonnegative() {
        let config = ChainConfig {
            family: ChainFamily::Nbrgmp,
            k: 3,
            tau: 1.0,
            tau0: 1.0,
            psi: 0.5,
            eps0_theta: 0.1,
        };
        let pi = random_transition(3, 0.5, &mut RngStream::new(41, 0)).unwrap();
        let mut rng = RngStream::new(42, 0);
        // psi < 1 is the explosive regime: the mean doubles each step, so
        // keep the horizon short enough for exact integer sampling.
        let traj = simulate_realizations(
            &config,
            &pi.view(),
            &Array1::from_elem(3, 1.0),
            20,
            20,
            &mut rng,
        )
        .unwrap();
        assert!(traj.iter().all(|&x| x >= 0.0 && x.is_finite()));
    }
}
