//! Transition-prior machinery: the plain symmetric prior, the
//! factor-structured (FS) Poisson factor prior, and the graph-structured
//! (GS) relational prior with a Bernoulli–Poisson mask.
//!
//! Both structured variants put a community factorization
//! `rate(k1, k2) = sum_c m_{k1 c} r_c m_{k2 c}` over off-diagonal pairs of
//! the transition-concentration matrix A. FS draws integer concentrations
//! `a_{k1 k2} ~ Pois(rate)` directly; GS draws a binary mask
//! `z = 1(w >= 1), w ~ Pois(rate)` and continuous magnitudes
//! `d ~ Gam(eps0, eps0)`, with `A = D ⊙ Z`. Diagonals are excluded from the
//! factor model (a rate in `m^2` would break conjugacy) and handled so every
//! Dirichlet column keeps a strictly positive self-transition entry.
//!
//! Inference for A runs through a shared beta/table augmentation of the
//! Dirichlet-multinomial evidence: per column, `q_k ~ Beta(alpha_k, L_k)`
//! turns the concentration likelihood into a Poisson form with exposure
//! `-ln q_k`, and per entry a table count drawn from the
//! Chinese-restaurant-table law supplies the shape evidence.

use crate::dist::{
    sample_crt, sample_gamma, sample_multinomial_thinning, sample_tilted_poisson,
    sample_tilted_poisson_shifted, sample_truncated_poisson,
};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::RngStream;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

/// Exposure floor: a beta auxiliary that underflows to exactly zero would
/// produce an infinite exposure and a degenerate gamma; this keeps the
/// exposure finite (~691) without affecting any representable draw.
const Q_FLOOR: f64 = 1e-300;

/// Reporting threshold for active communities, as a fraction of the largest
/// community weight. Never used by inference.
pub const ACTIVE_COMMUNITY_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionVariant {
    Plain,
    #[serde(rename = "fs")]
    FactorStructured,
    #[serde(rename = "gs")]
    GraphStructured,
}

impl std::fmt::Display for TransitionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransitionVariant::Plain => write!(f, "plain"),
            TransitionVariant::FactorStructured => write!(f, "fs"),
            TransitionVariant::GraphStructured => write!(f, "gs"),
        }
    }
}

impl std::str::FromStr for TransitionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(TransitionVariant::Plain),
            "fs" => Ok(TransitionVariant::FactorStructured),
            "gs" => Ok(TransitionVariant::GraphStructured),
            other => Err(Error::Config(format!(
                "unknown transition variant '{other}' (expected plain, fs or gs)"
            ))),
        }
    }
}

/// Community factors shared by FS and GS: loadings `m` (K x C) and weights
/// `r` (C), both nonnegative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityState {
    pub m: Array2<f64>,
    pub r: Array1<f64>,
}

impl CommunityState {
    pub fn sample_prior(
        k: usize,
        c: usize,
        config: &ModelConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut m = Array2::zeros((k, c));
        for x in m.iter_mut() {
            *x = sample_gamma(config.a_hat, config.b_hat, rng)?;
        }
        let mut r = Array1::zeros(c);
        for x in r.iter_mut() {
            *x = sample_gamma(config.r0 / c as f64, config.c0, rng)?;
        }
        Ok(CommunityState { m, r })
    }

    pub fn c(&self) -> usize {
        self.r.len()
    }

    /// Factor rate for an ordered pair, `sum_c m_{k1 c} r_c m_{k2 c}`.
    /// Symmetric in (k1, k2) by construction.
    pub fn pair_rate(&self, k1: usize, k2: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.c() {
            acc += self.m[(k1, c)] * self.r[c] * self.m[(k2, c)];
        }
        acc
    }

    fn pair_weights(&self, k1: usize, k2: usize) -> Vec<f64> {
        (0..self.c())
            .map(|c| self.m[(k1, c)] * self.r[c] * self.m[(k2, c)])
            .collect()
    }

    /// Communities whose weight clears `threshold * max(r)`.
    pub fn active_communities(&self, threshold: f64) -> Vec<usize> {
        let max = self.r.iter().cloned().fold(0.0f64, f64::max);
        (0..self.c())
            .filter(|&c| self.r[c] >= threshold * max && self.r[c] > 0.0)
            .collect()
    }

    /// Vertex assignment by the largest weighted loading `r_c m_{kc}`.
    pub fn assignment(&self) -> Vec<usize> {
        (0..self.m.nrows())
            .map(|k| {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for c in 0..self.c() {
                    let val = self.r[c] * self.m[(k, c)];
                    if val > best_val {
                        best_val = val;
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Factor-structured state: integer concentrations with a shifted-Poisson
/// diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsState {
    pub a: Array2<u64>,
    /// Rate of the (shifted) diagonal concentration prior.
    pub mu_self: f64,
    pub communities: CommunityState,
}

/// Graph-structured state: `A = D ⊙ Z` with `z = 1(w >= 1)`. Diagonal z is
/// forced to 1 with a dummy w of 1 so the mask/link invariant holds
/// everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GsState {
    pub d: Array2<f64>,
    pub z: Array2<u8>,
    pub w: Array2<u64>,
    pub communities: CommunityState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum TransitionState {
    Plain { concentration: f64 },
    #[serde(rename = "fs")]
    FactorStructured(FsState),
    #[serde(rename = "gs")]
    GraphStructured(GsState),
}

impl TransitionState {
    pub fn variant(&self) -> TransitionVariant {
        match self {
            TransitionState::Plain { .. } => TransitionVariant::Plain,
            TransitionState::FactorStructured(_) => TransitionVariant::FactorStructured,
            TransitionState::GraphStructured(_) => TransitionVariant::GraphStructured,
        }
    }

    /// Effective concentration of entry (k1, k2) of A.
    pub fn concentration(&self, k1: usize, k2: usize) -> f64 {
        match self {
            TransitionState::Plain { concentration } => *concentration,
            TransitionState::FactorStructured(fs) => fs.a[(k1, k2)] as f64,
            TransitionState::GraphStructured(gs) => {
                gs.d[(k1, k2)] * f64::from(gs.z[(k1, k2)])
            }
        }
    }

    /// Column k of A as Dirichlet concentrations.
    pub fn concentration_column(&self, k: usize, dim: usize) -> Vec<f64> {
        (0..dim).map(|k1| self.concentration(k1, k)).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        match self {
            TransitionState::Plain { concentration } => {
                if !concentration.is_finite() || *concentration <= 0.0 {
                    return Err(Error::Structural(format!(
                        "plain transition concentration {concentration}"
                    )));
                }
            }
            TransitionState::FactorStructured(fs) => {
                let k = fs.a.nrows();
                for i in 0..k {
                    if fs.a[(i, i)] == 0 {
                        return Err(Error::Structural(format!(
                            "fs diagonal concentration zero at {i}"
                        )));
                    }
                }
            }
            TransitionState::GraphStructured(gs) => {
                let k = gs.d.nrows();
                for i in 0..k {
                    if gs.z[(i, i)] != 1 {
                        return Err(Error::Structural(format!("gs diagonal mask off at {i}")));
                    }
                    if gs.d[(i, i)] <= 0.0 {
                        return Err(Error::Structural(format!(
                            "gs diagonal magnitude nonpositive at {i}"
                        )));
                    }
                    for j in 0..k {
                        if (gs.z[(i, j)] == 1) != (gs.w[(i, j)] >= 1) {
                            return Err(Error::Structural(format!(
                                "gs mask/link mismatch at ({i}, {j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Beta/table auxiliaries of the Dirichlet-concentration augmentation.
#[derive(Debug, Clone)]
pub struct DirichletAux {
    /// Per-column beta auxiliary in (0, 1].
    pub q: Array1<f64>,
    /// Per-entry table counts.
    pub tables: Array2<u64>,
}

impl DirichletAux {
    /// Exposure of column k: `-ln q_k`, zero when the column saw no tables.
    pub fn exposure(&self, k: usize) -> f64 {
        -self.q[k].ln()
    }
}

/// Draw the beta auxiliaries and CRT table counts given aggregated tables L
/// and the current effective concentrations.
///
/// Column k: `q_k ~ Beta(alpha_k, sum_k1 L_{k1 k})` with `q_k = 1` exactly
/// when the column total is zero; entry (k1, k): `t ~ CRT(L_{k1 k}, a_{k1 k})`
/// with zero-concentration entries contributing no tables (their L is
/// necessarily zero).
pub fn sample_dirichlet_aux(
    table_totals: &Array2<u64>,
    transition: &TransitionState,
    rng: &mut RngStream,
) -> Result<DirichletAux> {
    let k = table_totals.nrows();
    let mut q = Array1::from_elem(k, 1.0);
    let mut tables = Array2::zeros((k, k));
    for col in 0..k {
        let col_total: u64 = (0..k).map(|row| table_totals[(row, col)]).sum();
        let alpha: f64 = (0..k).map(|row| transition.concentration(row, col)).sum();
        if alpha <= 0.0 {
            return Err(Error::Structural(format!(
                "transition column {col} has zero total concentration"
            )));
        }
        if col_total > 0 {
            let beta = rand_distr::Beta::new(alpha, col_total as f64)
                .map_err(|e| Error::Parameter(format!("beta({alpha}, {col_total}): {e}")))?;
            q[col] = beta.sample(rng).max(Q_FLOOR);
        }
        for row in 0..k {
            let l = table_totals[(row, col)];
            let a = transition.concentration(row, col);
            if l == 0 || a == 0.0 {
                if l > 0 && a == 0.0 {
                    return Err(Error::Structural(format!(
                        "tables at ({row}, {col}) but zero concentration"
                    )));
                }
                continue;
            }
            tables[(row, col)] = sample_crt(l, a, rng)?;
        }
    }
    Ok(DirichletAux { q, tables })
}

/// Per-sweep community allocation tensor (k1, k2, c).
pub type Allocations = Array3<u64>;

/// One Gibbs pass over the transition-prior block given aggregated tables.
/// Plain is a no-op; FS and GS update their concentrations, masks and
/// community factors.
pub fn update_transition_block(
    transition: &mut TransitionState,
    table_totals: &Array2<u64>,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let aux = match transition {
        TransitionState::Plain { .. } => return Ok(()),
        _ => sample_dirichlet_aux(table_totals, transition, rng)?,
    };
    let k = table_totals.nrows();
    match transition {
        TransitionState::Plain { .. } => unreachable!(),
        TransitionState::FactorStructured(fs) => {
            let mut alloc: Allocations = Array3::zeros((k, k, fs.communities.c()));
            for k2 in 0..k {
                let omega = aux.exposure(k2);
                for k1 in 0..k {
                    let t = aux.tables[(k1, k2)];
                    if k1 == k2 {
                        fs.a[(k1, k2)] =
                            sample_tilted_poisson_shifted(t, omega, fs.mu_self, rng)?;
                    } else {
                        let mu = fs.communities.pair_rate(k1, k2);
                        fs.a[(k1, k2)] = sample_tilted_poisson(t, omega, mu, rng)?;
                        if fs.a[(k1, k2)] > 0 {
                            let weights = fs.communities.pair_weights(k1, k2);
                            let split =
                                sample_multinomial_thinning(fs.a[(k1, k2)], &weights, rng)?;
                            for (c, &x) in split.iter().enumerate() {
                                alloc[(k1, k2, c)] = x;
                            }
                        }
                    }
                }
            }
            let diag_sum: u64 = (0..k).map(|i| fs.a[(i, i)] - 1).sum();
            fs.mu_self = sample_gamma(
                config.eps0 + diag_sum as f64,
                config.eps0 + k as f64,
                rng,
            )?;
            sample_communities(&mut fs.communities, &alloc, config, rng)?;
        }
        TransitionState::GraphStructured(gs) => {
            let mut alloc: Allocations = Array3::zeros((k, k, gs.communities.c()));
            for k2 in 0..k {
                let omega = aux.exposure(k2);
                for k1 in 0..k {
                    let t = aux.tables[(k1, k2)];
                    let l = table_totals[(k1, k2)];
                    if k1 == k2 {
                        gs.d[(k1, k2)] = sample_gamma(
                            config.eps0 + t as f64,
                            config.eps0 + omega,
                            rng,
                        )?;
                        continue;
                    }
                    let rate = gs.communities.pair_rate(k1, k2);
                    gs.z[(k1, k2)] = sample_z_gs(l, gs.d[(k1, k2)], aux.q[k2], rate, rng)?;
                    if gs.z[(k1, k2)] == 1 {
                        gs.d[(k1, k2)] = sample_gamma(
                            config.eps0 + t as f64,
                            config.eps0 + omega,
                            rng,
                        )?;
                        if rate == 0.0 {
                            return Err(Error::Structural(format!(
                                "edge ({k1}, {k2}) is on but its factor rate is zero"
                            )));
                        }
                        gs.w[(k1, k2)] = sample_truncated_poisson(rate, rng)?;
                        let weights = gs.communities.pair_weights(k1, k2);
                        let split = sample_multinomial_thinning(gs.w[(k1, k2)], &weights, rng)?;
                        for (c, &x) in split.iter().enumerate() {
                            alloc[(k1, k2, c)] = x;
                        }
                    } else {
                        // Off state: magnitude refreshed from its prior, no link mass.
                        gs.d[(k1, k2)] = sample_gamma(config.eps0, config.eps0, rng)?;
                        gs.w[(k1, k2)] = 0;
                    }
                }
            }
            sample_communities(&mut gs.communities, &alloc, config, rng)?;
        }
    }
    Ok(())
}

/// Mask update for one off-diagonal pair. Positive tables force the edge on;
/// otherwise the posterior odds are the prior odds `(1 - e^-rate)/e^-rate`
/// times the zero-count evidence `q^d`.
pub fn sample_z_gs(
    table_total: u64,
    d: f64,
    q: f64,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<u8> {
    if table_total > 0 {
        return Ok(1);
    }
    if rate == 0.0 {
        return Ok(0);
    }
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::Parameter(format!("bernoulli-poisson rate {rate}")));
    }
    let prior_on = -(-rate).exp_m1(); // 1 - e^-rate
    let odds = prior_on / (-rate).exp() * q.powf(d);
    let p_on = odds / (1.0 + odds);
    Ok(u8::from(rng.random::<f64>() < p_on))
}

/// Gibbs update of the community factors given the per-pair allocation
/// tensor (FS concentration splits or GS link-mass splits). Diagonal pairs
/// never contribute. Loadings then weights, sequentially per community.
pub fn sample_communities(
    communities: &mut CommunityState,
    alloc: &Allocations,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let (k, c) = (communities.m.nrows(), communities.c());
    for ci in 0..c {
        for ki in 0..k {
            let mut shape = config.a_hat;
            let mut rate = config.b_hat;
            for k2 in 0..k {
                if k2 == ki {
                    continue;
                }
                shape += (alloc[(ki, k2, ci)] + alloc[(k2, ki, ci)]) as f64;
                rate += 2.0 * communities.r[ci] * communities.m[(k2, ci)];
            }
            communities.m[(ki, ci)] = sample_gamma(shape, rate, rng)?;
        }
        let mut shape = config.r0 / c as f64;
        let mut rate = config.c0;
        for k1 in 0..k {
            for k2 in 0..k {
                if k1 == k2 {
                    continue;
                }
                shape += alloc[(k1, k2, ci)] as f64;
                rate += communities.m[(k1, ci)] * communities.m[(k2, ci)];
            }
        }
        communities.r[ci] = sample_gamma(shape, rate, rng)?;
    }
    Ok(())
}

/// Graph summary extracted from a fitted graph-structured state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSummary {
    /// Off-diagonal on-edges as (source, target, magnitude). Source/target
    /// follow the transition reading: edge (k1, k2) means component k2
    /// excites component k1.
    pub edges: Vec<(usize, usize, f64)>,
    /// Community index per vertex (argmax of r_c m_kc).
    pub assignment: Vec<usize>,
    /// Membership weight backing each assignment.
    pub membership: Vec<f64>,
    /// Communities above the reporting threshold.
    pub active_communities: Vec<usize>,
}

/// Edge list and community assignment of a graph-structured state.
/// `threshold` is the active-community fraction of the largest weight
/// (reporting only).
pub fn extract_graph(gs: &GsState, threshold: f64) -> GraphSummary {
    let k = gs.d.nrows();
    let mut edges = Vec::new();
    for k1 in 0..k {
        for k2 in 0..k {
            if k1 != k2 && gs.z[(k1, k2)] == 1 {
                edges.push((k1, k2, gs.d[(k1, k2)]));
            }
        }
    }
    let assignment = gs.communities.assignment();
    let membership = assignment
        .iter()
        .enumerate()
        .map(|(kk, &c)| gs.communities.r[c] * gs.communities.m[(kk, c)])
        .collect();
    GraphSummary {
        edges,
        assignment,
        membership,
        active_communities: gs.communities.active_communities(threshold),
    }
}

/// Pair-counting F1 between two community assignments: precision/recall over
/// unordered vertex pairs that are co-assigned. Invariant to label
/// permutations and to differing community counts.
pub fn pair_f1(truth: &[usize], estimate: &[usize]) -> f64 {
    assert_eq!(truth.len(), estimate.len());
    let n = truth.len();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let t = truth[i] == truth[j];
            let e = estimate[i] == estimate[j];
            match (t, e) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{crt_mean, sample_poisson};

    fn config(k: usize, c: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(3, 4, k, c);
        cfg.eps0 = 1.0;
        cfg
    }

    #[test]
    fn dirichlet_aux_empty_column_is_inert() {
        let k = 3;
        let transition = TransitionState::Plain { concentration: 0.5 };
        let totals = Array2::zeros((k, k));
        let aux =
            sample_dirichlet_aux(&totals, &transition, &mut RngStream::new(1, 0)).unwrap();
        for col in 0..k {
            assert_eq!(aux.q[col], 1.0);
            assert_eq!(aux.exposure(col), 0.0);
        }
        assert!(aux.tables.iter().all(|&t| t == 0));
    }

    #[test]
    fn dirichlet_aux_zero_concentration_entry_yields_no_tables() {
        let k = 2;
        let mut d = Array2::from_elem((k, k), 1.0);
        d[(0, 1)] = 0.4;
        let mut z = Array2::from_elem((k, k), 1u8);
        z[(0, 1)] = 0;
        let w = Array2::from_elem((k, k), 1u64);
        let mut w = w;
        w[(0, 1)] = 0;
        let gs = GsState {
            d,
            z,
            w,
            communities: CommunityState {
                m: Array2::from_elem((k, 2), 1.0),
                r: Array1::from_elem(2, 0.5),
            },
        };
        let transition = TransitionState::GraphStructured(gs);
        let mut totals = Array2::zeros((k, k));
        totals[(1, 1)] = 5;
        let aux =
            sample_dirichlet_aux(&totals, &transition, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(aux.tables[(0, 1)], 0);
        assert!(aux.tables[(1, 1)] >= 1);
        // Tables against a zero concentration are structurally impossible.
        totals[(0, 1)] = 3;
        assert!(sample_dirichlet_aux(&totals, &transition, &mut RngStream::new(3, 0)).is_err());
    }

    #[test]
    fn dirichlet_aux_table_mean_tracks_crt() {
        let k = 2;
        let transition = TransitionState::Plain { concentration: 1.0 };
        let mut totals = Array2::zeros((k, k));
        totals[(0, 0)] = 3;
        let mut sum = 0.0;
        let n = 200_000;
        let mut rng = RngStream::new(4, 0);
        for _ in 0..n {
            let aux = sample_dirichlet_aux(&totals, &transition, &mut rng).unwrap();
            sum += aux.tables[(0, 0)] as f64;
        }
        let mean = sum / n as f64;
        let expect = crt_mean(3, 1.0);
        assert!((mean - expect).abs() < 0.01, "mean {mean} expect {expect}");
    }

    #[test]
    fn z_update_edges() {
        let mut rng = RngStream::new(5, 0);
        assert_eq!(sample_z_gs(3, 0.5, 0.7, 1.0, &mut rng).unwrap(), 1);
        assert_eq!(sample_z_gs(0, 0.5, 0.7, 0.0, &mut rng).unwrap(), 0);
        // rate = ln 2, q = 1, no tables: P(z=1) = 1 - e^{-ln 2} = 1/2.
        let rate = std::f64::consts::LN_2;
        let n = 200_000;
        let on: u64 = (0..n)
            .map(|_| sample_z_gs(0, 2.0, 1.0, rate, &mut rng).unwrap() as u64)
            .sum();
        let p = on as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.005, "p {p}");
    }

    #[test]
    fn gs_block_keeps_mask_invariants() {
        let cfg = config(3, 2);
        let mut cfg = cfg;
        cfg.variant = TransitionVariant::GraphStructured;
        let mut rng = RngStream::new(6, 0);
        let mut transition =
            crate::model::sample_transition_prior(&cfg, &mut rng).unwrap();
        let mut totals = Array2::zeros((3, 3));
        totals[(0, 1)] = 4;
        totals[(1, 1)] = 2;
        for _ in 0..200 {
            update_transition_block(&mut transition, &totals, &cfg, &mut rng).unwrap();
            transition.check_invariants().unwrap();
            if let TransitionState::GraphStructured(gs) = &transition {
                // Tables force the edge on.
                assert_eq!(gs.z[(0, 1)], 1);
            }
        }
    }

    #[test]
    fn fs_block_keeps_positive_diagonal() {
        let mut cfg = config(3, 2);
        cfg.variant = TransitionVariant::FactorStructured;
        let mut rng = RngStream::new(7, 0);
        let mut transition =
            crate::model::sample_transition_prior(&cfg, &mut rng).unwrap();
        let mut totals = Array2::zeros((3, 3));
        totals[(2, 0)] = 6;
        for _ in 0..200 {
            update_transition_block(&mut transition, &totals, &cfg, &mut rng).unwrap();
            transition.check_invariants().unwrap();
        }
    }

    #[test]
    fn communities_with_no_allocations_revert_to_prior_scale() {
        let mut cfg = config(4, 3);
        cfg.r0 = 1e-4; // strong shrinkage
        let mut communities =
            CommunityState::sample_prior(4, 3, &cfg, &mut RngStream::new(8, 0)).unwrap();
        let alloc: Allocations = Array3::zeros((4, 4, 3));
        let mut rng = RngStream::new(9, 0);
        let mut total = 0.0;
        for _ in 0..200 {
            sample_communities(&mut communities, &alloc, &cfg, &mut rng).unwrap();
            total += communities.r.sum();
        }
        assert!(total / 200.0 < 0.01, "weights failed to shrink: {total}");
    }

    #[test]
    fn planted_two_block_communities_recovered_from_allocations() {
        // Forward-generate allocations from a planted two-block loading
        // matrix, then check the Gibbs update recovers the block structure.
        let k = 20;
        let c = 2;
        let mut cfg = config(k, c);
        cfg.a_hat = 0.5;
        let mut truth = vec![0usize; k];
        for (i, t) in truth.iter_mut().enumerate() {
            *t = i / 10;
        }
        let mut ok = 0;
        for seed in 0..10u64 {
            let mut rng = RngStream::new(100 + seed, 0);
            let mut m = Array2::from_elem((k, c), 0.05);
            for (i, &b) in truth.iter().enumerate() {
                m[(i, b)] = 2.0;
            }
            let planted = CommunityState {
                m,
                r: Array1::from_elem(c, 2.0),
            };
            let mut alloc: Allocations = Array3::zeros((k, k, c));
            for k1 in 0..k {
                for k2 in 0..k {
                    if k1 == k2 {
                        continue;
                    }
                    for ci in 0..c {
                        let rate = planted.m[(k1, ci)] * planted.r[ci] * planted.m[(k2, ci)];
                        alloc[(k1, k2, ci)] = sample_poisson(rate, &mut rng).unwrap();
                    }
                }
            }
            let mut est = CommunityState::sample_prior(k, c, &cfg, &mut rng).unwrap();
            for _ in 0..100 {
                sample_communities(&mut est, &alloc, &cfg, &mut rng).unwrap();
            }
            let f1 = pair_f1(&truth, &est.assignment());
            if f1 >= 0.9 {
                ok += 1;
            }
        }
        assert!(ok >= 8, "recovered in only {ok}/10 runs");
    }

    #[test]
    fn extract_graph_reports_edges_and_assignments() {
        let k = 3;
        let mut z = Array2::zeros((k, k));
        for i in 0..k {
            z[(i, i)] = 1u8;
        }
        let gs = GsState {
            d: Array2::from_elem((k, k), 0.7),
            z: z.clone(),
            w: z.mapv(|v| v as u64),
            communities: CommunityState {
                m: Array2::from_elem((k, 4), 1.0),
                r: Array1::from_vec(vec![0.0, 0.0, 0.0, 2.0]),
            },
        };
        let g = extract_graph(&gs, ACTIVE_COMMUNITY_FRACTION);
        assert!(g.edges.is_empty());
        assert!(g.assignment.iter().all(|&c| c == 3));
        assert_eq!(g.active_communities, vec![3]);

        // threshold 0 reports every positive-weight community
        let g0 = extract_graph(&gs, 0.0);
        assert_eq!(g0.active_communities, vec![3]);
    }

    #[test]
    fn pair_f1_handles_label_switching() {
        let truth = vec![0, 0, 1, 1];
        assert_eq!(pair_f1(&truth, &[1, 1, 0, 0]), 1.0);
        assert_eq!(pair_f1(&truth, &[5, 5, 9, 9]), 1.0);
        assert!(pair_f1(&truth, &[0, 1, 0, 1]) < 0.5);
    }

    #[test]
    fn prior_rate_is_symmetric() {
        let cfg = config(5, 3);
        let communities =
            CommunityState::sample_prior(5, 3, &cfg, &mut RngStream::new(11, 0)).unwrap();
        for k1 in 0..5 {
            for k2 in 0..5 {
                let a = communities.pair_rate(k1, k2);
                let b = communities.pair_rate(k2, k1);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
