//! Closed-form posterior parameters of every conjugate block update.
//!
//! These are pure functions of sufficient statistics; the sweep calls them
//! to draw, and the conjugacy test suite checks each one against a numeric
//! grid posterior built from first-principles densities.

/// Shape-rate parameters of a gamma full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Chain-state update at one (component, time) cell:
/// shape = eps0_theta + h + tokens + future tables,
/// rate = tau + obs_rate + exposure, where `obs_rate` is
/// `delta^(t) lambda_k * (observed phi mass)` and `exposure` is the
/// table-evidence exposure (tau ln(1 + 1/psi) for the NB chain, tau for the
/// Poisson chain, 0 at the final step).
pub fn theta_posterior(
    eps0_theta: f64,
    h: u64,
    tokens: u64,
    future_tables: u64,
    tau: f64,
    obs_rate: f64,
    exposure: f64,
) -> GammaPosterior {
    GammaPosterior {
        shape: eps0_theta + (h + tokens + future_tables) as f64,
        rate: tau + obs_rate + exposure,
    }
}

/// Component-weight update:
/// shape = eps0_lambda/K + g + all tokens + first-step tables,
/// rate = beta + sum_t delta theta obs_mass + exposure.
pub fn lambda_posterior(
    eps0_lambda: f64,
    k: usize,
    g: u64,
    total_tokens: u64,
    first_tables: u64,
    beta: f64,
    obs_rate_sum: f64,
    exposure: f64,
) -> GammaPosterior {
    GammaPosterior {
        shape: eps0_lambda / k as f64 + (g + total_tokens + first_tables) as f64,
        rate: beta + obs_rate_sum + exposure,
    }
}

/// Total-activity update given the component activity counts:
/// gamma_weight ~ Gam(eps0 + sum_k g_k, eps0 + 1).
pub fn gamma_weight_posterior(eps0: f64, g_sum: u64) -> GammaPosterior {
    GammaPosterior {
        shape: eps0 + g_sum as f64,
        rate: eps0 + 1.0,
    }
}

/// Weight-rate update: beta ~ Gam(eps0 + sum_k (eps0_lambda/K + g_k),
/// eps0 + sum_k lambda_k); the K shape offsets collapse to eps0_lambda.
pub fn beta_posterior(eps0: f64, eps0_lambda: f64, g_sum: u64, lambda_sum: f64) -> GammaPosterior {
    GammaPosterior {
        shape: eps0 + eps0_lambda + g_sum as f64,
        rate: eps0 + lambda_sum,
    }
}

/// Burstiness update for one step (or all steps pooled when stationary):
/// delta ~ Gam(eps0 + observed count total, eps0 + observed rate mass),
/// where the rate mass is `sum_k lambda_k theta_k obs_mass_k` summed over
/// the pooled steps.
pub fn delta_posterior(eps0: f64, observed_total: u64, rate_mass: f64) -> GammaPosterior {
    GammaPosterior {
        shape: eps0 + observed_total as f64,
        rate: eps0 + rate_mass,
    }
}

/// Dirichlet concentrations of a loading column: eps0 + per-dimension tokens.
pub fn phi_posterior_alpha(eps0: f64, token_column: &[u64]) -> Vec<f64> {
    token_column.iter().map(|&n| eps0 + n as f64).collect()
}

/// Dirichlet concentrations of a transition column: prior concentrations
/// plus aggregated tables. Entries with zero prior concentration and zero
/// tables stay exactly zero.
pub fn pi_posterior_alpha(concentration_column: &[f64], table_column: &[u64]) -> Vec<f64> {
    concentration_column
        .iter()
        .zip(table_column)
        .map(|(&a, &l)| a + l as f64)
        .collect()
}

/// Graph-magnitude update: d ~ Gam(eps0 + tables, eps0 + exposure).
pub fn d_posterior(eps0: f64, tables: u64, exposure: f64) -> GammaPosterior {
    GammaPosterior {
        shape: eps0 + tables as f64,
        rate: eps0 + exposure,
    }
}

/// Overdispersion update (NB chain only): psi ~ Gam(eps0 + sum s, eps0 +
/// sum h_hat), by gamma-rate conjugacy of the mixing masses.
pub fn psi_posterior(eps0: f64, shape_sum: f64, h_hat_sum: f64) -> GammaPosterior {
    GammaPosterior {
        shape: eps0 + shape_sum,
        rate: eps0 + h_hat_sum,
    }
}
