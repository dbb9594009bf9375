use super::geweke::{geweke_test, GewekeOptions};
use super::updates::*;
use super::*;
use crate::chains::ChainFamily;
use crate::data::{make_mask, MaskMode};
use crate::model::{generate_counts, sample_prior};
use crate::transition::TransitionVariant;

fn small_config(variant: TransitionVariant) -> ModelConfig {
    let mut c = ModelConfig::new(4, 6, 3, 2);
    c.variant = variant;
    c.eps0 = 1.0;
    c.eps0_theta = 1.0;
    c
}

fn small_counts(config: &ModelConfig, seed: u64) -> CountMatrix {
    let mut rng = RngStream::new(seed, 0);
    let state = sample_prior(config, &mut rng).unwrap();
    generate_counts(config, &state, &mut rng).unwrap()
}

#[test]
fn schedule_arithmetic() {
    let s = Schedule::new(5000, 3000, 10).unwrap();
    assert_eq!(s.retained(), 200);
    assert!(Schedule::new(100, 100, 10).is_err());
    assert!(Schedule::new(100, 50, 0).is_err());
    let kept: Vec<usize> = (1..=50).filter(|&i| Schedule::new(50, 20, 10).unwrap().keeps(i)).collect();
    assert_eq!(kept, vec![30, 40, 50]);
}

#[test]
fn update_law_arithmetic() {
    // Chain-state conjugacy at the boundary step: shape eps0 + h + tokens,
    // rate tau + observation rate, no future terms.
    let p = theta_posterior(1.0, 2, 3, 0, 1.0, 1.0, 0.0);
    assert_eq!((p.shape, p.rate), (6.0, 2.0));
    assert_eq!(p.mean(), 3.0);

    let p = beta_posterior(0.1, 1.0, 0, 2.0);
    assert!((p.mean() - 1.1 / 2.1).abs() < 1e-12);

    let p = delta_posterior(1.0, 10, 4.0);
    assert!((p.mean() - 2.2).abs() < 1e-12);

    let p = gamma_weight_posterior(0.5, 0);
    assert_eq!((p.shape, p.rate), (0.5, 1.5));

    let p = d_posterior(1.0, 4, 1.0);
    assert!((p.mean() - 2.5).abs() < 1e-12);
    let p = d_posterior(0.7, 0, 0.0);
    assert_eq!((p.shape, p.rate), (0.7, 0.7));

    // psi posterior mean tends to sum(s)/sum(h_hat) as eps0 -> 0.
    let p = psi_posterior(1e-12, 8.0, 4.0);
    assert!((p.mean() - 2.0).abs() < 1e-9);

    let alpha = phi_posterior_alpha(1.0, &[3, 1]);
    assert_eq!(alpha, vec![4.0, 2.0]);
    let alpha = pi_posterior_alpha(&[1.0, 1.0], &[3, 1]);
    assert_eq!(alpha, vec![4.0, 2.0]);
    // Zero concentration + zero tables stays exactly zero.
    let alpha = pi_posterior_alpha(&[0.0, 2.0], &[0, 5]);
    assert_eq!(alpha[0], 0.0);
}

#[test]
fn identical_seeds_give_identical_traces() {
    for variant in [
        TransitionVariant::Plain,
        TransitionVariant::FactorStructured,
        TransitionVariant::GraphStructured,
    ] {
        let config = small_config(variant);
        let counts = small_counts(&config, 42);
        let mask = make_mask(
            &counts,
            MaskMode::Smoothing,
            Some(0.2),
            None,
            &mut RngStream::new(7, 1),
        )
        .unwrap();
        let schedule = Schedule::new(30, 10, 5).unwrap();
        let run = |seed: u64| {
            let mut rng = RngStream::new(seed, 2);
            run_gibbs(&counts, &mask, &config, schedule, &mut rng).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.samples.len(), schedule.retained());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(
                serde_json::to_string(x).unwrap(),
                serde_json::to_string(y).unwrap()
            );
        }
        let c = run(6);
        assert_ne!(
            serde_json::to_string(&a.samples[0]).unwrap(),
            serde_json::to_string(&c.samples[0]).unwrap()
        );
    }
}

#[test]
fn masked_cells_never_influence_the_trace() {
    let config = small_config(TransitionVariant::Plain);
    let counts = small_counts(&config, 43);
    let mask = make_mask(
        &counts,
        MaskMode::Smoothing,
        Some(0.25),
        None,
        &mut RngStream::new(8, 1),
    )
    .unwrap();
    let mut perturbed = counts.clone();
    let &(mv, mt) = mask.cells.first().unwrap();
    perturbed.values[(mv, mt)] += 1000;
    let schedule = Schedule::new(20, 5, 5).unwrap();
    let run = |data: &CountMatrix| {
        let mut rng = RngStream::new(9, 3);
        let trace = run_gibbs(data, &mask, &config, schedule, &mut rng).unwrap();
        trace
            .samples
            .iter()
            .map(|s| serde_json::to_string(s).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(&counts), run(&perturbed));
}

#[test]
fn tokens_and_tables_conserve_and_respect_bounds() {
    let config = small_config(TransitionVariant::Plain);
    let counts = small_counts(&config, 44);
    let mask = make_mask(
        &counts,
        MaskMode::Smoothing,
        Some(0.2),
        None,
        &mut RngStream::new(10, 1),
    )
    .unwrap();
    let mut rng = RngStream::new(11, 0);
    let mut sampler =
        GibbsSampler::new(counts.clone(), mask.clone(), config.clone(), &mut rng).unwrap();
    for _ in 0..20 {
        sampler.allocate_tokens(&mut rng).unwrap();
        // Token conservation: per-step component tokens match the observed
        // column totals; per-dimension tokens match observed row totals.
        for t in 0..config.t {
            let col: u64 = (0..config.k).map(|k| sampler.aux().comp_tokens[(k, t)]).sum();
            let expect: u64 = (0..config.v)
                .filter(|&v| !mask.is_masked(v, t))
                .map(|v| counts.values[(v, t)])
                .sum();
            assert_eq!(col, expect);
        }
        for v in 0..config.v {
            let row: u64 = (0..config.k).map(|k| sampler.aux().phi_tokens[(v, k)]).sum();
            let expect: u64 = (0..config.t)
                .filter(|&t| !mask.is_masked(v, t))
                .map(|t| counts.values[(v, t)])
                .sum();
            assert_eq!(row, expect);
        }
        // Table bounds against the h the tables were drawn from.
        let h_snapshot = sampler.state().h.clone();
        sampler.sample_chain_tables(&mut rng).unwrap();
        for t in 0..config.t {
            let mut src_sum = 0u64;
            for k in 0..config.k {
                let l = sampler.aux().tables[(k, t)];
                let h = h_snapshot[(k, t)];
                assert!(l <= h, "table {l} above count {h}");
                assert!(h == 0 || l >= 1, "count {h} with no table");
                src_sum += sampler.aux().table_source_sums[(k, t)];
            }
            let tab_sum: u64 = (0..config.k).map(|k| sampler.aux().tables[(k, t)]).sum();
            assert_eq!(src_sum, tab_sum, "source split lost tables at step {t}");
        }
        // Complete the sweep to evolve the state.
        sampler.sample_theta(&mut rng).unwrap();
        sampler.sample_lambda_block(&mut rng).unwrap();
        sampler.sample_pi(&mut rng).unwrap();
        sampler.reinstantiate_chain(&mut rng).unwrap();
        sampler.sample_phi(&mut rng).unwrap();
        sampler.recompute_obs_mass();
        sampler.sample_delta(&mut rng).unwrap();
        sampler.state().check_invariants().unwrap();
    }
}

#[test]
fn zero_state_is_absorbing_in_the_sweep() {
    let mut config = small_config(TransitionVariant::Plain);
    config.eps0_theta = 0.0;
    let counts = CountMatrix::new(ndarray::Array2::zeros((config.v, config.t)));
    let mut rng = RngStream::new(12, 0);
    let mut sampler =
        GibbsSampler::new(counts, MaskSpec::none(), config.clone(), &mut rng).unwrap();
    let mut state = sampler.state().clone();
    for t in 1..=config.t {
        for k in 0..config.k {
            state.theta[(k, t)] = 0.0;
        }
    }
    state.h.fill(0);
    state.h_hat.fill(0.0);
    sampler.set_state(state).unwrap();
    for _ in 0..30 {
        sampler.sweep(&mut rng).unwrap();
        assert!(sampler
            .state()
            .theta
            .slice(ndarray::s![.., 1..])
            .iter()
            .all(|&x| x == 0.0));
        assert!(sampler.state().h.iter().all(|&h| h == 0));
    }
}

#[test]
fn heldout_mre_is_finite_every_iteration() {
    let config = small_config(TransitionVariant::Plain);
    let counts = small_counts(&config, 45);
    let mask = make_mask(
        &counts,
        MaskMode::Smoothing,
        Some(0.3),
        None,
        &mut RngStream::new(13, 1),
    )
    .unwrap();
    let schedule = Schedule::new(25, 10, 5).unwrap();
    let mut rng = RngStream::new(14, 0);
    let trace = run_gibbs(&counts, &mask, &config, schedule, &mut rng).unwrap();
    assert_eq!(trace.diagnostics.len(), 25);
    for d in &trace.diagnostics {
        assert!(d.heldout_mre.is_finite());
        assert!(d.heldout_mae.is_finite());
        assert!(d.joint_loglik.is_finite());
    }
}

#[test]
fn forecast_fit_trims_the_horizon() {
    let config = small_config(TransitionVariant::Plain);
    let counts = small_counts(&config, 46);
    let mask = make_mask(
        &counts,
        MaskMode::Forecast,
        None,
        Some(2),
        &mut RngStream::new(15, 1),
    )
    .unwrap();
    let schedule = Schedule::new(20, 5, 5).unwrap();
    let mut rng = RngStream::new(16, 0);
    let trace = run_gibbs(&counts, &mask, &config, schedule, &mut rng).unwrap();
    for s in &trace.samples {
        assert_eq!(s.t(), config.t - 2);
    }
    let mut predict_rng = RngStream::new(17, 0);
    let estimate =
        crate::eval::predict_heldout(&trace, &mask, 4, &mut predict_rng).unwrap();
    assert_eq!(estimate.dim(), (config.v, config.t));
    for &(v, t) in &mask.cells {
        assert!(estimate[(v, t)] >= 0.0 && estimate[(v, t)].is_finite());
    }
}

#[test]
fn smoothing_prediction_with_single_sample_equals_its_rate() {
    let config = small_config(TransitionVariant::Plain);
    let counts = small_counts(&config, 47);
    let mask = make_mask(
        &counts,
        MaskMode::Smoothing,
        Some(0.2),
        None,
        &mut RngStream::new(18, 1),
    )
    .unwrap();
    let schedule = Schedule::new(10, 9, 1).unwrap();
    let mut rng = RngStream::new(19, 0);
    let trace = run_gibbs(&counts, &mask, &config, schedule, &mut rng).unwrap();
    assert_eq!(trace.samples.len(), 1);
    let estimate =
        crate::eval::predict_heldout(&trace, &mask, 1, &mut RngStream::new(20, 0)).unwrap();
    for &(v, t) in &mask.cells {
        assert!((estimate[(v, t)] - trace.samples[0].poisson_rate(v, t)).abs() < 1e-12);
    }
}

#[test]
fn trace_round_trips_through_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.ndjson");
    let config = small_config(TransitionVariant::GraphStructured);
    let counts = small_counts(&config, 48);
    let schedule = Schedule::new(12, 4, 4).unwrap();
    let mut rng = RngStream::new(21, 0);
    let trace = run_gibbs(&counts, &MaskSpec::none(), &config, schedule, &mut rng).unwrap();
    save_trace(&trace, &path).unwrap();
    let loaded = load_trace(&path).unwrap();
    assert_eq!(loaded.samples.len(), trace.samples.len());
    for (a, b) in trace.samples.iter().zip(&loaded.samples) {
        assert_eq!(
            serde_json::to_string(a).unwrap(),
            serde_json::to_string(b).unwrap()
        );
    }
    let diag_path = dir.path().join("diag.csv");
    save_diagnostics(&trace, &diag_path).unwrap();
    let body = std::fs::read_to_string(&diag_path).unwrap();
    assert!(body.starts_with("iteration,heldout_mae,heldout_mre,joint_loglik"));
    assert_eq!(body.lines().count(), 1 + trace.diagnostics.len());
}

#[test]
fn psi_recovery_from_forward_data() {
    // Data generated at psi* = 2; the sampled psi should concentrate nearby.
    let mut ok = 0;
    for seed in 0..10u64 {
        let mut config = ModelConfig::new(10, 200, 3, 2);
        config.eps0 = 1.0;
        config.eps0_theta = 0.5;
        config.psi = 2.0;
        let mut rng = RngStream::new(900 + seed, 0);
        let state = sample_prior(&config, &mut rng).unwrap();
        let counts = generate_counts(&config, &state, &mut rng).unwrap();
        let mut fit_config = config.clone();
        fit_config.sample_psi = true;
        fit_config.psi = 1.0; // start away from the truth
        let schedule = Schedule::new(400, 200, 4).unwrap();
        let trace = run_gibbs(&counts, &MaskSpec::none(), &fit_config, schedule, &mut rng)
            .unwrap();
        let mean_psi: f64 =
            trace.samples.iter().map(|s| s.psi).sum::<f64>() / trace.samples.len() as f64;
        if (1.5..=2.7).contains(&mean_psi) {
            ok += 1;
        }
    }
    assert!(ok >= 8, "psi recovered in only {ok}/10 runs");
}

#[test]
fn tau_metropolis_smoke() {
    let mut config = small_config(TransitionVariant::Plain);
    config.sample_tau = true;
    let counts = small_counts(&config, 49);
    let schedule = Schedule::new(30, 10, 5).unwrap();
    let mut rng = RngStream::new(22, 0);
    let trace = run_gibbs(&counts, &MaskSpec::none(), &config, schedule, &mut rng).unwrap();
    for s in &trace.samples {
        assert!(s.tau.is_finite() && s.tau > 0.0);
    }
    // The chain must actually move.
    let taus: Vec<f64> = trace.samples.iter().map(|s| s.tau).collect();
    assert!(taus.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn geweke_empty_report() {
    let config = small_config(TransitionVariant::Plain);
    let report = geweke_test(
        &config,
        0,
        0,
        GewekeOptions::default(),
        &mut RngStream::new(23, 0),
    )
    .unwrap();
    assert!(report.stats.is_empty());
    assert_eq!(report.max_abs_z(), 0.0);
}

#[test]
fn geweke_prgmc_chain_is_sound() {
    // Smaller companion to the acceptance harness, on the Poisson chain.
    let mut config = ModelConfig::new(3, 4, 2, 2);
    config.chain = ChainFamily::Prgmc;
    config.eps0 = 3.0;
    config.eps0_lambda = 2.0;
    config.eps0_theta = 1.0;
    let report = geweke_test(
        &config,
        20_000,
        20_000,
        GewekeOptions::default(),
        &mut RngStream::new(24, 0),
    )
    .unwrap();
    assert!(
        report.max_abs_z() < 4.0,
        "prgmc geweke failed:\n{report}"
    );
}

#[test]
fn stationary_delta_is_shared() {
    let mut config = small_config(TransitionVariant::Plain);
    config.stationary_delta = true;
    let counts = small_counts(&config, 50);
    let schedule = Schedule::new(10, 5, 1).unwrap();
    let mut rng = RngStream::new(25, 0);
    let trace = run_gibbs(&counts, &MaskSpec::none(), &config, schedule, &mut rng).unwrap();
    for s in &trace.samples {
        let first = s.delta[0];
        assert!(s.delta.iter().all(|&d| d == first));
    }
}

#[test]
fn trailing_delta_window() {
    let delta = ndarray::Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    assert!((trailing_delta(&delta, 5) - 5.0).abs() < 1e-12);
    assert!((trailing_delta(&delta, 100) - 4.0).abs() < 1e-12);
    let one = ndarray::Array1::from_vec(vec![3.0]);
    assert!((trailing_delta(&one, 5) - 3.0).abs() < 1e-12);
}
