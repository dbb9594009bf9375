//! Command-line interface: synthetic data, chain simulation, fitting,
//! prediction, scoring, graph extraction, and batch experiments.
//!
//! Every command drives all randomness from one `--seed` through named
//! sub-streams, and writes a manifest recording its inputs' content hash.
//! Exit codes: 0 success, 2 configuration error, 3 data-format/IO error,
//! 4 numerical or structural error.

use clap::{Args, Parser, Subcommand};
use nbrgds::chains::{self, ChainConfig, ChainFamily};
use nbrgds::data::{
    self, generate_zinb, load_counts, make_mask, save_counts, MaskMode, MaskSpec, ZinbConfig,
};
use nbrgds::error::{Error, Result};
use nbrgds::eval::{
    self, posterior_mean_gs, predict_heldout, run_experiment, ExperimentSpec,
    DEFAULT_FORECAST_ROLLOUTS,
};
use nbrgds::inference::{load_trace, run_gibbs, save_diagnostics, save_trace, Schedule};
use nbrgds::manifest::ManifestBuilder;
use nbrgds::model::{generate_counts, sample_prior, ModelConfig};
use nbrgds::rng::{streams, RngStream};
use nbrgds::transition::{extract_graph, TransitionVariant};
use ndarray::{Array1, Array2};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "nbrgds",
    version,
    about = "Negative-binomial-randomized gamma dynamical systems for count time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic counts from a ZINB config or from the model prior.
    Synth(SynthArgs),
    /// Simulate independent chain realizations to a trajectory CSV.
    Simulate(SimulateArgs),
    /// Fit the model by Gibbs sampling and write a posterior trace.
    Fit(FitArgs),
    /// Posterior-mean predictions of held-out cells from a trace.
    Predict(PredictArgs),
    /// Score predictions against the truth over a mask.
    Score(ScoreArgs),
    /// Extract the latent graph from a graph-structured fit.
    Graph(GraphArgs),
    /// Run a batch experiment spec: models x repeats, aggregated metrics.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// ZINB generator config (JSON).
    #[arg(long, conflicts_with = "model_config")]
    zinb_config: Option<PathBuf>,
    /// Model config (JSON): draw from the prior and generate counts.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating latent state (model source only).
    #[arg(long)]
    out_state: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "nbrgmp")]
    family: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    #[arg(long, default_value_t = 1.0)]
    psi: f64,
    #[arg(long, default_value_t = 0.0)]
    eps0_theta: f64,
    /// Initial value broadcast over all components.
    #[arg(long, default_value_t = 1.0)]
    theta0: f64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 10)]
    chains: usize,
    /// Transition: "identity" or "dirichlet:<alpha>".
    #[arg(long, default_value = "identity")]
    transition: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model config JSON; flags below override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Held-out protocol: "smoothing:<fraction>", "forecast:<S>" or "none".
    #[arg(long, default_value = "none")]
    mask: String,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 3000)]
    burnin: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    /// plain | fs | gs
    #[arg(long)]
    variant: Option<String>,
    /// nbrgmp | prgmc
    #[arg(long)]
    chain: Option<String>,
    #[arg(long)]
    stationary_delta: bool,
    #[arg(long)]
    sample_psi: bool,
    #[arg(long)]
    sample_tau: bool,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out_trace: PathBuf,
    #[arg(long)]
    out_diagnostics: Option<PathBuf>,
    #[arg(long)]
    out_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Mask JSON; defaults to the mask stored in the trace.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FORECAST_ROLLOUTS)]
    rollouts: usize,
    /// Round posterior-mean rates to whole counts.
    #[arg(long)]
    round: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Metrics JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = nbrgds::transition::ACTIVE_COMMUNITY_FRACTION)]
    threshold: f64,
    #[arg(long)]
    out_edges: PathBuf,
    #[arg(long)]
    out_communities: PathBuf,
    /// Optional community-loading matrix export.
    #[arg(long)]
    out_loadings: Option<PathBuf>,
    /// Optional community-weight export.
    #[arg(long)]
    out_weights: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_results: PathBuf,
    /// Per-run rows (model, repeat, mae, mre).
    #[arg(long)]
    out_runs: Option<PathBuf>,
    #[arg(long)]
    out_manifest: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Score(args) => cmd_score(args),
        Command::Graph(args) => cmd_graph(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn parse_mask_flag(s: &str) -> Result<Option<(MaskMode, Option<f64>, Option<usize>)>> {
    if s == "none" {
        return Ok(None);
    }
    let (mode, value) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("mask '{s}' is not mode:value")))?;
    match mode {
        "smoothing" => {
            let fraction: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("bad holdout fraction '{value}'")))?;
            Ok(Some((MaskMode::Smoothing, Some(fraction), None)))
        }
        "forecast" => {
            let horizon: usize = value
                .parse()
                .map_err(|_| Error::Config(format!("bad forecast horizon '{value}'")))?;
            Ok(Some((MaskMode::Forecast, None, Some(horizon))))
        }
        other => Err(Error::Config(format!("unknown mask mode '{other}'"))),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut rng = RngStream::new(args.seed, streams::SYNTH);
    if let Some(path) = &args.zinb_config {
        let cfg: ZinbConfig = read_json(path)?;
        cfg.validate()?;
        let (counts, groups) = generate_zinb(&cfg, &mut rng)?;
        let mut builder = ManifestBuilder::new(
            "synth",
            args.seed,
            serde_json::to_value(&cfg).map_err(|e| Error::Serde(e.to_string()))?,
        );
        builder.input_file(path)?;
        let manifest = builder.finish(vec![args.out.clone()]);
        save_counts(&counts, &args.out, Some(&manifest.tag()))?;
        let meta = serde_json::json!({
            "schema_version": 1,
            "manifest": manifest,
            "source": "zinb",
            "groups": groups,
            "variance_to_expectation": cfg.variance_to_expectation(),
        });
        write_json(&meta, &with_suffix(&args.out, ".meta.json"))?;
        Ok(())
    } else if let Some(path) = &args.model_config {
        let cfg: ModelConfig = read_json(path)?;
        let cfg = cfg.resolved_for(cfg.v.max(1), cfg.t.max(1));
        cfg.validate()?;
        let state = sample_prior(&cfg, &mut rng)?;
        let counts = generate_counts(&cfg, &state, &mut rng)?;
        let mut builder = ManifestBuilder::new(
            "synth",
            args.seed,
            serde_json::to_value(&cfg).map_err(|e| Error::Serde(e.to_string()))?,
        );
        builder.input_file(path)?;
        let manifest = builder.finish(vec![args.out.clone()]);
        save_counts(&counts, &args.out, Some(&manifest.tag()))?;
        if let Some(state_path) = &args.out_state {
            let body = serde_json::to_string(&state).map_err(|e| Error::Serde(e.to_string()))?;
            std::fs::write(state_path, body).map_err(|e| Error::io(state_path, e))?;
        }
        let meta = serde_json::json!({
            "schema_version": 1,
            "manifest": manifest,
            "source": "model-prior",
        });
        write_json(&meta, &with_suffix(&args.out, ".meta.json"))?;
        Ok(())
    } else {
        Err(Error::Config(
            "synth needs --zinb-config or --model-config".into(),
        ))
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let family: ChainFamily = args.family.parse()?;
    let config = ChainConfig {
        family,
        k: args.k,
        tau: args.tau,
        tau0: args.tau0,
        psi: args.psi,
        eps0_theta: args.eps0_theta,
    };
    let rng = RngStream::new(args.seed, streams::SIMULATE);
    let pi = if args.transition == "identity" {
        chains::identity_transition(args.k)
    } else if let Some(alpha) = args.transition.strip_prefix("dirichlet:") {
        let alpha: f64 = alpha
            .parse()
            .map_err(|_| Error::Config(format!("bad transition alpha '{alpha}'")))?;
        chains::random_transition(args.k, alpha, &mut rng.substream(0))?
    } else {
        return Err(Error::Config(format!(
            "unknown transition '{}' (identity or dirichlet:<alpha>)",
            args.transition
        )));
    };
    let theta0 = Array1::from_elem(args.k, args.theta0);
    let traj = chains::simulate_realizations(
        &config,
        &pi.view(),
        &theta0,
        args.horizon,
        args.chains,
        &mut rng.substream(1),
    )?;
    let manifest = ManifestBuilder::new(
        "simulate",
        args.seed,
        serde_json::to_value(&config).map_err(|e| Error::Serde(e.to_string()))?,
    )
    .finish(vec![args.out.clone()]);
    let mut file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut out = String::new();
    out.push_str(&format!("# {}\n", manifest.tag()));
    out.push_str("chain,k");
    for t in 1..=args.horizon {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    for c in 0..args.chains {
        for k in 0..args.k {
            out.push_str(&format!("{c},{k}"));
            for t in 0..args.horizon {
                out.push_str(&format!(",{}", traj[(c, k, t)]));
            }
            out.push('\n');
        }
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(&args.out, e))?;
    write_json(
        &serde_json::to_value(&manifest).map_err(|e| Error::Serde(e.to_string()))?,
        &with_suffix(&args.out, ".manifest.json"),
    )?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let counts = load_counts(&args.data)?;
    let mut config = match &args.config {
        Some(path) => read_json::<ModelConfig>(path)?,
        None => ModelConfig::new(0, 0, 0, 0),
    };
    if let Some(k) = args.k {
        config.k = k;
        if args.c.is_none() {
            config.c = k;
        }
    }
    if let Some(c) = args.c {
        config.c = c;
    }
    if let Some(v) = &args.variant {
        config.variant = v.parse::<TransitionVariant>()?;
    }
    if let Some(ch) = &args.chain {
        config.chain = ch.parse::<ChainFamily>()?;
    }
    if args.stationary_delta {
        config.stationary_delta = true;
    }
    if args.sample_psi {
        config.sample_psi = true;
    }
    if args.sample_tau {
        config.sample_tau = true;
    }
    if let Some(psi) = args.psi {
        config.psi = psi;
    }
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    config.v = 0;
    config.t = 0;
    let config = config.resolved_for(counts.v(), counts.t());
    config.validate()?;

    let mask = match parse_mask_flag(&args.mask)? {
        None => MaskSpec::none(),
        Some((mode, fraction, horizon)) => {
            let mut mask_rng = RngStream::new(args.seed, streams::MASK);
            make_mask(&counts, mode, fraction, horizon, &mut mask_rng)?
        }
    };
    let schedule = Schedule::new(args.iters, args.burnin, args.thin)?;
    let mut rng = RngStream::new(args.seed, streams::GIBBS);
    let trace = run_gibbs(&counts, &mask, &config, schedule, &mut rng)?;

    let mut builder = ManifestBuilder::new(
        "fit",
        args.seed,
        serde_json::json!({
            "config": config,
            "schedule": schedule,
            "mask_mode": args.mask,
        }),
    );
    builder.input_file(&args.data)?;
    if let Some(cfg_path) = &args.config {
        builder.input_file(cfg_path)?;
    }
    let mut outputs = vec![args.out_trace.clone()];
    save_trace(&trace, &args.out_trace)?;
    let diag_path = args
        .out_diagnostics
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out_trace, ".diagnostics.csv"));
    save_diagnostics(&trace, &diag_path)?;
    outputs.push(diag_path);
    if let Some(mask_path) = &args.out_mask {
        mask.save_json(mask_path)?;
        outputs.push(mask_path.clone());
    }
    let manifest = builder.finish(outputs);
    write_json(
        &serde_json::to_value(&manifest).map_err(|e| Error::Serde(e.to_string()))?,
        &with_suffix(&args.out_trace, ".manifest.json"),
    )?;
    eprintln!(
        "fit: {} retained samples, final joint log-likelihood {:.3}",
        trace.samples.len(),
        trace
            .diagnostics
            .last()
            .map(|d| d.joint_loglik)
            .unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let trace = load_trace(&args.trace)?;
    let mask = match &args.mask {
        Some(path) => MaskSpec::load_json(path)?,
        None => trace.mask.clone(),
    };
    if mask.is_empty() {
        return Err(Error::Config(
            "the trace has no held-out mask; pass one with --mask".into(),
        ));
    }
    let mut rng = RngStream::new(args.seed, streams::PREDICT);
    let mut estimate = predict_heldout(&trace, &mask, args.rollouts, &mut rng)?;
    if args.round {
        estimate.mapv_inplace(f64::round);
    }
    let mut builder = ManifestBuilder::new(
        "predict",
        args.seed,
        serde_json::json!({"rollouts": args.rollouts, "round": args.round}),
    );
    builder.input_file(&args.trace)?;
    let manifest = builder.finish(vec![args.out.clone()]);
    let mut body = format!("# {}\nv,t,estimate\n", manifest.tag());
    for &(v, t) in &mask.cells {
        body.push_str(&format!("{v},{t},{}\n", estimate[(v, t)]));
    }
    std::fs::write(&args.out, body).map_err(|e| Error::io(&args.out, e))?;
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let truth = load_counts(&args.truth)?;
    let mask = MaskSpec::load_json(&args.mask)?;
    if mask.is_empty() {
        return Err(Error::Config("scoring over an empty mask".into()));
    }
    let mut estimate = Array2::zeros(truth.values.dim());
    let mut covered = std::collections::HashSet::new();
    let body = std::fs::read_to_string(&args.pred).map_err(|e| Error::io(&args.pred, e))?;
    for (i, line) in body.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("v,") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::DataFormat {
                msg: "prediction rows are v,t,estimate".into(),
                row: i + 1,
                col: fields.len(),
            });
        }
        let v: usize = fields[0].parse().map_err(|_| Error::DataFormat {
            msg: format!("bad dimension index '{}'", fields[0]),
            row: i + 1,
            col: 1,
        })?;
        let t: usize = fields[1].parse().map_err(|_| Error::DataFormat {
            msg: format!("bad time index '{}'", fields[1]),
            row: i + 1,
            col: 2,
        })?;
        let e: f64 = fields[2].parse().map_err(|_| Error::DataFormat {
            msg: format!("bad estimate '{}'", fields[2]),
            row: i + 1,
            col: 3,
        })?;
        if v >= truth.v() || t >= truth.t() {
            return Err(Error::DataFormat {
                msg: format!("cell ({v}, {t}) outside the truth matrix"),
                row: i + 1,
                col: 1,
            });
        }
        estimate[(v, t)] = e;
        covered.insert((v, t));
    }
    for &(v, t) in &mask.cells {
        if !covered.contains(&(v, t)) {
            return Err(Error::Config(format!(
                "prediction file does not cover masked cell ({v}, {t})"
            )));
        }
    }
    let metrics = data::compute_metrics(&truth, &estimate, &mask)?;
    let mut builder = ManifestBuilder::new("score", 0, serde_json::json!({}));
    builder.input_file(&args.truth)?;
    builder.input_file(&args.pred)?;
    builder.input_file(&args.mask)?;
    let manifest = builder.finish(args.out.iter().cloned().collect());
    let out = serde_json::json!({
        "schema_version": 1,
        "manifest_hash": manifest.content_hash,
        "mae": metrics.mae,
        "mre": metrics.mre,
        "n_cells": metrics.n_cells,
    });
    match &args.out {
        Some(path) => write_json(&out, path)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&out).map_err(|e| Error::Serde(e.to_string()))?
        ),
    }
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> Result<()> {
    let trace = load_trace(&args.trace)?;
    let gs = posterior_mean_gs(&trace)?;
    let summary = extract_graph(&gs, args.threshold);
    let mut builder = ManifestBuilder::new(
        "graph",
        0,
        serde_json::json!({"threshold": args.threshold}),
    );
    builder.input_file(&args.trace)?;
    let manifest = builder.finish(vec![args.out_edges.clone(), args.out_communities.clone()]);

    let mut edges = format!("# {}\nsource,target,weight\n", manifest.tag());
    for &(k1, k2, d) in &summary.edges {
        // (k1, k2) reads "source k2 excites target k1"; export source first.
        edges.push_str(&format!("{k2},{k1},{d}\n"));
    }
    std::fs::write(&args.out_edges, edges).map_err(|e| Error::io(&args.out_edges, e))?;

    let mut comms = format!("# {}\nvertex,community,membership_weight\n", manifest.tag());
    for (vertex, (&community, &weight)) in summary
        .assignment
        .iter()
        .zip(&summary.membership)
        .enumerate()
    {
        comms.push_str(&format!("{vertex},{community},{weight}\n"));
    }
    std::fs::write(&args.out_communities, comms)
        .map_err(|e| Error::io(&args.out_communities, e))?;

    if let Some(path) = &args.out_loadings {
        let c = gs.communities.c();
        let mut body = format!("# {}\nvertex", manifest.tag());
        for ci in 0..c {
            body.push_str(&format!(",c{ci}"));
        }
        body.push('\n');
        for k in 0..gs.communities.m.nrows() {
            body.push_str(&k.to_string());
            for ci in 0..c {
                body.push_str(&format!(",{}", gs.communities.m[(k, ci)]));
            }
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &args.out_weights {
        let mut body = format!("# {}\ncommunity,weight,active\n", manifest.tag());
        for (ci, &w) in gs.communities.r.iter().enumerate() {
            let active = summary.active_communities.contains(&ci);
            body.push_str(&format!("{ci},{w},{active}\n"));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    eprintln!(
        "graph: {} edges, {} active communities",
        summary.edges.len(),
        summary.active_communities.len()
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let spec: ExperimentSpec = read_json(&args.spec)?;
    let results = run_experiment(&spec)?;
    eval::save_results_csv(&results, &args.out_results)?;
    if let Some(path) = &args.out_runs {
        let mut body = String::from("model,repeat,mae,mre,n_cells\n");
        for run in &results.runs {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                run.model, run.repeat, run.metrics.mae, run.metrics.mre, run.metrics.n_cells
            ));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    let mut builder = ManifestBuilder::new(
        "experiment",
        spec.seed,
        serde_json::to_value(&spec).map_err(|e| Error::Serde(e.to_string()))?,
    );
    builder.input_file(&args.spec)?;
    let manifest = builder.finish(vec![args.out_results.clone()]);
    if let Some(path) = &args.out_manifest {
        manifest.save(path)?;
    }
    for row in &results.rows {
        println!(
            "{} {} {}: {:.4} ± {:.4}",
            row.model, row.task, row.metric, row.mean, row.std
        );
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
