//! `moe`: model-order estimation and CP decomposition for dense tensors.
//!
//! Subcommands cover the full workflow: synthesize noisy low-rank tensors,
//! dump global eigenvalue profiles, estimate the rank with the regression or
//! criterion estimators, calibrate thresholds and benchmark detection rates
//! by Monte-Carlo, and compute rank-constrained CP decompositions. Every run
//! writes a `manifest.json` recording the resolved configuration, and all
//! numeric outputs are byte-reproducible for a fixed seed.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use tenmoe::cp::{CpOptions, cp_als};
use tenmoe::criteria::{
    CriterionKind, InformationCriterionInput, argmin, criterion_curve, nd_snapshot_count,
    widest_mode,
};
use tenmoe::io::{load_tensor, save_tensor};
use tenmoe::large::{self, DEFAULT_EPSILON, DEFAULT_RHO, LargeConfig};
use tenmoe::sim::{self, ScenarioConfig};
use tenmoe::spectra::{global_eigenvalues, mode_singular_values};
use tenmoe::Method;

use output::{RunManifest, sci, write_json, write_text};

#[derive(Parser)]
#[command(
    name = "moe",
    version,
    about = "Tensor model-order estimation, benchmarking, and CP decomposition",
    after_help = "Exit codes: 0 success, 1 I/O failure, 2 configuration error, \
                  3 input-format error, 4 infeasible request."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one noisy low-rank trial tensor from a scenario file.
    Synth(SynthArgs),
    /// Write the global eigenvalue profile of a tensor as CSV.
    Spectra(SpectraArgs),
    /// Estimate the model order of a tensor with one method.
    Estimate(EstimateArgs),
    /// Sweep the decision threshold over Monte-Carlo trials.
    Calibrate(SimArgs),
    /// Sweep the SNR over Monte-Carlo trials at a fixed threshold.
    Benchmark(SimArgs),
    /// Compute a rank-constrained CP decomposition.
    Decompose(DecomposeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario JSON describing dims, rank, correlation, snr_db, and seed.
    #[arg(long)]
    scenario: PathBuf,
    /// Output tensor path; defaults to `synth.tnsr` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which trial stream of the scenario to materialize.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SpectraArgs {
    /// Input tensor file.
    #[arg(long)]
    input: PathBuf,
    /// Directory for outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input tensor file.
    #[arg(long)]
    input: PathBuf,
    /// Estimator: large, large-pf, aic, mdl, nd-aic, or nd-mdl.
    #[arg(long, default_value = "large", value_parser = parse_method)]
    method: Method,
    /// Apply the penalty factor (shorthand turning `large` into `large-pf`).
    #[arg(long)]
    pf: bool,
    /// Decision threshold for the regression estimators.
    #[arg(long, default_value_t = DEFAULT_RHO)]
    rho: f64,
    /// Suppression floor for near-zero residual spread.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Directory for outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario JSON; `calibrate` uses its rho_grid, `benchmark` its
    /// snr_grid.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 means all cores. The MOE_THREADS environment
    /// variable takes precedence.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Directory for outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input tensor file.
    #[arg(long)]
    input: PathBuf,
    /// Number of components; exactly one of --rank and --auto is required.
    #[arg(long)]
    rank: Option<usize>,
    /// Estimate the rank first with the regression estimator.
    #[arg(long)]
    auto: bool,
    /// Decision threshold used by --auto.
    #[arg(long, default_value_t = DEFAULT_RHO)]
    rho: f64,
    /// Suppression floor used by --auto.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Cap on alternating-least-squares sweeps.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Stop once the relative-fit improvement of a sweep falls below this.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Seed for randomized initialization fallbacks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Error carrying the process exit code alongside the message.
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }
}

impl From<tenmoe::Error> for CliError {
    fn from(e: tenmoe::Error) -> Self {
        use tenmoe::Error::*;
        let code = match &e {
            Config(_) | InvalidCorrelation(_) | DimensionMismatch(_) | ModeOutOfRange { .. } => 2,
            Format(_) | NonFinite => 3,
            InfeasibleRank { .. } | ZeroTensor | DegenerateProfile(_) => 4,
            Io(_) => 1,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moe: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

/// What each subcommand hands back for the manifest.
struct Completed {
    out_dir: PathBuf,
    command: &'static str,
    config: serde_json::Value,
    master_seed: Option<u64>,
    outputs: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let done = match cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Spectra(a) => cmd_spectra(a)?,
        Command::Estimate(a) => cmd_estimate(a)?,
        Command::Calibrate(a) => cmd_calibrate(a)?,
        Command::Benchmark(a) => cmd_benchmark(a)?,
        Command::Decompose(a) => cmd_decompose(a)?,
    };
    let manifest = RunManifest {
        command: done.command.to_string(),
        argv: std::env::args().collect(),
        config: done.config,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: done.master_seed,
        duration_seconds: started.elapsed().as_secs_f64(),
        outputs: done.outputs,
    };
    write_json(&done.out_dir.join("manifest.json"), &manifest)
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid scenario {}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> Result<Completed, CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut cfg = load_scenario(&a.scenario)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out_path = a.out.unwrap_or_else(|| a.out_dir.join("synth.tnsr"));
    let synth = sim::synth_trial(&cfg, a.trial)?;
    save_tensor(&synth.tensor, &out_path)?;
    let meta_path = out_path.with_extension("meta.json");
    write_json(
        &meta_path,
        &json!({
            "tensor_file": out_path.display().to_string(),
            "dims": cfg.dims,
            "planted_rank": cfg.rank,
            "correlation": cfg.correlation_resolved(),
            "snr_db": cfg.snr_db,
            "realized_snr_db": synth.realized_snr_db,
            "seed": cfg.seed,
            "trial": a.trial,
        }),
    )?;
    Ok(Completed {
        command: "synth",
        config: json!({
            "scenario_path": a.scenario.display().to_string(),
            "scenario": cfg,
            "trial": a.trial,
            "out": out_path.display().to_string(),
        }),
        master_seed: Some(cfg.seed),
        outputs: vec![
            out_path.display().to_string(),
            meta_path.display().to_string(),
        ],
        out_dir: a.out_dir,
    })
}

fn cmd_spectra(a: SpectraArgs) -> Result<Completed, CliError> {
    prepare_out_dir(&a.out_dir)?;
    let t = load_tensor(&a.input)?;
    let profile = global_eigenvalues(&t)?;
    let mut csv = String::from("index,value,log\n");
    for (i, (v, l)) in profile.values().iter().zip(profile.logs()).enumerate() {
        csv.push_str(&format!("{},{},{}\n", i + 1, sci(*v), sci(*l)));
    }
    let path = a.out_dir.join("spectra.csv");
    write_text(&path, &csv)?;
    Ok(Completed {
        command: "spectra",
        config: json!({
            "input": a.input.display().to_string(),
            "dims": t.dims(),
        }),
        master_seed: None,
        outputs: vec![path.display().to_string()],
        out_dir: a.out_dir,
    })
}

#[derive(Serialize)]
struct EstimateSummary {
    method: Method,
    rank: usize,
    defaulted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

fn cmd_estimate(a: EstimateArgs) -> Result<Completed, CliError> {
    prepare_out_dir(&a.out_dir)?;
    let method = match (a.method, a.pf) {
        (Method::Large | Method::LargePf, true) => Method::LargePf,
        (m, false) => m,
        (m, true) => {
            return Err(CliError::config(format!(
                "--pf does not apply to method {m}"
            )));
        }
    };
    let t = load_tensor(&a.input)?;
    let mut outputs = Vec::new();
    let summary = if method.is_large_family() {
        let lc = LargeConfig {
            rho: a.rho,
            epsilon: a.epsilon,
            use_penalty: method == Method::LargePf,
        };
        let profile = global_eigenvalues(&t)?;
        let trace = large::pesdr_trace(&profile, &lc)?;
        let est = large::estimate_rank(&trace, &lc);
        let mut csv = String::from(
            "i,a1,a2,lambda,lambda_hat,delta,delta_rel,sigma,pesdr,pesdr_pf,suppressed\n",
        );
        for e in trace.entries() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                e.index,
                sci(e.a1),
                sci(e.a2),
                sci(e.lambda),
                sci(e.lambda_hat),
                sci(e.delta),
                sci(e.delta_rel),
                sci(e.sigma),
                sci(e.pesdr),
                sci(e.pesdr_pf),
                e.suppressed
            ));
        }
        let path = a.out_dir.join("trace.csv");
        write_text(&path, &csv)?;
        outputs.push(path.display().to_string());
        EstimateSummary {
            method,
            rank: est.rank,
            defaulted: est.defaulted,
            rho: Some(a.rho),
            epsilon: Some(a.epsilon),
        }
    } else {
        let kind = match method {
            Method::Aic | Method::NdAic => CriterionKind::Aic,
            _ => CriterionKind::Mdl,
        };
        let (eigenvalues, snapshots) = if matches!(method, Method::Aic | Method::Mdl) {
            let d_star = widest_mode(t.dims());
            let sv = mode_singular_values(&t, d_star)?;
            let eigs: Vec<f64> = sv.iter().map(|s| s * s).collect();
            (eigs, t.len() / t.dims()[d_star])
        } else {
            let profile = global_eigenvalues(&t)?;
            (profile.values().to_vec(), nd_snapshot_count(t.dims()))
        };
        let inp = InformationCriterionInput::new(eigenvalues, snapshots)?;
        let curve = criterion_curve(&inp, kind);
        let mut csv = String::from("i,value\n");
        for (i, v) in curve.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i, sci(*v)));
        }
        let path = a.out_dir.join("criteria.csv");
        write_text(&path, &csv)?;
        outputs.push(path.display().to_string());
        EstimateSummary {
            method,
            rank: argmin(&curve),
            defaulted: false,
            rho: None,
            epsilon: None,
        }
    };
    let path = a.out_dir.join("estimate.json");
    write_json(&path, &summary)?;
    outputs.push(path.display().to_string());
    Ok(Completed {
        command: "estimate",
        config: json!({
            "input": a.input.display().to_string(),
            "method": method,
            "rho": a.rho,
            "epsilon": a.epsilon,
        }),
        master_seed: None,
        outputs,
        out_dir: a.out_dir,
    })
}

/// Applies MOE_THREADS over the flag and configures the global worker pool.
fn install_worker_pool(flag: usize) -> Result<usize, CliError> {
    let n = match std::env::var("MOE_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::config(format!(
                "MOE_THREADS must be a non-negative integer, got {v:?}"
            ))
        })?,
        Err(std::env::VarError::NotPresent) => flag,
        Err(e) => return Err(CliError::config(format!("MOE_THREADS: {e}"))),
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot configure {n} worker threads: {e}")))?;
    }
    Ok(n)
}

fn prepare_sim(a: &SimArgs) -> Result<(ScenarioConfig, usize), CliError> {
    prepare_out_dir(&a.out_dir)?;
    let mut cfg = load_scenario(&a.scenario)?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let threads = install_worker_pool(a.threads)?;
    Ok((cfg, threads))
}

fn write_report(
    report: &sim::MonteCarloReport,
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<String>, CliError> {
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_text(&csv_path, std::str::from_utf8(&csv).expect("ASCII report"))?;
    let json_path = out_dir.join(format!("{stem}.json"));
    write_text(&json_path, &report.to_json_string()?)?;
    Ok(vec![
        csv_path.display().to_string(),
        json_path.display().to_string(),
    ])
}

fn cmd_calibrate(a: SimArgs) -> Result<Completed, CliError> {
    let (cfg, threads) = prepare_sim(&a)?;
    let grid = cfg.rho_grid_resolved();
    let report = sim::calibrate_threshold(&cfg, &grid)?;
    let outputs = write_report(&report, &a.out_dir, "calibration")?;
    Ok(Completed {
        command: "calibrate",
        config: json!({
            "scenario_path": a.scenario.display().to_string(),
            "scenario": cfg,
            "rho_grid": grid,
            "threads": threads,
        }),
        master_seed: Some(cfg.seed),
        outputs,
        out_dir: a.out_dir,
    })
}

fn cmd_benchmark(a: SimArgs) -> Result<Completed, CliError> {
    let (cfg, threads) = prepare_sim(&a)?;
    let grid = cfg.snr_grid_resolved()?;
    let report = sim::pod_vs_snr(&cfg, &grid)?;
    let outputs = write_report(&report, &a.out_dir, "benchmark")?;
    Ok(Completed {
        command: "benchmark",
        config: json!({
            "scenario_path": a.scenario.display().to_string(),
            "scenario": cfg,
            "snr_grid": grid,
            "threads": threads,
        }),
        master_seed: Some(cfg.seed),
        outputs,
        out_dir: a.out_dir,
    })
}

#[derive(Serialize)]
struct DecomposeSummary {
    rank: usize,
    auto: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    defaulted: Option<bool>,
    relative_fit: f64,
    iterations: usize,
    converged: bool,
    regularized: bool,
    loadings: Vec<f64>,
}

fn cmd_decompose(a: DecomposeArgs) -> Result<Completed, CliError> {
    prepare_out_dir(&a.out_dir)?;
    let t = load_tensor(&a.input)?;
    let (rank, defaulted) = match (a.rank, a.auto) {
        (Some(r), false) => (r, None),
        (None, true) => {
            let lc = LargeConfig {
                rho: a.rho,
                epsilon: a.epsilon,
                use_penalty: false,
            };
            let profile = global_eigenvalues(&t)?;
            let est = large::estimate(&profile, &lc)?;
            (est.rank, Some(est.defaulted))
        }
        _ => {
            return Err(CliError::config(
                "exactly one of --rank and --auto is required",
            ));
        }
    };
    let opts = CpOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
    };
    let res = cp_als(&t, rank, &opts)?;
    let mut outputs = Vec::new();
    for (d, f) in res.factors.factors().iter().enumerate() {
        let mut csv = (1..=rank)
            .map(|r| format!("component_{r}"))
            .collect::<Vec<_>>()
            .join(",");
        csv.push('\n');
        for i in 0..f.nrows() {
            let row = (0..rank)
                .map(|r| sci(f[(i, r)]))
                .collect::<Vec<_>>()
                .join(",");
            csv.push_str(&row);
            csv.push('\n');
        }
        let path = a.out_dir.join(format!("mode_{}.csv", d + 1));
        write_text(&path, &csv)?;
        outputs.push(path.display().to_string());
    }
    let mut loadings_csv = String::from("component,loading\n");
    for (r, l) in res.loadings.iter().enumerate() {
        loadings_csv.push_str(&format!("{},{}\n", r + 1, sci(*l)));
    }
    let path = a.out_dir.join("loadings.csv");
    write_text(&path, &loadings_csv)?;
    outputs.push(path.display().to_string());
    let summary = DecomposeSummary {
        rank,
        auto: a.auto,
        defaulted,
        relative_fit: res.relative_fit,
        iterations: res.iterations,
        converged: res.converged,
        regularized: res.regularized,
        loadings: res.loadings.clone(),
    };
    let path = a.out_dir.join("decompose.json");
    write_json(&path, &summary)?;
    outputs.push(path.display().to_string());
    Ok(Completed {
        command: "decompose",
        config: json!({
            "input": a.input.display().to_string(),
            "rank": rank,
            "auto": a.auto,
            "rho": a.rho,
            "epsilon": a.epsilon,
            "max_iters": a.max_iters,
            "tol": a.tol,
            "seed": a.seed,
        }),
        master_seed: Some(a.seed),
        outputs,
        out_dir: a.out_dir,
    })
}
