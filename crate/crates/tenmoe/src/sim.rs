//! Scenario synthesis and seeded Monte-Carlo benchmarking.
//!
//! A scenario plants a known CP rank with optional factor-column correlation,
//! adds noise at a target SNR, and runs the requested estimators on shared
//! per-trial inputs. Trials derive independent RNG streams from the master
//! seed by counter, so reports are bitwise reproducible for any worker count.

use std::io::Write;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionKind, classical_from_spectra, nd_moe};
use crate::error::{Error, Result};
use crate::large::{self, DEFAULT_EPSILON, DEFAULT_RHO, LargeConfig, PesdrTrace};
use crate::spectra::{GlobalEigenvalueProfile, ModeSpectra};
use crate::tensor::{DenseTensor, FactorSet, SnrSpec, add_noise_at_snr, normalize};
use crate::{Method, RankEstimate};

/// A Monte-Carlo scenario: planted model, noise level, and estimator set.
///
/// Serializes to the scenario JSON accepted by the command-line tools. Grid
/// fields are optional; whichever of `snr_db`/`snr_grid` and `rho`/`rho_grid`
/// a run needs must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Tensor dimensions, one entry per mode.
    pub dims: Vec<usize>,
    /// Planted CP rank; must be below the smallest dimension.
    pub rank: usize,
    /// Per-mode factor-column correlation in `[0, 1)`; empty means zero.
    #[serde(default)]
    pub correlation: Vec<f64>,
    /// Fixed SNR in dB for single-level runs and threshold calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// SNR grid in dB for detection-probability curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_grid: Option<Vec<f64>>,
    /// Decision threshold for the regression estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Threshold grid for calibration sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
    /// Suppression floor for the regression estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Monte-Carlo trials per grid point.
    pub trials: usize,
    /// Master seed; trial `t` uses RNG stream `t` (offset by the grid index
    /// for SNR sweeps).
    pub seed: u64,
    /// Estimators to run; defaults to all of them.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl ScenarioConfig {
    /// Checks the invariants every estimation run needs, including that the
    /// requested estimators fit the tensor shape.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let min_dim = *self.dims.iter().min().unwrap();
        let wants_large = self.methods.iter().any(|m| m.is_large_family());
        if wants_large && min_dim < 4 {
            return Err(Error::Config(format!(
                "regression estimators need a profile of length 4 or more; \
                 smallest dimension is {min_dim}"
            )));
        }
        Ok(())
    }

    /// Checks only the synthesis-side invariants: shape, planted rank,
    /// correlations, trial count, and grid values.
    pub fn validate_structure(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 modes, got {}",
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|&m| m < 2) {
            return Err(Error::Config(format!(
                "every dimension must be at least 2, got {:?}",
                self.dims
            )));
        }
        let min_dim = *self.dims.iter().min().unwrap();
        if self.rank == 0 || self.rank >= min_dim {
            return Err(Error::Config(format!(
                "rank {} must satisfy 1 <= rank < min dims = {min_dim}",
                self.rank
            )));
        }
        if !self.correlation.is_empty() && self.correlation.len() != self.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "correlation has {} entries for {} modes",
                self.correlation.len(),
                self.dims.len()
            )));
        }
        for &r in &self.correlation {
            if !(0.0..1.0).contains(&r) || !r.is_finite() {
                return Err(Error::InvalidCorrelation(r));
            }
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        for v in self
            .snr_db
            .iter()
            .chain(self.snr_grid.iter().flatten())
        {
            if !v.is_finite() {
                return Err(Error::Config(format!("non-finite SNR value {v}")));
            }
        }
        for v in self.rho.iter().chain(self.rho_grid.iter().flatten()) {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::Config(format!(
                    "thresholds must be finite and positive, got {v}"
                )));
            }
        }
        if let Some(e) = self.epsilon
            && (!e.is_finite() || e < 0.0)
        {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {e}"
            )));
        }
        Ok(())
    }

    /// Per-mode correlations, with the empty shorthand expanded to zeros.
    pub fn correlation_resolved(&self) -> Vec<f64> {
        if self.correlation.is_empty() {
            vec![0.0; self.dims.len()]
        } else {
            self.correlation.clone()
        }
    }

    /// The decision threshold, falling back to the published default.
    pub fn rho_or_default(&self) -> f64 {
        self.rho.unwrap_or(DEFAULT_RHO)
    }

    /// The suppression floor, falling back to the library default.
    pub fn epsilon_or_default(&self) -> f64 {
        self.epsilon.unwrap_or(DEFAULT_EPSILON)
    }

    /// The fixed SNR required by single-level runs.
    pub fn snr_required(&self) -> Result<f64> {
        self.snr_db
            .ok_or_else(|| Error::Config("scenario needs an snr_db value".into()))
    }

    /// The SNR grid for detection curves, accepting a single `snr_db` as a
    /// one-point grid.
    pub fn snr_grid_resolved(&self) -> Result<Vec<f64>> {
        match (&self.snr_grid, self.snr_db) {
            (Some(g), _) if !g.is_empty() => Ok(g.clone()),
            (None, Some(s)) => Ok(vec![s]),
            _ => Err(Error::Config(
                "scenario needs snr_grid (or snr_db) for a detection curve".into(),
            )),
        }
    }

    /// The threshold grid for calibration, defaulting to 0.1..2.1.
    pub fn rho_grid_resolved(&self) -> Vec<f64> {
        match &self.rho_grid {
            Some(g) if !g.is_empty() => g.clone(),
            _ => default_rho_grid(),
        }
    }

    fn large_config(&self, use_penalty: bool) -> LargeConfig {
        LargeConfig {
            rho: self.rho_or_default(),
            epsilon: self.epsilon_or_default(),
            use_penalty,
        }
    }
}

/// The conventional calibration sweep: thresholds 0.1 to 2.1 in steps of 0.1.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=21).map(|k| k as f64 * 0.1).collect()
}

/// Lower Cholesky factor of the equicorrelation matrix
/// `C = (1 - r) I + r 1 1^T`.
fn correlation_cholesky(r: f64, rank: usize) -> Result<Mat<f64>> {
    if !(0.0..1.0).contains(&r) || !r.is_finite() {
        return Err(Error::InvalidCorrelation(r));
    }
    let mut c = Mat::<f64>::from_fn(rank, rank, |i, j| if i == j { 1.0 } else { r });
    // In-place lower Cholesky; C is positive definite for r in [0, 1).
    for j in 0..rank {
        let mut d = c[(j, j)];
        for k in 0..j {
            d -= c[(j, k)] * c[(j, k)];
        }
        debug_assert!(d > 0.0);
        let root = d.sqrt();
        c[(j, j)] = root;
        for i in j + 1..rank {
            let mut v = c[(i, j)];
            for k in 0..j {
                v -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = v / root;
        }
        for i in 0..j {
            c[(i, j)] = 0.0;
        }
    }
    Ok(c)
}

/// Draws one factor matrix per mode with equicorrelated columns: mode `d`
/// uses `F_d = G L_d^T` where `G` is i.i.d. standard normal and `L_d` is the
/// Cholesky factor of `(1 - r_d) I + r_d 1 1^T`.
pub fn gen_correlated_factors<R: RngExt + ?Sized>(
    dims: &[usize],
    rank: usize,
    correlation: &[f64],
    rng: &mut R,
) -> Result<FactorSet> {
    if correlation.len() != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation has {} entries for {} modes",
            correlation.len(),
            dims.len()
        )));
    }
    crate::init_linalg();
    let mut factors = Vec::with_capacity(dims.len());
    for (&m, &r) in dims.iter().zip(correlation) {
        let chol = correlation_cholesky(r, rank)?;
        let mut g = Mat::<f64>::zeros(m, rank);
        for i in 0..m {
            for c in 0..rank {
                g[(i, c)] = rng.sample(StandardNormal);
            }
        }
        let mut f = Mat::<f64>::zeros(m, rank);
        matmul(
            f.as_mut(),
            Accum::Replace,
            g.as_ref(),
            chol.transpose(),
            1.0,
            Par::Seq,
        );
        factors.push(f);
    }
    FactorSet::new(factors)
}

/// How an estimate relates to the planted rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Overestimation: a noise eigenvalue was taken for signal.
    FalsePositive,
    /// Underestimation, including rank-0 "no signal" calls.
    FalseNegative,
    /// Exact recovery.
    Correct,
}

/// Classifies an estimated rank against the planted one.
pub fn classify(estimated: usize, true_rank: usize) -> Outcome {
    use std::cmp::Ordering::*;
    match estimated.cmp(&true_rank) {
        Greater => Outcome::FalsePositive,
        Less => Outcome::FalseNegative,
        Equal => Outcome::Correct,
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    fp: usize,
    fn_: usize,
    correct: usize,
}

impl Counts {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::FalsePositive => self.fp += 1,
            Outcome::FalseNegative => self.fn_ += 1,
            Outcome::Correct => self.correct += 1,
        }
    }
}

/// One line of a Monte-Carlo report: counts and empirical probabilities for
/// one estimator at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub grid_value: f64,
    pub trials: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    pub n_correct: usize,
    pub p_fp: f64,
    pub p_fn: f64,
    pub pod: f64,
}

/// Which quantity the report's grid column sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    Rho,
    SnrDb,
}

/// Aggregated Monte-Carlo results with the scenario echoed for provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub scenario: ScenarioConfig,
    pub axis: GridAxis,
    pub rows: Vec<ReportRow>,
}

impl MonteCarloReport {
    /// Writes the report as CSV with a fixed header and full-precision
    /// scientific floats, so identical runs produce identical bytes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,grid_value,trials,n_fp,n_fn,n_correct,p_fp,p_fn,pod")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.16e},{},{},{},{},{:.16e},{:.16e},{:.16e}",
                r.method.name(),
                r.grid_value,
                r.trials,
                r.n_fp,
                r.n_fn,
                r.n_correct,
                r.p_fp,
                r.p_fn,
                r.pod
            )?;
        }
        Ok(())
    }

    /// The report as pretty-printed JSON, newline-terminated.
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

/// Draws the (clean, noisy, noise) triple of one trial stream.
fn draw_trial(
    cfg: &ScenarioConfig,
    snr_db: f64,
    stream: u64,
) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let correlation = cfg.correlation_resolved();
    let f = gen_correlated_factors(&cfg.dims, cfg.rank, &correlation, &mut rng)?;
    let clean = f.construct()?;
    let (noisy, noise) = add_noise_at_snr(&clean, SnrSpec::new(snr_db)?, &mut rng)?;
    Ok((clean, noisy, noise))
}

/// Everything the estimators share within one trial.
fn trial_shared(
    cfg: &ScenarioConfig,
    snr_db: f64,
    stream: u64,
) -> Result<(ModeSpectra, GlobalEigenvalueProfile)> {
    let (_, noisy, _) = draw_trial(cfg, snr_db, stream)?;
    let unit = normalize(&noisy)?;
    let spectra = ModeSpectra::compute(&unit)?;
    let profile = GlobalEigenvalueProfile::from_spectra(&spectra);
    Ok((spectra, profile))
}

/// A synthesized trial tensor together with the SNR its noise draw realized.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// The noise-corrupted low-rank tensor.
    pub tensor: DenseTensor,
    /// Signal-to-noise ratio actually achieved by the scaled noise, in dB.
    pub realized_snr_db: f64,
}

/// Materializes the noisy tensor of one trial stream, for writing to disk.
///
/// Uses the same draw as [`run_trial`], so estimating the saved tensor
/// reproduces the in-process trial exactly. Only the synthesis-side scenario
/// fields are validated; the estimator list is ignored.
pub fn synth_trial(cfg: &ScenarioConfig, trial_index: u64) -> Result<SynthOutput> {
    cfg.validate_structure()?;
    let snr = cfg.snr_required()?;
    let (clean, noisy, noise) = draw_trial(cfg, snr, trial_index)?;
    let realized_snr_db =
        20.0 * (crate::tensor::frobenius_norm(&clean) / crate::tensor::frobenius_norm(&noise)).log10();
    Ok(SynthOutput {
        tensor: noisy,
        realized_snr_db,
    })
}

/// Runs every requested estimator on the shared inputs of one trial.
fn estimates_from_shared(
    cfg: &ScenarioConfig,
    spectra: &ModeSpectra,
    profile: &GlobalEigenvalueProfile,
) -> Result<Vec<RankEstimate>> {
    let mut trace: Option<PesdrTrace> = None;
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let est = match m {
            Method::Large | Method::LargePf => {
                let lc = cfg.large_config(m == Method::LargePf);
                if trace.is_none() {
                    trace = Some(large::pesdr_trace(profile, &lc)?);
                }
                large::estimate_rank(trace.as_ref().unwrap(), &lc)
            }
            Method::Aic => classical_from_spectra(spectra, &cfg.dims, CriterionKind::Aic)?,
            Method::Mdl => classical_from_spectra(spectra, &cfg.dims, CriterionKind::Mdl)?,
            Method::NdAic => nd_moe(profile, &cfg.dims, CriterionKind::Aic)?,
            Method::NdMdl => nd_moe(profile, &cfg.dims, CriterionKind::Mdl)?,
        };
        out.push(est);
    }
    Ok(out)
}

/// One fully deterministic trial at the scenario's fixed SNR: synthesizes,
/// corrupts, and estimates with every requested method.
///
/// The result depends only on `(cfg, trial_index)`, never on thread count or
/// execution order.
pub fn run_trial(cfg: &ScenarioConfig, trial_index: u64) -> Result<Vec<RankEstimate>> {
    cfg.validate()?;
    let snr = cfg.snr_required()?;
    let (spectra, profile) = trial_shared(cfg, snr, trial_index)?;
    estimates_from_shared(cfg, &spectra, &profile)
}

fn build_report(
    cfg: &ScenarioConfig,
    axis: GridAxis,
    grid: &[f64],
    counts: &[Counts],
) -> MonteCarloReport {
    let trials = cfg.trials;
    let mut rows = Vec::with_capacity(cfg.methods.len() * grid.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        for (gi, &g) in grid.iter().enumerate() {
            let c = counts[mi * grid.len() + gi];
            debug_assert_eq!(c.fp + c.fn_ + c.correct, trials);
            rows.push(ReportRow {
                method,
                grid_value: g,
                trials,
                n_fp: c.fp,
                n_fn: c.fn_,
                n_correct: c.correct,
                p_fp: c.fp as f64 / trials as f64,
                p_fn: c.fn_ as f64 / trials as f64,
                pod: c.correct as f64 / trials as f64,
            });
        }
    }
    MonteCarloReport {
        scenario: cfg.clone(),
        axis,
        rows,
    }
}

/// Sweeps the decision threshold on a fixed-SNR scenario.
///
/// Each trial computes its regression trace once and re-applies the decision
/// rule per threshold; criterion-based estimators do not depend on the
/// threshold, so their rows repeat across the grid.
pub fn calibrate_threshold(cfg: &ScenarioConfig, rho_grid: &[f64]) -> Result<MonteCarloReport> {
    cfg.validate()?;
    if rho_grid.is_empty() {
        return Err(Error::Config("threshold grid must not be empty".into()));
    }
    for &rho in rho_grid {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::Config(format!(
                "thresholds must be finite and positive, got {rho}"
            )));
        }
    }
    let snr = cfg.snr_required()?;
    let n_g = rho_grid.len();
    let per_trial: Vec<Vec<Outcome>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<Outcome>> {
            let (spectra, profile) = trial_shared(cfg, snr, t)?;
            let mut outcomes = Vec::with_capacity(cfg.methods.len() * n_g);
            let mut trace: Option<PesdrTrace> = None;
            for &m in &cfg.methods {
                match m {
                    Method::Large | Method::LargePf => {
                        let lc = cfg.large_config(m == Method::LargePf);
                        if trace.is_none() {
                            trace = Some(large::pesdr_trace(&profile, &lc)?);
                        }
                        let tr = trace.as_ref().unwrap();
                        for &rho in rho_grid {
                            let (rank, _) = large::decide_at(tr, rho, lc.use_penalty);
                            outcomes.push(classify(rank, cfg.rank));
                        }
                    }
                    _ => {
                        let est = match m {
                            Method::Aic => {
                                classical_from_spectra(&spectra, &cfg.dims, CriterionKind::Aic)?
                            }
                            Method::Mdl => {
                                classical_from_spectra(&spectra, &cfg.dims, CriterionKind::Mdl)?
                            }
                            Method::NdAic => nd_moe(&profile, &cfg.dims, CriterionKind::Aic)?,
                            Method::NdMdl => nd_moe(&profile, &cfg.dims, CriterionKind::Mdl)?,
                            _ => unreachable!(),
                        };
                        let o = classify(est.rank, cfg.rank);
                        outcomes.extend(std::iter::repeat_n(o, n_g));
                    }
                }
            }
            Ok(outcomes)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![Counts::default(); cfg.methods.len() * n_g];
    for trial in &per_trial {
        for (c, &o) in counts.iter_mut().zip(trial) {
            c.add(o);
        }
    }
    Ok(build_report(cfg, GridAxis::Rho, rho_grid, &counts))
}

/// Sweeps the SNR at the scenario's fixed threshold, producing detection
/// curves for every requested estimator.
///
/// Grid point `i`, trial `t` uses RNG stream `i * trials + t`, so every
/// (point, trial) pair is an independent, reproducible draw.
pub fn pod_vs_snr(cfg: &ScenarioConfig, snr_grid: &[f64]) -> Result<MonteCarloReport> {
    cfg.validate()?;
    if snr_grid.is_empty() {
        return Err(Error::Config("SNR grid must not be empty".into()));
    }
    for &s in snr_grid {
        if !s.is_finite() {
            return Err(Error::Config(format!("non-finite SNR value {s}")));
        }
    }
    let n_g = snr_grid.len();
    let jobs: Vec<(usize, u64)> = (0..n_g)
        .flat_map(|gi| {
            (0..cfg.trials).map(move |t| (gi, (gi * cfg.trials + t) as u64))
        })
        .collect();
    let per_job: Vec<(usize, Vec<Outcome>)> = jobs
        .par_iter()
        .map(|&(gi, stream)| -> Result<(usize, Vec<Outcome>)> {
            let (spectra, profile) = trial_shared(cfg, snr_grid[gi], stream)?;
            let ests = estimates_from_shared(cfg, &spectra, &profile)?;
            Ok((gi, ests.iter().map(|e| classify(e.rank, cfg.rank)).collect()))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![Counts::default(); cfg.methods.len() * n_g];
    for (gi, outcomes) in &per_job {
        for (mi, &o) in outcomes.iter().enumerate() {
            counts[mi * n_g + gi].add(o);
        }
    }
    Ok(build_report(cfg, GridAxis::SnrDb, snr_grid, &counts))
}
