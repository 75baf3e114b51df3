//! Classical AIC/MDL and their global-eigenvalue extensions.
//!
//! The classical criteria run on the squared singular values of the widest
//! mode's unfolding; the multi-dimensional variants run on the global
//! eigenvalue profile. Both return the arg-min of the criterion curve, where
//! index 0 means "no signal detected".

use crate::error::{Error, Result};
use crate::spectra::{GlobalEigenvalueProfile, ModeSpectra, mode_singular_values};
use crate::tensor::DenseTensor;
use crate::{Method, RankEstimate};

/// Eigenvalues entering the criteria are clamped to this floor so log-domain
/// evaluation never sees zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-300;

/// Which of the two criteria to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    Aic,
    Mdl,
}

/// Eigenvalues plus the effective observation count they were estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationCriterionInput {
    eigenvalues: Vec<f64>,
    snapshots: usize,
}

impl InformationCriterionInput {
    /// Validates ordering, clamps the floor, and stores the snapshot count.
    pub fn new(mut eigenvalues: Vec<f64>, snapshots: usize) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("need at least one eigenvalue".into()));
        }
        if snapshots < 2 {
            return Err(Error::Config(format!(
                "snapshot count must be at least 2, got {snapshots}"
            )));
        }
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite);
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
            return Err(Error::Config(
                "eigenvalues must be sorted non-increasing".into(),
            ));
        }
        for v in &mut eigenvalues {
            *v = v.max(EIGENVALUE_FLOOR);
        }
        Ok(Self {
            eigenvalues,
            snapshots,
        })
    }

    /// The clamped, descending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The effective observation count.
    pub fn snapshots(&self) -> usize {
        self.snapshots
    }
}

/// Log-likelihood term `L(i)`: the base-10 log of the ratio of geometric to
/// arithmetic mean of the eigenvalue tail `i+1..M` (0-based: `eigs[i..]`).
///
/// Evaluated in log-domain (mean of logs minus log of mean) so long tails of
/// tiny eigenvalues cannot underflow the geometric mean.
pub fn log_likelihood(eigs: &[f64], i: usize) -> Result<f64> {
    if i >= eigs.len() {
        return Err(Error::Config(format!(
            "empty eigenvalue tail: i = {i}, M = {}",
            eigs.len()
        )));
    }
    Ok(log_likelihood_unchecked(eigs, i))
}

fn log_likelihood_unchecked(eigs: &[f64], i: usize) -> f64 {
    let tail = &eigs[i..];
    let n = tail.len() as f64;
    let mean_log: f64 = tail.iter().map(|v| v.max(EIGENVALUE_FLOOR).log10()).sum::<f64>() / n;
    let mean: f64 = tail.iter().sum::<f64>() / n;
    mean_log - mean.max(EIGENVALUE_FLOOR).log10()
}

/// The AIC curve over candidate orders `i = 0..M-1`.
pub fn aic_curve(inp: &InformationCriterionInput) -> Vec<f64> {
    let m = inp.eigenvalues.len() as f64;
    let n = inp.snapshots as f64;
    (0..inp.eigenvalues.len())
        .map(|i| {
            let l = log_likelihood_unchecked(&inp.eigenvalues, i);
            let i_f = i as f64;
            -2.0 * n * (m - i_f) * l + 2.0 * i_f * (2.0 * m - i_f)
        })
        .collect()
}

/// The MDL curve over candidate orders `i = 0..M-1`.
pub fn mdl_curve(inp: &InformationCriterionInput) -> Vec<f64> {
    let m = inp.eigenvalues.len() as f64;
    let n = inp.snapshots as f64;
    (0..inp.eigenvalues.len())
        .map(|i| {
            let l = log_likelihood_unchecked(&inp.eigenvalues, i);
            let i_f = i as f64;
            -n * (m - i_f) * l + 0.5 * i_f * (2.0 * m - i_f) * n.log10()
        })
        .collect()
}

/// The curve selected by `kind`.
pub fn criterion_curve(inp: &InformationCriterionInput, kind: CriterionKind) -> Vec<f64> {
    match kind {
        CriterionKind::Aic => aic_curve(inp),
        CriterionKind::Mdl => mdl_curve(inp),
    }
}

/// Index of the smallest value; ties resolve to the smallest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// The mode with the largest dimension; ties resolve to the smallest mode.
pub fn widest_mode(dims: &[usize]) -> usize {
    let mut best = 0;
    for (d, &m) in dims.iter().enumerate() {
        if m > dims[best] {
            best = d;
        }
    }
    best
}

/// Effective observation count for the global-eigenvalue criteria: the
/// geometric mean of the dimensions, rounded, never below 2.
///
/// Each global eigenvalue aggregates one spectral index across every mode, so
/// the natural per-index sample size is a typical mode length rather than an
/// unfolding column count. The geometric mean is mode-order invariant and
/// reduces to the common dimension for cubic tensors; larger proxies make the
/// likelihood term overwhelm the penalty and push the arg-min to the top of
/// the profile.
pub fn nd_snapshot_count(dims: &[usize]) -> usize {
    let d = dims.len() as f64;
    let mean_log: f64 = dims.iter().map(|&m| (m as f64).ln()).sum::<f64>() / d;
    (mean_log.exp().round() as usize).max(2)
}

/// Classical criterion on the widest-mode unfolding of `t`.
///
/// Uses the squared singular values of the unfolding along the mode with the
/// largest dimension and the column count of that unfolding as the snapshot
/// count.
pub fn classical_moe(t: &DenseTensor, kind: CriterionKind) -> Result<RankEstimate> {
    let d_star = widest_mode(t.dims());
    let sv = mode_singular_values(t, d_star)?;
    classical_from_singular_values(&sv, t.dims(), kind)
}

/// Classical criterion from precomputed per-mode spectra.
pub fn classical_from_spectra(
    spectra: &ModeSpectra,
    dims: &[usize],
    kind: CriterionKind,
) -> Result<RankEstimate> {
    let d_star = widest_mode(dims);
    classical_from_singular_values(spectra.mode(d_star), dims, kind)
}

fn classical_from_singular_values(
    sv: &[f64],
    dims: &[usize],
    kind: CriterionKind,
) -> Result<RankEstimate> {
    let d_star = widest_mode(dims);
    let n_snap: usize = dims.iter().product::<usize>() / dims[d_star];
    let eigs: Vec<f64> = sv.iter().map(|s| s * s).collect();
    let inp = InformationCriterionInput::new(eigs, n_snap)?;
    let rank = argmin(&criterion_curve(&inp, kind));
    Ok(RankEstimate {
        method: match kind {
            CriterionKind::Aic => Method::Aic,
            CriterionKind::Mdl => Method::Mdl,
        },
        rank,
        defaulted: false,
    })
}

/// Global-eigenvalue criterion on a profile.
pub fn nd_moe(
    profile: &GlobalEigenvalueProfile,
    dims: &[usize],
    kind: CriterionKind,
) -> Result<RankEstimate> {
    let inp = InformationCriterionInput::new(profile.values().to_vec(), nd_snapshot_count(dims))?;
    let rank = argmin(&criterion_curve(&inp, kind));
    Ok(RankEstimate {
        method: match kind {
            CriterionKind::Aic => Method::NdAic,
            CriterionKind::Mdl => Method::NdMdl,
        },
        rank,
        defaulted: false,
    })
}
