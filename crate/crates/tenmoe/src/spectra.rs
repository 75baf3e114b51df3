//! Per-mode singular values and the global eigenvalue profile.
//!
//! Singular values are computed through the Gram matrix of the smaller side
//! of each unfolding; unfoldings can be extremely wide, while the Gram
//! eigenproblem stays at the mode length. Because the Gram matrix sums the
//! same outer products in any column order, no unfolding copy is needed: the
//! flat buffer is consumed in place through strided views.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, frobenius_norm, normalize};

/// Singular values below this floor are clamped before entering log-domain
/// products, keeping the log profile finite for noiseless inputs.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-150;

/// The per-mode singular value vectors of a tensor.
///
/// Vector `d` holds the singular values of the `d`-mode unfolding, sorted
/// non-increasing, with length `min(M_d, prod of other dims)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectra {
    per_mode: Vec<Vec<f64>>,
}

impl ModeSpectra {
    /// Computes all per-mode spectra of `t` as given (no rescaling).
    pub fn compute(t: &DenseTensor) -> Result<Self> {
        let per_mode = (0..t.ndim())
            .map(|d| mode_singular_values(t, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_mode })
    }

    /// Singular values of one mode.
    pub fn mode(&self, d: usize) -> &[f64] {
        &self.per_mode[d]
    }

    /// All per-mode vectors.
    pub fn per_mode(&self) -> &[Vec<f64>] {
        &self.per_mode
    }

    /// Number of modes.
    pub fn ndim(&self) -> usize {
        self.per_mode.len()
    }
}

/// The `M_d x M_d` Gram matrix of the `mode`-unfolding, built from strided
/// chunks of the flat buffer without materializing the unfolding.
pub(crate) fn gram_of_unfolding(t: &DenseTensor, mode: usize) -> Mat<f64> {
    let dims = t.dims();
    let m_d = dims[mode];
    let p: usize = dims[..mode].iter().product();
    let q: usize = dims[mode + 1..].iter().product();
    let buf = t.data();
    let mut gram = Mat::<f64>::zeros(m_d, m_d);
    if q == 1 {
        // The buffer itself is the transposed unfolding: column-major (m_d, p).
        let w = MatRef::from_column_major_slice(buf, m_d, p);
        matmul(
            gram.as_mut(),
            Accum::Replace,
            w,
            w.transpose(),
            1.0,
            Par::Seq,
        );
    } else {
        // Each p-slab is a column-major (q, m_d) view of one block of fibers.
        for pi in 0..p {
            let chunk = &buf[pi * m_d * q..(pi + 1) * m_d * q];
            let v = MatRef::from_column_major_slice(chunk, q, m_d);
            matmul(
                gram.as_mut(),
                if pi == 0 { Accum::Replace } else { Accum::Add },
                v.transpose(),
                v,
                1.0,
                Par::Seq,
            );
        }
    }
    gram
}

/// Singular values of the `mode`-unfolding of `t`, sorted non-increasing.
///
/// Computed as square roots of the eigenvalues (clamped at zero) of the
/// smaller Gram matrix of the unfolding. Only `min(M_d, prod of others)`
/// values exist; the result has exactly that length.
pub fn mode_singular_values(t: &DenseTensor, mode: usize) -> Result<Vec<f64>> {
    let d = t.ndim();
    if mode >= d {
        return Err(Error::ModeOutOfRange { mode, ndim: d });
    }
    if !t.all_finite() {
        return Err(Error::NonFinite);
    }
    crate::init_linalg();
    let m_d = t.dims()[mode];
    let other: usize = t.len() / m_d;
    let count = m_d.min(other);
    let eig: Vec<f64> = if m_d <= other {
        let gram = gram_of_unfolding(t, mode);
        gram.self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("self-adjoint eigendecomposition of a finite Gram matrix")
    } else {
        // The other side is smaller; its Gram shares the nonzero spectrum.
        let unfolded = crate::tensor::unfold(t, mode)?;
        let mut gram = Mat::<f64>::zeros(other, other);
        matmul(
            gram.as_mut(),
            Accum::Replace,
            unfolded.transpose(),
            unfolded.as_ref(),
            1.0,
            Par::Seq,
        );
        gram.self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("self-adjoint eigendecomposition of a finite Gram matrix")
    };
    // Eigenvalues arrive ascending; emit descending square roots.
    let mut sv: Vec<f64> = eig
        .iter()
        .rev()
        .take(count)
        .map(|&e| e.max(0.0).sqrt())
        .collect();
    // Guard against tiny negative rounding already clamped; enforce ordering.
    for i in 1..sv.len() {
        if sv[i] > sv[i - 1] {
            sv[i] = sv[i - 1];
        }
    }
    Ok(sv)
}

/// The global eigenvalues of a tensor and their natural logarithms.
///
/// Entry `i` (0-based) is the product over modes of the squared `i`-th
/// per-mode singular value; there are `min over d of M_d` of them, always
/// computed from the unit-norm rescaling of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEigenvalueProfile {
    values: Vec<f64>,
    logs: Vec<f64>,
}

impl GlobalEigenvalueProfile {
    /// Builds the profile from precomputed spectra.
    ///
    /// The spectra must come from a unit-norm tensor for thresholds to be
    /// transferable; [`global_eigenvalues`] takes care of that.
    pub fn from_spectra(spectra: &ModeSpectra) -> Self {
        let m_g = spectra
            .per_mode()
            .iter()
            .map(|v| v.len())
            .min()
            .unwrap_or(0);
        let mut values = vec![1.0; m_g];
        let mut logs = vec![0.0; m_g];
        for sv in spectra.per_mode() {
            for i in 0..m_g {
                let s = sv[i].max(SINGULAR_VALUE_FLOOR);
                values[i] *= s * s;
                logs[i] += 2.0 * s.ln();
            }
        }
        Self { values, logs }
    }

    /// Builds a profile directly from log eigenvalues.
    ///
    /// Useful for hand-built profiles in tests and for replaying dumped
    /// spectra. The logs must be finite and non-increasing.
    pub fn from_logs(logs: Vec<f64>) -> Result<Self> {
        if logs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if logs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::DegenerateProfile(
                "log eigenvalues must be non-increasing".into(),
            ));
        }
        let values = logs.iter().map(|&v| v.exp()).collect();
        Ok(Self { values, logs })
    }

    /// The global eigenvalues, non-increasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Natural logs of the global eigenvalues, computed in log-domain so they
    /// stay finite even when the values underflow.
    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    /// Number of global eigenvalues, the smallest tensor dimension.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the profile is empty (never for valid tensors).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Computes the global eigenvalue profile of `t`.
///
/// The input is first rescaled to unit Frobenius norm; the profile of the
/// rescaled tensor is what published detection thresholds refer to. Errors on
/// the zero tensor and on non-finite input.
pub fn global_eigenvalues(t: &DenseTensor) -> Result<GlobalEigenvalueProfile> {
    if frobenius_norm(t) == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let unit = normalize(t)?;
    let spectra = ModeSpectra::compute(&unit)?;
    Ok(GlobalEigenvalueProfile::from_spectra(&spectra))
}
