//! Dense tensors, CP synthesis, unfolding algebra, and SNR-exact noise.
//!
//! Layout contract: a `D`-way tensor stores its entries in one flat buffer
//! with the LAST index varying fastest, so element `(i_1, ..., i_D)` lives at
//! `i_1 * M_2 * ... * M_D + ... + i_{D-1} * M_D + i_D`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A dense real-valued tensor with at least two modes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor from its dimension vector and flat data.
    ///
    /// Requires `dims.len() >= 2`, every dimension `>= 1`, and
    /// `data.len() == dims.iter().product()`.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 modes, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch("zero-length mode".into()));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match dims product {n}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    /// The dimension vector `M_1..M_D`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of modes `D`.
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor has no entries (never for valid tensors).
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat data slice in last-index-fastest order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat data slice.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor, returning its flat buffer.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element access by multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    /// Element assignment by multi-index.
    pub fn set(&mut self, idx: &[usize], value: f64) {
        let f = self.flat_index(idx);
        self.data[f] = value;
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut f = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            f = f * self.dims[k] + i;
        }
        f
    }

    /// Permutes the modes: result dimension `k` is `self.dims()[perm[k]]` and
    /// `result[j] == self[i]` where `j_k = i_{perm[k]}`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Self> {
        let d = self.ndim();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::DimensionMismatch(format!(
                "{perm:?} is not a permutation of 0..{d}"
            )));
        }
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let n = self.len();
        let mut out = vec![0.0; n];
        let mut out_idx = vec![0usize; d];
        let mut src_idx = vec![0usize; d];
        for (f, slot) in out.iter_mut().enumerate() {
            decompose(f, &out_dims, &mut out_idx);
            for k in 0..d {
                src_idx[perm[k]] = out_idx[k];
            }
            *slot = self.data[self.flat_index(&src_idx)];
        }
        DenseTensor::new(out_dims, out)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Writes the multi-index of flat position `f` (last index fastest) into `idx`.
fn decompose(f: usize, dims: &[usize], idx: &mut [usize]) {
    let mut rem = f;
    for k in (0..dims.len()).rev() {
        idx[k] = rem % dims[k];
        rem /= dims[k];
    }
}

/// Modes in the cyclic column order of the `mode`-unfolding:
/// `mode+1, ..., D-1, 0, ..., mode-1`. The first listed mode varies fastest.
fn cyclic_modes(ndim: usize, mode: usize) -> Vec<usize> {
    (mode + 1..ndim).chain(0..mode).collect()
}

/// The `mode`-unfolding of `t` as an `M_d x (prod of other dims)` matrix.
///
/// Column `c` corresponds to one combination of the non-`mode` indices,
/// enumerated cyclically: modes `mode+1, ..., D-1, 0, ..., mode-1`, with the
/// first of these varying fastest. `fold` inverts this exactly.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Mat<f64>> {
    let d = t.ndim();
    if mode >= d {
        return Err(Error::ModeOutOfRange { mode, ndim: d });
    }
    let order = cyclic_modes(d, mode);
    let rows = t.dims[mode];
    let cols = t.len() / rows;
    let strides = {
        let mut s = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * t.dims[k + 1];
        }
        s
    };
    Ok(Mat::from_fn(rows, cols, |r, c| {
        let mut f = r * strides[mode];
        let mut rem = c;
        for &e in &order {
            f += (rem % t.dims[e]) * strides[e];
            rem /= t.dims[e];
        }
        t.data[f]
    }))
}

/// Inverse of [`unfold`]: reassembles a tensor of shape `dims` from its
/// `mode`-unfolding.
pub fn fold(mat: MatRef<'_, f64>, dims: &[usize], mode: usize) -> Result<DenseTensor> {
    let d = dims.len();
    if mode >= d {
        return Err(Error::ModeOutOfRange { mode, ndim: d });
    }
    let n: usize = dims.iter().product();
    let rows = dims[mode];
    let cols = n / rows;
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "unfolding shape {}x{} does not match dims {dims:?} at mode {mode}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let order = cyclic_modes(d, mode);
    let mut out = DenseTensor::zeros(dims.to_vec())?;
    let mut idx = vec![0usize; d];
    for f in 0..n {
        decompose(f, dims, &mut idx);
        let mut c = 0usize;
        // Compose the cyclic column index, slowest mode first.
        for &e in order.iter().rev() {
            c = c * dims[e] + idx[e];
        }
        out.data[f] = mat[(idx[mode], c)];
    }
    Ok(out)
}

/// Multiplies every `mode`-fiber of `t` by the matrix `u` (`J x M_d`),
/// yielding a tensor with `J` at position `mode`.
pub fn mode_product(t: &DenseTensor, u: MatRef<'_, f64>, mode: usize) -> Result<DenseTensor> {
    let d = t.ndim();
    if mode >= d {
        return Err(Error::ModeOutOfRange { mode, ndim: d });
    }
    if u.ncols() != t.dims[mode] {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns but mode {mode} has length {}",
            u.ncols(),
            t.dims[mode]
        )));
    }
    crate::init_linalg();
    let unfolded = unfold(t, mode)?;
    let mut prod = Mat::<f64>::zeros(u.nrows(), unfolded.ncols());
    matmul(
        prod.as_mut(),
        Accum::Replace,
        u,
        unfolded.as_ref(),
        1.0,
        Par::Seq,
    );
    let mut new_dims = t.dims.clone();
    new_dims[mode] = u.nrows();
    fold(prod.as_ref(), &new_dims, mode)
}

/// The factor matrices of a CP model: one `M_d x R` matrix per mode.
#[derive(Debug, Clone)]
pub struct FactorSet {
    factors: Vec<Mat<f64>>,
    rank: usize,
}

impl FactorSet {
    /// Builds a factor set, checking that all matrices share one column count.
    pub fn new(factors: Vec<Mat<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 factor matrices, got {}",
                factors.len()
            )));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::DimensionMismatch("rank must be at least 1".into()));
        }
        if factors.iter().any(|f| f.ncols() != rank) {
            return Err(Error::DimensionMismatch(
                "factor matrices disagree on the column count".into(),
            ));
        }
        if factors.iter().any(|f| f.nrows() == 0) {
            return Err(Error::DimensionMismatch("zero-length mode".into()));
        }
        Ok(Self { factors, rank })
    }

    /// Factor matrices with i.i.d. standard normal entries, drawn row by row.
    pub fn random_gaussian<R: RngExt + ?Sized>(dims: &[usize], rank: usize, rng: &mut R) -> Self {
        let factors = dims
            .iter()
            .map(|&m| {
                let mut mat = Mat::<f64>::zeros(m, rank);
                for i in 0..m {
                    for r in 0..rank {
                        mat[(i, r)] = rng.sample(StandardNormal);
                    }
                }
                mat
            })
            .collect();
        Self { factors, rank }
    }

    /// Number of components `R`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Number of modes `D`.
    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    /// Row counts of the factor matrices, i.e. the tensor shape they generate.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// All factor matrices.
    pub fn factors(&self) -> &[Mat<f64>] {
        &self.factors
    }

    /// The factor matrix of one mode.
    pub fn factor(&self, mode: usize) -> &Mat<f64> {
        &self.factors[mode]
    }

    /// Mutable access for in-place edits (column scaling and the like).
    pub fn factor_mut(&mut self, mode: usize) -> &mut Mat<f64> {
        &mut self.factors[mode]
    }

    /// Evaluates the CP model, see [`cp_construct`].
    pub fn construct(&self) -> Result<DenseTensor> {
        cp_construct(self)
    }
}

/// Khatri-Rao product of the given matrices where the FIRST matrix's row
/// index varies fastest in the output row index.
pub(crate) fn khatri_rao_fastest_first(mats: &[MatRef<'_, f64>]) -> Mat<f64> {
    let rank = mats[0].ncols();
    let total: usize = mats.iter().map(|m| m.nrows()).product();
    Mat::from_fn(total, rank, |row, col| {
        let mut rem = row;
        let mut v = 1.0;
        for m in mats {
            v *= m[(rem % m.nrows(), col)];
            rem /= m.nrows();
        }
        v
    })
}

/// Evaluates the CP model: element `(i_1..i_D)` is
/// `sum over r of prod over d of F_d[i_d, r]`.
pub fn cp_construct(f: &FactorSet) -> Result<DenseTensor> {
    crate::init_linalg();
    let dims = f.dims();
    let n: usize = dims.iter().product();
    let m1 = dims[0];
    let cols = n / m1;
    // Flat data seen column-major as (cols x M_1) equals KR * F_1^T, where the
    // KR lists F_D first so the last tensor index varies fastest.
    let others: Vec<MatRef<'_, f64>> = f.factors[1..].iter().rev().map(|m| m.as_ref()).collect();
    let kr = khatri_rao_fastest_first(&others);
    let mut data = vec![0.0; n];
    let view = MatMut::from_column_major_slice_mut(&mut data, cols, m1);
    matmul(
        view,
        Accum::Replace,
        kr.as_ref(),
        f.factors[0].transpose(),
        1.0,
        Par::Seq,
    );
    DenseTensor::new(dims, data)
}

/// Frobenius norm: the 2-norm of the flat data.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales to unit Frobenius norm. Errors on the zero tensor.
pub fn normalize(t: &DenseTensor) -> Result<DenseTensor> {
    let norm = frobenius_norm(t);
    if norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let data = t.data.iter().map(|x| x / norm).collect();
    DenseTensor::new(t.dims.clone(), data)
}

/// A requested signal-to-noise ratio in decibels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SnrSpec {
    pub snr_db: f64,
}

impl SnrSpec {
    /// Validates that the requested SNR is finite.
    pub fn new(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
        }
        Ok(Self { snr_db })
    }
}

/// Adds white Gaussian noise scaled so the REALIZED ratio of Frobenius norms
/// matches `s.snr_db` exactly, returning `(noisy, noise)`.
///
/// The raw noise draw is rescaled per realization rather than relying on its
/// expected power, which makes single trials deterministic in their SNR.
pub fn add_noise_at_snr<R: RngExt + ?Sized>(
    t0: &DenseTensor,
    s: SnrSpec,
    rng: &mut R,
) -> Result<(DenseTensor, DenseTensor)> {
    let signal_norm = frobenius_norm(t0);
    if signal_norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let raw: Vec<f64> = (0..t0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let raw_norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let alpha = signal_norm / (raw_norm * 10f64.powf(s.snr_db / 20.0));
    if !alpha.is_finite() {
        return Err(Error::NonFinite);
    }
    let noise_data: Vec<f64> = raw.iter().map(|x| x * alpha).collect();
    let noisy_data: Vec<f64> = t0
        .data
        .iter()
        .zip(&noise_data)
        .map(|(a, b)| a + b)
        .collect();
    Ok((
        DenseTensor::new(t0.dims.clone(), noisy_data)?,
        DenseTensor::new(t0.dims.clone(), noise_data)?,
    ))
}
