//! Rank-constrained CP decomposition via alternating least squares.
//!
//! Each sweep solves the linear least-squares problem for one factor matrix
//! while holding the others fixed, using the matricized-tensor-times-
//! Khatri-Rao product computed directly from the flat buffer. Components are
//! reported unit-normalized per mode with absorbed magnitudes collected into
//! loading factors, sign-fixed and sorted by loading.

use faer::linalg::matmul::matmul;
use faer::prelude::*;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectra::gram_of_unfolding;
use crate::tensor::{DenseTensor, FactorSet, frobenius_norm, khatri_rao_fastest_first};

/// Stopping controls and the seed for the random-init fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpOptions {
    /// Hard cap on alternating sweeps.
    pub max_iters: usize,
    /// Stop once the relative-fit improvement of a sweep falls below this.
    pub tol: f64,
    /// Seed for Gaussian initialization of modes where the rank exceeds the
    /// available singular vectors.
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl CpOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(Error::Config(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Outcome of a CP decomposition.
#[derive(Debug, Clone)]
pub struct CpResult {
    /// Factor matrices with unit-norm columns, components sorted by loading.
    pub factors: FactorSet,
    /// Per-component magnitudes absorbed during normalization, non-increasing.
    pub loadings: Vec<f64>,
    /// Final `|X - Xhat|_F / |X|_F`.
    pub relative_fit: f64,
    /// Completed alternating sweeps.
    pub iterations: usize,
    /// True when the tolerance stopped the loop before `max_iters`.
    pub converged: bool,
    /// True when a singular normal-equation system needed ridge damping.
    pub regularized: bool,
    /// Relative fit after each sweep; non-increasing up to roundoff.
    pub fit_history: Vec<f64>,
}

/// Loading factor of each component: the product over modes of the column
/// 2-norms.
pub fn loading_factors(f: &FactorSet) -> Vec<f64> {
    (0..f.rank())
        .map(|r| {
            f.factors()
                .iter()
                .map(|m| {
                    let mut s = 0.0;
                    for i in 0..m.nrows() {
                        s += m[(i, r)] * m[(i, r)];
                    }
                    s.sqrt()
                })
                .product()
        })
        .collect()
}

/// The matricized-tensor-times-Khatri-Rao product for `mode`, computed from
/// strided views of the flat buffer without materializing the unfolding.
///
/// Returns the `M_d x R` matrix whose column `r` contracts the tensor with
/// the `r`-th column of every other factor.
fn mttkrp(t: &DenseTensor, factors: &[Mat<f64>], mode: usize) -> Mat<f64> {
    let dims = t.dims();
    let d = dims.len();
    let m_d = dims[mode];
    let r = factors[0].ncols();
    let p: usize = dims[..mode].iter().product();
    let q: usize = dims[mode + 1..].iter().product();
    let data = t.data();
    let mut out = Mat::<f64>::zeros(m_d, r);
    if q == 1 {
        // Last mode: the buffer is the transposed unfolding, column-major
        // (m_d, p), and the natural column order is the fastest-first
        // Khatri-Rao of the remaining factors in reverse mode order.
        let slow: Vec<MatRef<'_, f64>> = (0..mode).rev().map(|k| factors[k].as_ref()).collect();
        let kr = khatri_rao_fastest_first(&slow);
        let w = MatRef::from_column_major_slice(data, m_d, p);
        matmul(out.as_mut(), Accum::Replace, w, kr.as_ref(), 1.0, Par::Seq);
        return out;
    }
    let fast: Vec<MatRef<'_, f64>> = (mode + 1..d).rev().map(|k| factors[k].as_ref()).collect();
    let kr_fast = khatri_rao_fastest_first(&fast);
    if p == 1 {
        let v = MatRef::from_column_major_slice(data, q, m_d);
        matmul(
            out.as_mut(),
            Accum::Replace,
            v.transpose(),
            kr_fast.as_ref(),
            1.0,
            Par::Seq,
        );
        return out;
    }
    let slow: Vec<MatRef<'_, f64>> = (0..mode).rev().map(|k| factors[k].as_ref()).collect();
    let kr_slow = khatri_rao_fastest_first(&slow);
    let slab = m_d * q;
    let mut tmp = Mat::<f64>::zeros(m_d, r);
    for a in 0..p {
        let v = MatRef::from_column_major_slice(&data[a * slab..(a + 1) * slab], q, m_d);
        matmul(
            tmp.as_mut(),
            Accum::Replace,
            v.transpose(),
            kr_fast.as_ref(),
            1.0,
            Par::Seq,
        );
        for rr in 0..r {
            let s = kr_slow[(a, rr)];
            for i in 0..m_d {
                out[(i, rr)] += s * tmp[(i, rr)];
            }
        }
    }
    out
}

/// `F^T F` of one factor matrix.
fn factor_gram(f: &Mat<f64>) -> Mat<f64> {
    let r = f.ncols();
    let mut g = Mat::<f64>::zeros(r, r);
    matmul(
        g.as_mut(),
        Accum::Replace,
        f.transpose(),
        f.as_ref(),
        1.0,
        Par::Seq,
    );
    g
}

/// Hadamard product of the Grams, skipping `skip` when given.
fn hadamard_grams(grams: &[Mat<f64>], skip: Option<usize>) -> Mat<f64> {
    let r = grams[0].nrows();
    let mut h = Mat::<f64>::from_fn(r, r, |_, _| 1.0);
    for (k, g) in grams.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        for j in 0..r {
            for i in 0..r {
                h[(i, j)] *= g[(i, j)];
            }
        }
    }
    h
}

/// Solves `F H = M` for `F` given symmetric positive semi-definite `H`,
/// escalating a ridge term when the Cholesky factorization fails. Returns
/// the solution and whether damping was needed.
fn solve_against_gram(h: &Mat<f64>, m: &Mat<f64>) -> (Mat<f64>, bool) {
    let rhs = m.transpose().to_owned();
    if let Ok(f) = h.llt(Side::Lower) {
        return (f.solve(rhs.as_ref()).transpose().to_owned(), false);
    }
    let r = h.nrows();
    let mut damped = h.clone();
    let mut eps = 1e-12;
    loop {
        for i in 0..r {
            damped[(i, i)] += eps;
        }
        if let Ok(f) = damped.llt(Side::Lower) {
            return (f.solve(rhs.as_ref()).transpose().to_owned(), true);
        }
        eps *= 1e3;
        assert!(
            eps < 1e6,
            "ridge-damped Gram system failed to factorize at eps {eps}"
        );
    }
}

/// Leading left singular vectors of each unfolding, falling back to a seeded
/// Gaussian draw for modes shorter than the rank.
fn hosvd_init(t: &DenseTensor, rank: usize, seed: u64) -> Vec<Mat<f64>> {
    use rand::RngExt;
    use rand_distr::StandardNormal;
    let mut rng: Option<ChaCha8Rng> = None;
    t.dims()
        .iter()
        .enumerate()
        .map(|(d, &m_d)| {
            if rank <= m_d {
                let gram = gram_of_unfolding(t, d);
                let eig = gram
                    .self_adjoint_eigen(Side::Lower)
                    .expect("self-adjoint eigendecomposition of a finite Gram matrix");
                let u = eig.U();
                // Eigenpairs arrive ascending; take the top `rank` columns.
                let mut f = Mat::<f64>::zeros(m_d, rank);
                for r in 0..rank {
                    let src = m_d - 1 - r;
                    for i in 0..m_d {
                        f[(i, r)] = u[(i, src)];
                    }
                }
                f
            } else {
                let rng = rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(seed));
                let mut f = Mat::<f64>::zeros(m_d, rank);
                for i in 0..m_d {
                    for r in 0..rank {
                        f[(i, r)] = rng.sample(StandardNormal);
                    }
                }
                f
            }
        })
        .collect()
}

/// Rank-`rank` CP decomposition of `t` by alternating least squares.
///
/// Feasibility requires `1 <= rank <= min over d of (len / M_d)`. Starts
/// from truncated per-mode singular vectors, sweeps until the relative-fit
/// improvement drops below `opts.tol` or `opts.max_iters` is reached, then
/// normalizes, sign-fixes, and sorts the components by loading.
pub fn cp_als(t: &DenseTensor, rank: usize, opts: &CpOptions) -> Result<CpResult> {
    crate::init_linalg();
    opts.validate()?;
    let dims = t.dims().to_vec();
    let d = dims.len();
    if rank == 0 {
        return Err(Error::InfeasibleRank {
            rank,
            reason: "rank must be at least 1".into(),
        });
    }
    let max_rank = dims.iter().map(|&m| t.len() / m).min().unwrap();
    if rank > max_rank {
        return Err(Error::InfeasibleRank {
            rank,
            reason: format!(
                "rank exceeds the least-squares bound {max_rank} for dims {dims:?}"
            ),
        });
    }
    if !t.all_finite() {
        return Err(Error::NonFinite);
    }
    let norm_x = frobenius_norm(t);
    if norm_x == 0.0 {
        return Err(Error::ZeroTensor);
    }

    let mut factors = hosvd_init(t, rank, opts.seed);
    let mut grams: Vec<Mat<f64>> = factors.iter().map(factor_gram).collect();
    let mut lambda = vec![1.0f64; rank];
    let mut fit_history = Vec::new();
    let mut converged = false;
    let mut regularized = false;
    let norm_x_sq = norm_x * norm_x;

    for _ in 0..opts.max_iters {
        let mut inner = 0.0;
        for mode in 0..d {
            let m = mttkrp(t, &factors, mode);
            let h = hadamard_grams(&grams, Some(mode));
            let (raw, damped) = solve_against_gram(&h, &m);
            regularized |= damped;
            let mut f = raw;
            for r in 0..rank {
                let mut s = 0.0;
                for i in 0..f.nrows() {
                    s += f[(i, r)] * f[(i, r)];
                }
                let nrm = s.sqrt();
                lambda[r] = nrm;
                if nrm > 0.0 {
                    for i in 0..f.nrows() {
                        f[(i, r)] /= nrm;
                    }
                }
            }
            if mode == d - 1 {
                // <X, Xhat> with the sweep's final factors: lambda came from
                // this solve, the other modes are already unit-norm.
                for r in 0..rank {
                    let mut dot = 0.0;
                    for i in 0..f.nrows() {
                        dot += f[(i, r)] * m[(i, r)];
                    }
                    inner += lambda[r] * dot;
                }
            }
            grams[mode] = factor_gram(&f);
            factors[mode] = f;
        }
        let h_all = hadamard_grams(&grams, None);
        let mut model_sq = 0.0;
        for s in 0..rank {
            for r in 0..rank {
                model_sq += lambda[r] * lambda[s] * h_all[(r, s)];
            }
        }
        let resid_sq = (norm_x_sq - 2.0 * inner + model_sq).max(0.0);
        let fit = resid_sq.sqrt() / norm_x;
        let prev = fit_history.last().copied();
        fit_history.push(fit);
        if let Some(p) = prev
            && p - fit < opts.tol
        {
            converged = true;
            break;
        }
    }

    // Sign convention: the largest-magnitude entry of each first-mode column
    // is made positive, compensated in the second mode.
    for r in 0..rank {
        let f0 = &factors[0];
        let mut best = 0;
        for i in 1..f0.nrows() {
            if f0[(i, r)].abs() > f0[(best, r)].abs() {
                best = i;
            }
        }
        if f0[(best, r)] < 0.0 {
            for i in 0..factors[0].nrows() {
                factors[0][(i, r)] = -factors[0][(i, r)];
            }
            for i in 0..factors[1].nrows() {
                factors[1][(i, r)] = -factors[1][(i, r)];
            }
        }
    }

    // Order components by loading, largest first, ties keeping sweep order.
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| {
        lambda[b]
            .partial_cmp(&lambda[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let loadings: Vec<f64> = order.iter().map(|&r| lambda[r]).collect();
    let sorted: Vec<Mat<f64>> = factors
        .iter()
        .map(|f| Mat::from_fn(f.nrows(), rank, |i, k| f[(i, order[k])]))
        .collect();

    let relative_fit = *fit_history.last().unwrap();
    Ok(CpResult {
        factors: FactorSet::new(sorted)?,
        loadings,
        relative_fit,
        iterations: fit_history.len(),
        converged,
        regularized,
        fit_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{SnrSpec, add_noise_at_snr, unfold};
    use approx::assert_relative_eq;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn random_factors(dims: &[usize], rank: usize, seed: u64) -> FactorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FactorSet::random_gaussian(dims, rank, &mut rng)
    }

    /// Product over modes of normalized column dot products, the standard
    /// congruence score between two components.
    fn congruence(a: &FactorSet, ra: usize, b: &FactorSet, rb: usize) -> f64 {
        a.factors()
            .iter()
            .zip(b.factors())
            .map(|(fa, fb)| {
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for i in 0..fa.nrows() {
                    dot += fa[(i, ra)] * fb[(i, rb)];
                    na += fa[(i, ra)] * fa[(i, ra)];
                    nb += fb[(i, rb)] * fb[(i, rb)];
                }
                dot.abs() / (na.sqrt() * nb.sqrt())
            })
            .product()
    }

    /// Greedy matching of recovered components to planted ones; returns the
    /// smallest matched congruence.
    fn matched_congruence(planted: &FactorSet, recovered: &FactorSet) -> f64 {
        let rank = planted.rank();
        let mut taken = vec![false; rank];
        let mut worst = f64::INFINITY;
        for rb in 0..rank {
            let mut best = (0, -1.0);
            for (ra, used) in taken.iter().enumerate() {
                if *used {
                    continue;
                }
                let c = congruence(planted, ra, recovered, rb);
                if c > best.1 {
                    best = (ra, c);
                }
            }
            taken[best.0] = true;
            worst = worst.min(best.1);
        }
        worst
    }

    #[test]
    fn mttkrp_matches_unfolding_oracle() {
        // Dual route: explicit cyclic unfolding times the matching
        // Khatri-Rao ordering must agree with the strided computation.
        for (dims, rank) in [
            (vec![3usize, 4, 5], 2usize),
            (vec![4, 6], 3),
            (vec![2, 3, 2, 4], 2),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let f = FactorSet::random_gaussian(&dims, rank, &mut rng);
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = DenseTensor::new(dims.clone(), data).unwrap();
            let mats: Vec<Mat<f64>> = f.factors().to_vec();
            for mode in 0..dims.len() {
                let got = mttkrp(&t, &mats, mode);
                let unf = unfold(&t, mode).unwrap();
                let cyclic: Vec<MatRef<'_, f64>> = (mode + 1..dims.len())
                    .chain(0..mode)
                    .map(|k| mats[k].as_ref())
                    .collect();
                let kr = khatri_rao_fastest_first(&cyclic);
                let mut want = Mat::<f64>::zeros(dims[mode], rank);
                matmul(
                    want.as_mut(),
                    Accum::Replace,
                    unf.as_ref(),
                    kr.as_ref(),
                    1.0,
                    Par::Seq,
                );
                for i in 0..dims[mode] {
                    for r in 0..rank {
                        assert_relative_eq!(
                            got[(i, r)],
                            want[(i, r)],
                            max_relative = 1e-10,
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn loading_factors_match_norm_products() {
        let f = random_factors(&[5, 6, 7], 3, 9);
        let loads = loading_factors(&f);
        for r in 0..3 {
            let want: f64 = f
                .factors()
                .iter()
                .map(|m| {
                    (0..m.nrows())
                        .map(|i| m[(i, r)] * m[(i, r)])
                        .sum::<f64>()
                        .sqrt()
                })
                .product();
            assert_relative_eq!(loads[r], want, max_relative = 1e-12);
        }
    }

    #[test]
    fn loading_factors_simple_cases() {
        // Unit-norm columns multiply to 1; scaled columns to their norms.
        let mut cols = vec![
            Mat::<f64>::zeros(4, 2),
            Mat::<f64>::zeros(3, 2),
            Mat::<f64>::zeros(2, 2),
        ];
        for f in &mut cols {
            for r in 0..2 {
                f[(0, r)] = 1.0;
            }
        }
        let f = FactorSet::new(cols.clone()).unwrap();
        for l in loading_factors(&f) {
            assert_relative_eq!(l, 1.0, epsilon = 1e-15);
        }
        // Column norms (2, 3, 0.5) for component 0.
        cols[0][(0, 0)] = 2.0;
        cols[1][(0, 0)] = 3.0;
        cols[2][(0, 0)] = 0.5;
        let f = FactorSet::new(cols).unwrap();
        assert_relative_eq!(loading_factors(&f)[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn scaling_ambiguity_leaves_loadings_and_directions_unchanged() {
        let base = random_factors(&[4, 5, 6], 2, 11);
        let mut scaled_mats = base.factors().to_vec();
        let c = 7.5;
        for i in 0..scaled_mats[0].nrows() {
            scaled_mats[0][(i, 0)] *= c;
        }
        for i in 0..scaled_mats[1].nrows() {
            scaled_mats[1][(i, 0)] /= c;
        }
        let scaled = FactorSet::new(scaled_mats).unwrap();
        let l0 = loading_factors(&base);
        let l1 = loading_factors(&scaled);
        for (a, b) in l0.iter().zip(&l1) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert!(congruence(&base, 0, &scaled, 0) > 1.0 - 1e-12);
        let t0 = base.construct().unwrap();
        let t1 = scaled.construct().unwrap();
        for (a, b) in t0.data().iter().zip(t1.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one_noiseless_is_exact() {
        let f = random_factors(&[2, 3, 4], 1, 21);
        let t = f.construct().unwrap();
        let res = cp_als(&t, 1, &CpOptions::default()).unwrap();
        assert!(res.relative_fit <= 1e-8, "fit {}", res.relative_fit);
        assert!(res.converged);
        assert!(!res.regularized);
    }

    #[test]
    fn rank_three_noiseless_recovers_planted_factors() {
        let f = random_factors(&[10, 10, 10], 3, 33);
        let t = f.construct().unwrap();
        let res = cp_als(&t, 3, &CpOptions::default()).unwrap();
        assert!(res.relative_fit <= 1e-6, "fit {}", res.relative_fit);
        let worst = matched_congruence(&f, &res.factors);
        assert!(worst >= 0.999, "congruence {worst}");
        for w in res.loadings.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // Unit columns in every mode.
        for m in res.factors.factors() {
            for r in 0..res.factors.rank() {
                let s: f64 = (0..m.nrows()).map(|i| m[(i, r)] * m[(i, r)]).sum();
                assert_relative_eq!(s.sqrt(), 1.0, epsilon = 1e-10);
            }
        }
        // Loadings reproduce the planted magnitudes.
        let mut planted = loading_factors(&f);
        planted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in res.loadings.iter().zip(&planted) {
            assert_relative_eq!(got, want, max_relative = 1e-4);
        }
    }

    #[test]
    fn fit_history_is_monotone_under_noise() {
        let f = random_factors(&[12, 13, 14], 3, 44);
        let clean = f.construct().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let (noisy, _) = add_noise_at_snr(&clean, SnrSpec::new(10.0).unwrap(), &mut rng).unwrap();
        let res = cp_als(&noisy, 3, &CpOptions::default()).unwrap();
        assert_eq!(res.iterations, res.fit_history.len());
        for w in res.fit_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "fit increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn higher_rank_fits_no_worse_on_noisy_data() {
        let f = random_factors(&[15, 20, 10], 5, 55);
        let clean = f.construct().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (noisy, _) = add_noise_at_snr(&clean, SnrSpec::new(-3.0).unwrap(), &mut rng).unwrap();
        let r4 = cp_als(&noisy, 4, &CpOptions::default()).unwrap();
        let r5 = cp_als(&noisy, 5, &CpOptions::default()).unwrap();
        assert!(
            r5.relative_fit < r4.relative_fit,
            "rank-5 fit {} should beat rank-4 fit {}",
            r5.relative_fit,
            r4.relative_fit
        );
    }

    #[test]
    fn infeasible_ranks_are_rejected() {
        let f = random_factors(&[2, 3, 4], 1, 66);
        let t = f.construct().unwrap();
        // Least-squares bound for (2,3,4) is min(12, 8, 6) = 6.
        assert!(matches!(
            cp_als(&t, 7, &CpOptions::default()),
            Err(Error::InfeasibleRank { rank: 7, .. })
        ));
        assert!(matches!(
            cp_als(&t, 0, &CpOptions::default()),
            Err(Error::InfeasibleRank { rank: 0, .. })
        ));
        let zero = DenseTensor::zeros(vec![2, 3, 4]).unwrap();
        assert!(matches!(
            cp_als(&zero, 1, &CpOptions::default()),
            Err(Error::ZeroTensor)
        ));
    }

    #[test]
    fn ridge_damping_recovers_from_singular_grams() {
        // Exactly singular Hadamard Gram: duplicate components.
        let mut h = Mat::<f64>::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                h[(i, j)] = 1.0;
            }
        }
        let mut m = Mat::<f64>::zeros(3, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        let (sol, damped) = solve_against_gram(&h, &m);
        assert!(damped);
        assert!(sol.nrows() == 3 && sol.ncols() == 2);
        for i in 0..3 {
            for j in 0..2 {
                assert!(sol[(i, j)].is_finite());
            }
        }
    }

    #[test]
    fn sign_convention_pins_first_mode_columns() {
        let f = random_factors(&[8, 9, 10], 2, 88);
        let t = f.construct().unwrap();
        let res = cp_als(&t, 2, &CpOptions::default()).unwrap();
        for r in 0..2 {
            let f0 = &res.factors.factors()[0];
            let mut best = 0;
            for i in 1..f0.nrows() {
                if f0[(i, r)].abs() > f0[(best, r)].abs() {
                    best = i;
                }
            }
            assert!(f0[(best, r)] > 0.0);
        }
    }

    #[test]
    fn options_are_validated() {
        let f = random_factors(&[3, 3, 3], 1, 99);
        let t = f.construct().unwrap();
        let bad_iters = CpOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(cp_als(&t, 1, &bad_iters).is_err());
        let bad_tol = CpOptions {
            tol: f64::NAN,
            ..Default::default()
        };
        assert!(cp_als(&t, 1, &bad_tol).is_err());
    }
}
