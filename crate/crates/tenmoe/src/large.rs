//! Rank estimation by linear regression of the log global eigenvalue profile.
//!
//! Working from the smallest eigenvalue upward, each step fits a line to the
//! log profile below a candidate index, predicts the candidate's value, and
//! compares the relative prediction error against the scatter of the fit. A
//! candidate whose eigenvalue escapes the noise line upward by enough
//! standard deviations marks the model order.

use crate::error::{Error, Result};
use crate::spectra::GlobalEigenvalueProfile;
use crate::{Method, RankEstimate};

/// Default detection threshold on the error-to-deviation ratio.
pub const DEFAULT_RHO: f64 = 0.57;

/// Default floor on the residual standard deviation; fits tighter than this
/// carry no scatter information and are never allowed to fire.
pub const DEFAULT_EPSILON: f64 = 1.2e-3;

/// Configuration of the regression estimator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LargeConfig {
    /// Detection threshold, must be positive.
    pub rho: f64,
    /// Residual-deviation floor, must be positive.
    pub epsilon: f64,
    /// Divide each ratio by the index-dependent penalty factor.
    pub use_penalty: bool,
}

impl Default for LargeConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            use_penalty: false,
        }
    }
}

impl LargeConfig {
    /// Checks positivity of both parameters.
    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 || !self.rho.is_finite() {
            return Err(Error::Config(format!(
                "threshold must be positive and finite, got {}",
                self.rho
            )));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "deviation floor must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Same configuration with the penalty toggled.
    pub fn with_penalty(mut self, use_penalty: bool) -> Self {
        self.use_penalty = use_penalty;
        self
    }

    /// The method tag this configuration selects.
    pub fn method(&self) -> Method {
        if self.use_penalty {
            Method::LargePf
        } else {
            Method::Large
        }
    }
}

/// One candidate row of the diagnostic trace.
///
/// `index` is the 1-based candidate position `i` in the profile. The line
/// `a1 * j + a2` was fitted over `j = i+1 ..= m`; `sigma` is the
/// Bessel-corrected standard deviation of that fit's in-sample residuals.
/// When `sigma` falls below the configured floor the row is `suppressed` and
/// the stored ratios are not meaningful (they may be infinite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PesdrEntry {
    pub index: usize,
    pub a1: f64,
    pub a2: f64,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub delta: f64,
    pub delta_rel: f64,
    pub sigma: f64,
    pub residual_mean: f64,
    pub pesdr: f64,
    pub pesdr_pf: f64,
    pub suppressed: bool,
}

/// The full per-candidate trace, ordered from `i = m - 2` down to `i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PesdrTrace {
    entries: Vec<PesdrEntry>,
}

impl PesdrTrace {
    /// Wraps externally built entries; intended for tests and diagnostics.
    pub fn from_entries(entries: Vec<PesdrEntry>) -> Self {
        Self { entries }
    }

    /// Candidate rows, largest index first.
    pub fn entries(&self) -> &[PesdrEntry] {
        &self.entries
    }

    /// Length `m` of the profile the trace was computed from.
    pub fn profile_len(&self) -> usize {
        self.entries.len() + 2
    }
}

/// Least-squares line fit `value = a1 * index + a2` over the given points.
///
/// Uses the closed-form normal equations around the index mean, which keeps
/// the system well conditioned for consecutive integer indices.
pub fn ols_line_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Config(
            "line fit needs at least two points".into(),
        ));
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(Error::Config(
            "line fit needs at least two distinct indices".into(),
        ));
    }
    let a1 = sxy / sxx;
    let a2 = y_mean - a1 * x_mean;
    Ok((a1, a2))
}

/// The penalty factor: `log10(i - 1)` for `i >= 3`, clamped to 1 below,
/// where the logarithm is non-positive or undefined.
pub fn penalty_factor(index: usize) -> f64 {
    if index <= 2 {
        1.0
    } else {
        ((index - 1) as f64).log10()
    }
}

/// Computes the full diagnostic trace for a profile.
///
/// Requires at least 4 global eigenvalues (one two-point fit, one prediction
/// point, one further scan step) and a profile that is not exactly flat.
pub fn pesdr_trace(profile: &GlobalEigenvalueProfile, cfg: &LargeConfig) -> Result<PesdrTrace> {
    cfg.validate()?;
    let logs = profile.logs();
    let m = logs.len();
    if m < 4 {
        return Err(Error::DegenerateProfile(format!(
            "need at least 4 global eigenvalues, got {m}"
        )));
    }
    let (min, max) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Err(Error::DegenerateProfile(
            "all log eigenvalues are equal".into(),
        ));
    }

    let mut entries = Vec::with_capacity(m - 2);
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(m - 1);
    for i in (1..=m - 2).rev() {
        // Fit over the 1-based indices j = i+1 ..= m.
        points.clear();
        for j in i + 1..=m {
            points.push((j as f64, logs[j - 1]));
        }
        let (a1, a2) = ols_line_fit(&points)?;
        let lambda = logs[i - 1];
        let lambda_hat = a1 * i as f64 + a2;
        let delta = lambda - lambda_hat;
        let delta_rel = delta / lambda_hat.abs();
        let n = points.len() as f64;
        let residual_mean = points
            .iter()
            .map(|&(x, y)| y - (a1 * x + a2))
            .sum::<f64>()
            / n;
        let var = points
            .iter()
            .map(|&(x, y)| {
                let r = y - (a1 * x + a2) - residual_mean;
                r * r
            })
            .sum::<f64>()
            / (n - 1.0);
        let sigma = var.max(0.0).sqrt();
        let suppressed = sigma < cfg.epsilon;
        let pesdr = delta_rel / sigma;
        let pesdr_pf = pesdr / penalty_factor(i);
        entries.push(PesdrEntry {
            index: i,
            a1,
            a2,
            lambda,
            lambda_hat,
            delta,
            delta_rel,
            sigma,
            residual_mean,
            pesdr,
            pesdr_pf,
            suppressed,
        });
    }
    Ok(PesdrTrace { entries })
}

/// Applies the rank rule to a stored trace at an arbitrary threshold.
///
/// Scans candidates from the bottom of the profile upward (stored order,
/// largest index first); the first non-suppressed index whose statistic
/// reaches `rho` is the rank. Returns `(1, true)` when nothing fires.
pub fn decide_at(trace: &PesdrTrace, rho: f64, use_penalty: bool) -> (usize, bool) {
    for e in &trace.entries {
        if e.suppressed {
            continue;
        }
        let stat = if use_penalty { e.pesdr_pf } else { e.pesdr };
        if stat >= rho {
            return (e.index, false);
        }
    }
    (1, true)
}

/// The rank rule at the configured threshold.
pub fn estimate_rank(trace: &PesdrTrace, cfg: &LargeConfig) -> RankEstimate {
    let (rank, defaulted) = decide_at(trace, cfg.rho, cfg.use_penalty);
    RankEstimate {
        method: cfg.method(),
        rank,
        defaulted,
    }
}

/// Convenience: trace computation plus rank rule in one call.
pub fn estimate(profile: &GlobalEigenvalueProfile, cfg: &LargeConfig) -> Result<RankEstimate> {
    let trace = pesdr_trace(profile, cfg)?;
    Ok(estimate_rank(&trace, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn profile_from_logs(logs: &[f64]) -> GlobalEigenvalueProfile {
        GlobalEigenvalueProfile::from_logs(logs.to_vec()).unwrap()
    }

    #[test]
    fn ols_fits_exact_line_and_zero_data() {
        let (a1, a2) = ols_line_fit(&[(1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert_relative_eq!(a1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(a2, 0.0, epsilon = 1e-14);

        let (a1, a2) = ols_line_fit(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).unwrap();
        assert_eq!((a1, a2), (0.0, 0.0));

        assert!(ols_line_fit(&[(1.0, 1.0)]).is_err());
        assert!(ols_line_fit(&[(2.0, 1.0), (2.0, 5.0)]).is_err());
    }

    #[test]
    fn ols_matches_svd_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let points: Vec<(f64, f64)> = (1..=10)
            .map(|i| (i as f64, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let (a1, a2) = ols_line_fit(&points).unwrap();

        // Independent route: solve the overdetermined system with an SVD.
        let a = nalgebra::DMatrix::from_fn(10, 2, |r, c| {
            if c == 0 { points[r].0 } else { 1.0 }
        });
        let b = nalgebra::DVector::from_fn(10, |r, _| points[r].1);
        let svd = a.svd(true, true);
        let sol = svd.solve(&b, 1e-14).unwrap();
        assert_relative_eq!(a1, sol[0], epsilon = 1e-10);
        assert_relative_eq!(a2, sol[1], epsilon = 1e-10);
    }

    #[test]
    fn perfectly_linear_profile_defaults_to_rank_one() {
        let logs: Vec<f64> = (1..=8).map(|i| -0.3 * i as f64 - 1.0).collect();
        let trace = pesdr_trace(&profile_from_logs(&logs), &LargeConfig::default()).unwrap();
        assert_eq!(trace.entries().len(), 6);
        assert!(trace.entries().iter().all(|e| e.suppressed));
        let est = estimate_rank(&trace, &LargeConfig::default());
        assert_eq!((est.rank, est.defaulted), (1, true));
    }

    #[test]
    fn trace_matches_step_by_step_arithmetic_oracle() {
        // Six-point log profile with a small kink at index 3. Expected values
        // recomputed independently by exact decimal arithmetic and with a
        // NumPy least-squares reference; both agree to machine precision.
        let logs = [-1.0, -2.0, -3.01, -4.0, -5.0, -6.0];
        let trace = pesdr_trace(&profile_from_logs(&logs), &LargeConfig::default()).unwrap();
        let e = trace.entries();
        assert_eq!(e.len(), 4);

        // i = 4: two-point fit over an exact line; zero scatter, suppressed.
        assert_eq!(e[0].index, 4);
        assert_relative_eq!(e[0].a1, -1.0, epsilon = 1e-10);
        assert_relative_eq!(e[0].a2, 0.0, epsilon = 1e-10);
        assert_relative_eq!(e[0].lambda_hat, -4.0, epsilon = 1e-10);
        assert_relative_eq!(e[0].delta, 0.0, epsilon = 1e-10);
        assert!(e[0].sigma < 1e-12 && e[0].suppressed);

        // i = 3: three collinear points below; the kink appears only in delta.
        assert_eq!(e[1].index, 3);
        assert_relative_eq!(e[1].a1, -1.0, epsilon = 1e-10);
        assert_relative_eq!(e[1].lambda_hat, -3.0, epsilon = 1e-10);
        assert_relative_eq!(e[1].delta, -0.01, epsilon = 1e-10);
        assert_relative_eq!(e[1].delta_rel, -0.01 / 3.0, epsilon = 1e-10);
        assert!(e[1].sigma < 1e-12 && e[1].suppressed);

        // i = 2: the kink now sits inside the fit and produces real scatter.
        assert_eq!(e[2].index, 2);
        assert_relative_eq!(e[2].a1, -0.997, epsilon = 1e-12);
        assert_relative_eq!(e[2].a2, -0.016, epsilon = 1e-12);
        assert_relative_eq!(e[2].lambda_hat, -2.01, epsilon = 1e-12);
        assert_relative_eq!(e[2].delta, 0.01, epsilon = 1e-12);
        assert_relative_eq!(e[2].delta_rel, 0.0049751243781094535, epsilon = 1e-12);
        assert_relative_eq!(e[2].sigma, 0.0031622776601683794, epsilon = 1e-12);
        assert_relative_eq!(e[2].pesdr, 1.5732724677455086, epsilon = 1e-10);
        assert_relative_eq!(e[2].pesdr_pf, e[2].pesdr, epsilon = 1e-14);
        assert!(!e[2].suppressed);

        // i = 1: five-point fit, scatter from the kink persists.
        assert_eq!(e[3].index, 1);
        assert_relative_eq!(e[3].a1, -0.999, epsilon = 1e-12);
        assert_relative_eq!(e[3].a2, -0.006, epsilon = 1e-12);
        assert_relative_eq!(e[3].lambda_hat, -1.005, epsilon = 1e-12);
        assert_relative_eq!(e[3].delta, 0.005, epsilon = 1e-12);
        assert_relative_eq!(e[3].sigma, 0.004183300132670378, epsilon = 1e-12);
        assert_relative_eq!(e[3].pesdr, 1.189282198342425, epsilon = 1e-10);
        assert!(!e[3].suppressed);

        // Scanning upward from the bottom, index 2 fires first.
        let est = estimate_rank(&trace, &LargeConfig::default());
        assert_eq!((est.rank, est.defaulted), (2, false));
    }

    #[test]
    fn residual_mean_is_zero_for_every_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logs: Vec<f64> = (1..=12)
            .map(|i| -0.4 * i as f64 + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let trace = pesdr_trace(&profile_from_logs(&logs), &LargeConfig::default()).unwrap();
        assert_eq!(trace.entries().len(), 10);
        for e in trace.entries() {
            assert!(
                e.residual_mean.abs() < 1e-10,
                "fit at index {} has residual mean {}",
                e.index,
                e.residual_mean
            );
        }
    }

    #[test]
    fn rejects_short_and_flat_profiles() {
        let short = profile_from_logs(&[-1.0, -2.0, -3.0]);
        assert!(matches!(
            pesdr_trace(&short, &LargeConfig::default()),
            Err(Error::DegenerateProfile(_))
        ));
        let flat = profile_from_logs(&[-2.0; 6]);
        assert!(matches!(
            pesdr_trace(&flat, &LargeConfig::default()),
            Err(Error::DegenerateProfile(_))
        ));
    }

    fn synthetic_entry(index: usize, pesdr: f64, suppressed: bool) -> PesdrEntry {
        PesdrEntry {
            index,
            a1: 0.0,
            a2: 0.0,
            lambda: 0.0,
            lambda_hat: -1.0,
            delta: 0.0,
            delta_rel: 0.0,
            sigma: 0.01,
            residual_mean: 0.0,
            pesdr,
            pesdr_pf: pesdr / penalty_factor(index),
            suppressed,
        }
    }

    #[test]
    fn rank_rule_takes_first_firing_index_from_the_bottom() {
        let cfg = LargeConfig::default();
        // Indices 7 and 3 both exceed the threshold; 7 is reached first.
        let entries: Vec<PesdrEntry> = (1..=8)
            .rev()
            .map(|i| synthetic_entry(i, if i == 7 || i == 3 { 2.0 } else { 0.1 }, false))
            .collect();
        let est = estimate_rank(&PesdrTrace::from_entries(entries), &cfg);
        assert_eq!((est.rank, est.defaulted), (7, false));

        // A suppressed entry cannot fire even with a huge ratio.
        let entries: Vec<PesdrEntry> = (1..=8)
            .rev()
            .map(|i| synthetic_entry(i, if i == 7 { 9.0 } else { 0.1 }, i == 7))
            .collect();
        let est = estimate_rank(&PesdrTrace::from_entries(entries), &cfg);
        assert_eq!((est.rank, est.defaulted), (1, true));

        // All suppressed: default.
        let entries: Vec<PesdrEntry> =
            (1..=8).rev().map(|i| synthetic_entry(i, 5.0, true)).collect();
        let est = estimate_rank(&PesdrTrace::from_entries(entries), &cfg);
        assert_eq!((est.rank, est.defaulted), (1, true));
    }

    #[test]
    fn negative_ratios_never_fire() {
        let cfg = LargeConfig::default();
        let entries: Vec<PesdrEntry> =
            (1..=6).rev().map(|i| synthetic_entry(i, -5.0, false)).collect();
        let est = estimate_rank(&PesdrTrace::from_entries(entries), &cfg);
        assert_eq!((est.rank, est.defaulted), (1, true));
    }

    #[test]
    fn penalty_factor_clamps_at_small_indices() {
        assert_eq!(penalty_factor(1), 1.0);
        assert_eq!(penalty_factor(2), 1.0);
        assert_relative_eq!(penalty_factor(3), 2f64.log10(), epsilon = 1e-15);
        assert_relative_eq!(penalty_factor(11), 1.0, epsilon = 1e-15);
        assert!(penalty_factor(12) > 1.0);
    }

    #[test]
    fn penalty_dominates_beyond_index_eleven() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logs: Vec<f64> = (1..=20)
            .map(|i| -0.3 * i as f64 + 0.02 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let trace = pesdr_trace(&profile_from_logs(&logs), &LargeConfig::default()).unwrap();
        for e in trace.entries() {
            if e.index >= 11 && !e.suppressed && e.pesdr > 0.0 {
                assert!(e.pesdr_pf <= e.pesdr);
            }
        }
    }

    #[test]
    fn rank_is_scale_invariant_through_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = crate::tensor::FactorSet::random_gaussian(&[15, 16, 17], 4, &mut rng);
        let clean = f.construct().unwrap();
        let (noisy, _) = crate::tensor::add_noise_at_snr(
            &clean,
            crate::tensor::SnrSpec::new(20.0).unwrap(),
            &mut rng,
        )
        .unwrap();
        let cfg = LargeConfig::default();
        let base = estimate(&crate::spectra::global_eigenvalues(&noisy).unwrap(), &cfg).unwrap();
        for c in [1e-3, 1e3] {
            let scaled_data: Vec<f64> = noisy.data().iter().map(|x| c * x).collect();
            let scaled =
                crate::tensor::DenseTensor::new(noisy.dims().to_vec(), scaled_data).unwrap();
            let est = estimate(&crate::spectra::global_eigenvalues(&scaled).unwrap(), &cfg).unwrap();
            assert_eq!(est.rank, base.rank);
        }
    }

    #[test]
    fn high_snr_planted_rank_is_recovered() {
        let cfg = LargeConfig::default();
        let mut hits = 0;
        let trials = 200;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let f = crate::tensor::FactorSet::random_gaussian(&[20, 20, 20], 5, &mut rng);
            let clean = f.construct().unwrap();
            let (noisy, _) = crate::tensor::add_noise_at_snr(
                &clean,
                crate::tensor::SnrSpec::new(60.0).unwrap(),
                &mut rng,
            )
            .unwrap();
            let est = estimate(&crate::spectra::global_eigenvalues(&noisy).unwrap(), &cfg).unwrap();
            hits += (est.rank == 5) as usize;
        }
        assert!(hits >= 198, "only {hits}/{trials} high-SNR recoveries");
    }
}
