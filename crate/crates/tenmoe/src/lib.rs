//! Model-order estimation for noisy low-rank tensors.
//!
//! The crate estimates the CP rank of a noise-corrupted tensor from the
//! regression behaviour of its *global eigenvalues*: products of squared
//! per-mode singular values with matching indices. Noise global eigenvalues
//! follow an approximately straight line on a log scale; the first index whose
//! log eigenvalue escapes that line upward marks the model order.
//!
//! Main entry points:
//!
//! * [`tensor`]: dense tensors, CP synthesis, unfolding algebra, SNR-exact
//!   noise injection.
//! * [`spectra`]: per-mode singular values and the global eigenvalue profile.
//! * [`large`]: the regression estimator and its penalised variant, with a
//!   full per-step diagnostic trace.
//! * [`criteria`]: classical and multi-dimensional AIC/MDL baselines.
//! * [`cp`]: rank-constrained CP decomposition via alternating least squares.
//! * [`sim`]: seeded Monte-Carlo calibration and probability-of-detection
//!   benchmarking across all estimators.
//! * [`io`]: the binary `TNSR` tensor file format.
//!
//! ```
//! use tenmoe::tensor::{DenseTensor, FactorSet, SnrSpec};
//! use tenmoe::spectra::global_eigenvalues;
//! use tenmoe::large::{LargeConfig, estimate};
//! use rand::SeedableRng;
//!
//! // Plant a rank-3 tensor, add noise at 15 dB, and recover the rank.
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let factors = FactorSet::random_gaussian(&[12, 13, 14], 3, &mut rng);
//! let clean = factors.construct().unwrap();
//! let (noisy, _noise) = tenmoe::tensor::add_noise_at_snr(
//!     &clean, SnrSpec::new(15.0).unwrap(), &mut rng).unwrap();
//!
//! let profile = global_eigenvalues(&noisy).unwrap();
//! let est = estimate(&profile, &LargeConfig::default()).unwrap();
//! assert_eq!(est.rank, 3);
//! ```

pub mod cp;
pub mod criteria;
pub mod error;
pub mod io;
pub mod large;
pub mod sim;
pub mod spectra;
pub mod tensor;

mod doctests;

pub use error::{Error, Result};

use std::sync::Once;

/// Estimator identifiers used in reports, CSV output, and scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Linear regression of global eigenvalues.
    Large,
    /// Same, with the index-dependent penalty factor applied.
    LargePf,
    /// Classical AIC on the singular values of the widest-mode unfolding.
    Aic,
    /// Classical MDL on the singular values of the widest-mode unfolding.
    Mdl,
    /// AIC on the global eigenvalue profile.
    NdAic,
    /// MDL on the global eigenvalue profile.
    NdMdl,
}

impl Method {
    /// All methods, in canonical report order.
    pub const ALL: [Method; 6] = [
        Method::Large,
        Method::LargePf,
        Method::Aic,
        Method::Mdl,
        Method::NdAic,
        Method::NdMdl,
    ];

    /// Stable lowercase name used in CSV files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Method::Large => "large",
            Method::LargePf => "large-pf",
            Method::Aic => "aic",
            Method::Mdl => "mdl",
            Method::NdAic => "nd-aic",
            Method::NdMdl => "nd-mdl",
        }
    }

    /// True for the two regression estimators that depend on the threshold.
    pub fn is_large_family(self) -> bool {
        matches!(self, Method::Large | Method::LargePf)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "large" => Ok(Method::Large),
            "large-pf" => Ok(Method::LargePf),
            "aic" => Ok(Method::Aic),
            "mdl" => Ok(Method::Mdl),
            "nd-aic" => Ok(Method::NdAic),
            "nd-mdl" => Ok(Method::NdMdl),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected large, large-pf, aic, mdl, nd-aic, nd-mdl)"
            ))),
        }
    }
}

/// A rank decision together with the method that produced it.
///
/// `rank` is the estimated number of CP components. The regression methods
/// never return less than 1; the information criteria may return 0, meaning
/// "no signal detected". `defaulted` is set when a regression estimator fell
/// back to rank 1 because no index fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RankEstimate {
    pub method: Method,
    pub rank: usize,
    pub defaulted: bool,
}

static NUMERIC_INIT: Once = Once::new();

/// Forces single-threaded dense linear algebra.
///
/// Parallelism in this crate lives at the trial level of the simulation
/// module; keeping the inner kernels sequential makes every result, including
/// parallel Monte-Carlo reports, bit-identical across worker counts.
pub(crate) fn init_linalg() {
    NUMERIC_INIT.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}
