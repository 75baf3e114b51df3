// Keeps the guide's code samples honest: each chapter with Rust blocks is
// attached as a doc comment here, so the blocks compile and run under
// `cargo test`. One module per chapter makes a failing sample easy to place.

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/global-eigenvalues.md")]
pub mod global_eigenvalues {}

#[doc = include_str!("../../../book/src/rank-estimation.md")]
pub mod rank_estimation {}

#[doc = include_str!("../../../book/src/information-criteria.md")]
pub mod information_criteria {}

#[doc = include_str!("../../../book/src/cp-decomposition.md")]
pub mod cp_decomposition {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
