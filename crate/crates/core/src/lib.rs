//! Kernel conditional moment (KCM) specification tests.
//!
//! A model is described by a generalized residual `ψ(z; θ)` whose conditional
//! mean given the conditioning variables `x` vanishes at the true parameter.
//! The maximum moment restriction (MMR) measures the violation of that
//! restriction in the unit ball of an RKHS and has a closed form as a
//! U-/V-statistic of `h_θ(u, u') = ψ(z; θ)ᵀψ(z'; θ) k(x, x')`.
//!
//! Modules:
//! - [`kernels`]: kernels, Gram matrices, median-heuristic bandwidths.
//! - [`models`]: datasets and residual functions.
//! - [`mmr`]: `h_θ`, the MMR statistics, embedding diagnostics, spectral checks.
//! - [`cm_tests`]: the bootstrap KCM test and the ICM / smooth baselines.
//! - [`estimation`]: minimum-MMR estimation and MMR instrumental-variable regression.
//! - [`harness`]: simulation designs and Monte-Carlo power experiments.
//! - [`io`]: CSV and JSON input formats.

pub mod error;
pub mod estimation;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod mmr;
pub mod models;
pub mod rng;

pub use cm_tests::{BootstrapOptions, TestKind, TestOutcome};
pub use error::{KcmError, Result};
pub use kernels::{KernelConfig, KernelSpec};
pub use mmr::{HMatrix, MmrStat};
pub use models::{Dataset, ModelKind, ResidualModel};
