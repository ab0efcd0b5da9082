//! Kernel-based discrepancies between conditional distributions.
//!
//! The crate estimates the conditional maximum mean discrepancy (CMMD) at
//! any smoothing level `s >= 0`:
//!
//! | level | quantity |
//! |-------|----------|
//! | 0 | Hilbert-Schmidt distance between conditional mean operators |
//! | 1 | covariate-averaged squared distance between conditional mean embeddings |
//! | 2 | distance between joint mean embeddings over a shared covariate marginal |
//! | s | `Tr(Δ*Δ C^s)` with `C` the covariate covariance operator |
//!
//! Estimators come in a naive plug-in form (separate ridge regressions per
//! sample) and a doubly robust form built on propensity-weighted
//! pseudo-outcomes. [`testing`] turns any of them into a bootstrap
//! two-sample test for conditional distributions.
//!
//! ```
//! use cmmd::cmmd::{cmmd1_sq, CmmdConfig};
//! use cmmd::datagen::gen_sine_vs_linear;
//! use cmmd::kernels::KernelSpec;
//!
//! let (p, q) = gen_sine_vs_linear(1.0, 60, 7, false).unwrap();
//! let cfg = CmmdConfig::new(1.0, KernelSpec::gaussian_median(), KernelSpec::gaussian_median());
//! let est = cmmd1_sq(&p, &q, &cfg).unwrap();
//! assert!(est.value > 0.0);
//! ```

pub mod cmmd;
pub mod datagen;
pub mod doubly_robust;
pub mod embeddings;
mod error;
pub mod kernels;
pub mod linalg;
pub mod seeds;
pub mod testing;

pub use error::{CmmdError, Result};
