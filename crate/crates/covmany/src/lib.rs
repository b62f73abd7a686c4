//! Many-sample tests for the equality and proportionality of large
//! covariance matrices.
//!
//! Given `q` independent samples from `p`-dimensional populations, the crate
//! tests whether the `q` population covariance matrices are all equal, or all
//! proportional to a common (unknown) matrix, in the regime where `p`, `q`
//! and the sample sizes grow together. The test statistics are U-statistics
//! built from unbiased spectral-moment estimators and are asymptotically
//! standard normal after studentization, so both procedures reduce to a
//! one-sided z-test.
//!
//! The crate is organized around the pipeline:
//!
//! * [`mat`] - dense symmetric-matrix primitives: the two matrix distances,
//!   the weighted inner product behind every asymptotic variance, PSD square
//!   roots and normalizations.
//! * [`estimators`] - per-sample machinery: unbiased estimators of spectral
//!   moments, the pair kernels, the pooled statistics and their variance
//!   estimators.
//! * [`theory`] - population-side quantities: mean drifts, variance
//!   decompositions and closed-form power curves.
//! * [`procedures`] - the user-facing tests: proportionality, equality, the
//!   Kronecker specification test for transposable data, pairwise
//!   contributions and the sub-sampled equality scan.
//! * [`simgen`] - reproducible data generation and the size/power experiment
//!   drivers.
//! * [`oracle`] - independent brute-force Monte Carlo verification of the
//!   moment and covariance formulas the statistics rely on.
//! * [`cli`] - the `covmany` command-line front end.
//!
//! A rendered guide with worked examples lives in the `book/` directory of
//! the repository; its code listings double as doc-tests of this crate.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod mat;
pub mod oracle;
pub mod procedures;
pub mod simgen;
pub mod theory;

pub use error::{Error, Result};
pub use estimators::Sample;
pub use mat::{PsdMat, SymMat};

// Every fenced Rust listing in the book is compiled and run by `cargo test`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/matrices.md")]
    mod matrices {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/testing.md")]
    mod testing {}
    #[doc = include_str!("../../../book/src/power.md")]
    mod power {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
