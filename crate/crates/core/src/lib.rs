//! Sampling of fractional Brownian motion, the analytic constants and exact
//! limit moments attached to its additive functionals, and Monte Carlo
//! drivers that check the central limit theorem for
//! `n^{(Hd-1)/2} ∫_0^{nt} f(B(s)) ds` against those oracles.

pub mod constants;
pub mod error;
pub mod experiments;
pub mod fbm;
pub mod functionals;
pub mod numerics;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod test_function;

pub use error::{Error, Result};
