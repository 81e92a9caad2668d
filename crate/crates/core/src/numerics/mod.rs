//! Numerical building blocks shared by the toolkit.

pub mod linalg;
pub mod quadrature;
pub mod special;
pub mod stats;
