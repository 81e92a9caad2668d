//! Radial test functions with closed-form Fourier transforms.
//!
//! Fourier convention: `f̂(ξ) = ∫ f(x) e^{-i⟨ξ,x⟩} dx`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::quadrature::{integrate, integrate_to_infinity, Tolerance};
use crate::numerics::special::unit_sphere_area;

/// A radial function on R^d, evaluated through `|x|²`.
pub trait RadialFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// Value at any point with `|x|² = r2`.
    fn eval_sq(&self, r2: f64) -> f64;

    fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.eval_sq(x.iter().map(|v| v * v).sum())
    }
}

/// Density of N(0, σ²I_d) at squared radius `r2`.
fn gaussian_density(sigma: f64, d: usize, r2: f64) -> f64 {
    (2.0 * PI * sigma * sigma).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    GaussianDiff,
}

/// `f = amplitude·(φ_{σ1} − φ_{σ2})`, the difference of two centered
/// unit-mass Gaussian densities. Zero integral by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TestFunctionDescriptor", into = "TestFunctionDescriptor")]
pub struct TestFunction {
    sigma1: f64,
    sigma2: f64,
    amplitude: f64,
    dim: usize,
    /// `(2πσ_i²)^{-d/2}`, cached for evaluation in hot loops.
    norms: (f64, f64),
}

/// JSON form `{kind, sigma1, sigma2, amplitude, dim}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestFunctionDescriptor {
    pub kind: TestFunctionKind,
    pub sigma1: f64,
    pub sigma2: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub dim: usize,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<TestFunctionDescriptor> for TestFunction {
    type Error = Error;
    fn try_from(d: TestFunctionDescriptor) -> Result<Self> {
        match d.kind {
            TestFunctionKind::GaussianDiff => TestFunction::gaussian_diff(d.sigma1, d.sigma2, d.amplitude, d.dim),
        }
    }
}

impl From<TestFunction> for TestFunctionDescriptor {
    fn from(f: TestFunction) -> Self {
        TestFunctionDescriptor {
            kind: TestFunctionKind::GaussianDiff,
            sigma1: f.sigma1,
            sigma2: f.sigma2,
            amplitude: f.amplitude,
            dim: f.dim,
        }
    }
}

/// Proof of membership in `H_0^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipCertificate {
    pub beta: f64,
    /// `∫ |f(x)| |x|^β dx`.
    pub abs_moment: f64,
    /// Numerically evaluated `∫ f(x) dx`.
    pub integral: f64,
}

impl TestFunction {
    pub fn gaussian_diff(sigma1: f64, sigma2: f64, amplitude: f64, dim: usize) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(Error::Domain(format!(
                "Gaussian widths must be positive, got ({sigma1}, {sigma2})"
            )));
        }
        if !amplitude.is_finite() {
            return Err(Error::Domain("amplitude must be finite".into()));
        }
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let norm = |s: f64| (2.0 * PI * s * s).powf(-(dim as f64) / 2.0);
        Ok(Self {
            sigma1,
            sigma2,
            amplitude,
            dim,
            norms: (norm(sigma1), norm(sigma2)),
        })
    }

    pub fn kind(&self) -> TestFunctionKind {
        TestFunctionKind::GaussianDiff
    }

    pub fn sigmas(&self) -> (f64, f64) {
        (self.sigma1, self.sigma2)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Same shape, amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            ..*self
        }
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0 || self.sigma1 == self.sigma2
    }

    pub fn largest_sigma(&self) -> f64 {
        self.sigma1.max(self.sigma2)
    }

    /// `f̂` as a function of `|ξ|²`.
    pub fn fourier_sq(&self, xi2: f64) -> f64 {
        let a = (-self.sigma1 * self.sigma1 * xi2 / 2.0).exp();
        let b = (-self.sigma2 * self.sigma2 * xi2 / 2.0).exp();
        self.amplitude * (a - b)
    }

    pub fn fourier_eval(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        self.fourier_sq(xi.iter().map(|v| v * v).sum())
    }

    /// `∫_{R^d} g(|x|) dx` for radial `g`, by adaptive quadrature of
    /// `S_{d-1} ∫_0^∞ g(r) r^{d-1} dr` split at the given radii.
    fn radial_integral<G: Fn(f64) -> f64>(&self, g: G, breaks: &[f64]) -> Result<f64> {
        let d = self.dim as f64;
        let tol = Tolerance {
            abs: 1e-15,
            rel: 1e-11,
            max_intervals: 4000,
        };
        let h = |r: f64| if r == 0.0 && d > 1.0 { 0.0 } else { g(r) * r.powf(d - 1.0) };
        let mut total = 0.0;
        let mut lo = 0.0;
        for &b in breaks {
            if b > lo {
                total += integrate(h, lo, b, tol)?.value;
                lo = b;
            }
        }
        total += integrate_to_infinity(h, lo, tol)?.value;
        Ok(unit_sphere_area(self.dim) * total)
    }

    /// Radius where the two Gaussian components cross (the sign change of f).
    fn crossing_radius(&self) -> Option<f64> {
        let (s1, s2) = (self.sigma1, self.sigma2);
        if s1 == s2 {
            return None;
        }
        let d = self.dim as f64;
        // φ_{s1}(r) = φ_{s2}(r)  ⇔  r² (1/s1² − 1/s2²)/2 = d ln(s2/s1)
        let r2 = 2.0 * d * (s2 / s1).ln() / (1.0 / (s1 * s1) - 1.0 / (s2 * s2));
        Some(r2.sqrt())
    }

    /// Check `f ∈ H_0^β`: finite absolute β-moment and `|∫ f| ≤ 1e-12`
    /// (relative to the amplitude).
    pub fn verify_membership(&self, beta: f64) -> Result<MembershipCertificate> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("β must be positive, got {beta}")));
        }
        let s = self.largest_sigma();
        let mut breaks = vec![];
        if let Some(r0) = self.crossing_radius() {
            breaks.push(r0);
        }
        breaks.push(4.0 * s);
        breaks.sort_by(f64::total_cmp);
        let integral = self.radial_integral(|r| self.eval_sq(r * r), &breaks)?;
        let abs_moment = self.radial_integral(|r| self.eval_sq(r * r).abs() * r.powf(beta), &breaks)?;
        if integral.abs() > 1e-12 * self.amplitude.abs().max(1.0) {
            return Err(Error::Membership(format!("∫ f = {integral:e} is not zero")));
        }
        if !abs_moment.is_finite() {
            return Err(Error::Membership(format!(
                "absolute {beta}-moment is not finite"
            )));
        }
        Ok(MembershipCertificate {
            beta,
            abs_moment,
            integral,
        })
    }

    /// `∫ f(x)² dx` by radial quadrature.
    pub fn l2_norm_sq(&self) -> Result<f64> {
        self.radial_integral(|r| self.eval_sq(r * r).powi(2), &[4.0 * self.largest_sigma()])
    }

    /// `(2π)^{-d} ∫ |f̂(ξ)|² dξ` by radial quadrature.
    pub fn l2_norm_sq_spectral(&self) -> Result<f64> {
        let s = self.sigma1.min(self.sigma2);
        let v = self.radial_integral(|r| self.fourier_sq(r * r).powi(2), &[4.0 / s])?;
        Ok(v / (2.0 * PI).powi(self.dim as i32))
    }
}

impl RadialFunction for TestFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_sq(&self, r2: f64) -> f64 {
        let (s1, s2) = (self.sigma1, self.sigma2);
        self.amplitude
            * (self.norms.0 * (-0.5 * r2 / (s1 * s1)).exp() - self.norms.1 * (-0.5 * r2 / (s2 * s2)).exp())
    }
}

/// A single Gaussian bump `mass·φ_σ` with `∫ = mass`, used for the
/// first-order (occupation) functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub sigma: f64,
    pub mass: f64,
    pub dim: usize,
}

impl GaussianBump {
    pub fn new(sigma: f64, mass: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0) || dim == 0 || !mass.is_finite() {
            return Err(Error::Domain(format!(
                "invalid Gaussian bump (σ = {sigma}, mass = {mass}, d = {dim})"
            )));
        }
        Ok(Self { sigma, mass, dim })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mass: self.mass * factor,
            ..*self
        }
    }
}

impl RadialFunction for GaussianBump {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_sq(&self, r2: f64) -> f64 {
        self.mass * gaussian_density(self.sigma, self.dim, r2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature::composite_gauss_legendre;
    use crate::rng::RngStream;

    fn tf(s1: f64, s2: f64, d: usize) -> TestFunction {
        TestFunction::gaussian_diff(s1, s2, 1.0, d).unwrap()
    }

    #[test]
    fn eval_examples() {
        let f = tf(1.3, 1.3, 2);
        assert_eq!(f.eval(&[0.4, -1.0]), 0.0);
        let f = tf(1.0, 2.0, 1);
        let expected = (2.0 * PI).powf(-0.5) * 0.5;
        assert!((f.eval(&[0.0]) - expected).abs() < 1e-15);
        assert!((f.eval(&[0.0]) - 0.199471).abs() < 1e-6);
    }

    #[test]
    fn radial_symmetry() {
        let f = tf(0.7, 1.9, 3);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
            let mx: Vec<f64> = x.iter().map(|v| -v).collect();
            assert_eq!(f.eval(&x), f.eval(&mx));
        }
    }

    #[test]
    fn fourier_vanishes_at_origin_and_is_linear_near_it() {
        let f = tf(1.0, 2.0, 1);
        assert_eq!(f.fourier_eval(&[0.0]), 0.0);
        // |f̂(ξ)| ≤ c |ξ|^α for α ∈ [0, 1]: the ratio with α = 1 stays bounded.
        let mut worst: f64 = 0.0;
        for k in 0..60 {
            let xi = 10f64.powf(-8.0 + 0.15 * k as f64);
            worst = worst.max(f.fourier_eval(&[xi]).abs() / xi);
        }
        assert!(worst < 1.0, "ratio {worst}");
    }

    fn numeric_fourier_1d(f: &TestFunction, xi: f64) -> f64 {
        let l = 12.0 * f.largest_sigma();
        let (x, w) = composite_gauss_legendre(-l, l, 64, 20);
        x.iter().zip(&w).map(|(x, w)| w * f.eval(&[*x]) * (xi * x).cos()).sum()
    }

    fn numeric_fourier_2d(f: &TestFunction, xi: [f64; 2]) -> f64 {
        let l = 12.0 * f.largest_sigma();
        let (x, w) = composite_gauss_legendre(-l, l, 32, 16);
        let mut s = 0.0;
        for (xa, wa) in x.iter().zip(&w) {
            for (xb, wb) in x.iter().zip(&w) {
                s += wa * wb * f.eval(&[*xa, *xb]) * (xi[0] * xa + xi[1] * xb).cos();
            }
        }
        s
    }

    #[test]
    fn closed_form_transform_matches_quadrature() {
        let f = tf(1.0, 2.0, 1);
        assert!((numeric_fourier_1d(&f, 1.0) - f.fourier_eval(&[1.0])).abs() < 1e-8);
        let f2 = tf(0.8, 1.5, 2);
        let mut rng = RngStream::new(11, 0);
        for _ in 0..10 {
            let xi = [rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let num = numeric_fourier_2d(&f2, xi);
            assert!((num - f2.fourier_eval(&xi)).abs() < 1e-6, "ξ = {xi:?}");
        }
        let f1 = tf(0.5, 1.7, 1);
        for _ in 0..10 {
            let xi = rng.uniform_in(-4.0, 4.0);
            assert!((numeric_fourier_1d(&f1, xi) - f1.fourier_eval(&[xi])).abs() < 1e-6);
        }
    }

    #[test]
    fn parseval() {
        for (s1, s2, d) in [(1.0, 2.0, 1), (0.5, 1.5, 2), (0.8, 1.1, 3)] {
            let f = tf(s1, s2, d);
            let a = f.l2_norm_sq().unwrap();
            let b = f.l2_norm_sq_spectral().unwrap();
            assert!(((a - b) / a).abs() < 1e-6, "{s1} {s2} {d}: {a} vs {b}");
        }
    }

    #[test]
    fn membership_certificate() {
        for (h, d) in [(0.4, 1usize), (0.3, 2), (0.45, 1), (0.26, 2)] {
            let beta = 1.0 / h - d as f64;
            let cert = tf(1.0, 2.0, d).verify_membership(beta).unwrap();
            assert!(cert.integral.abs() <= 1e-12);
            assert!(cert.abs_moment > 0.0 && cert.abs_moment.is_finite());
        }
        assert!(tf(1.0, 2.0, 1).verify_membership(0.0).is_err());
    }

    #[test]
    fn absolute_moment_matches_quasi_monte_carlo() {
        let f = tf(1.0, 2.0, 1);
        let beta = 1.5;
        let cert = f.verify_membership(beta).unwrap();
        // Van der Corput points over [-L, L]; the integrand is even so use [0, L].
        let l = 24.0;
        let n = 1 << 20;
        let mut s = 0.0;
        for i in 0..n {
            let mut k = i + 1;
            let mut base = 0.5;
            let mut u = 0.0;
            while k > 0 {
                if k & 1 == 1 {
                    u += base;
                }
                base *= 0.5;
                k >>= 1;
            }
            let x = u * l;
            s += f.eval(&[x]).abs() * x.powf(beta);
        }
        let qmc = 2.0 * l * s / n as f64;
        assert!(((qmc - cert.abs_moment) / cert.abs_moment).abs() < 1e-3, "{qmc} vs {}", cert.abs_moment);
    }

    #[test]
    fn descriptor_round_trip_and_validation() {
        let json = r#"{"kind":"gaussian_diff","sigma1":1.0,"sigma2":2.0,"amplitude":1.0,"dim":1}"#;
        let f: TestFunction = serde_json::from_str(json).unwrap();
        assert_eq!(f, tf(1.0, 2.0, 1));
        let back = serde_json::to_value(f).unwrap();
        assert_eq!(back["kind"], "gaussian_diff");
        let bad = r#"{"kind":"gaussian_diff","sigma1":-1.0,"sigma2":2.0,"dim":1}"#;
        assert!(serde_json::from_str::<TestFunction>(bad).is_err());
    }

    #[test]
    fn bump_integrates_to_mass() {
        let g = GaussianBump::new(0.7, 2.5, 2).unwrap();
        let (x, w) = composite_gauss_legendre(-8.0, 8.0, 32, 16);
        let mut s = 0.0;
        for (a, wa) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                s += wa * wb * g.eval(&[*a, *b]);
            }
        }
        assert!((s - 2.5).abs() < 1e-10);
    }
}
