//! The limit variance constant `C_{H,d}`, the Riesz constant `c_{β,d}` and
//! the two representations of the singular norm `‖f‖_β`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm::HurstModel;
use crate::numerics::quadrature::{composite_gauss_legendre, integrate, integrate_to_infinity, Tolerance};
use crate::numerics::special::{gamma, unit_sphere_area};
use crate::test_function::{RadialFunction, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChdMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChdValue {
    pub value: f64,
    pub method: ChdMethod,
    pub abs_error_estimate: f64,
}

/// `C_{H,d} = 2^{1-1/(2H)} Γ((Hd+2H-1)/(2H)) / ((1-Hd) π^{d/2})`.
pub fn chd_closed_form(model: &HurstModel) -> Result<ChdValue> {
    model.require_clt_regime()?;
    let h = model.hurst();
    let d = model.dim() as f64;
    let value = 2f64.powf(1.0 - 1.0 / (2.0 * h)) * gamma((h * d + 2.0 * h - 1.0) / (2.0 * h))
        / ((1.0 - h * d) * PI.powf(d / 2.0));
    Ok(ChdValue {
        value,
        method: ChdMethod::ClosedForm,
        abs_error_estimate: 1e-13 * value,
    })
}

/// `C_{H,d} = 2(2π)^{-d/2} ∫_0^∞ w^{-Hd} (1 - e^{-1/(2w^{2H})}) dw`.
///
/// The integral is split at `w = 1`. On `(0, 1]` the substitution
/// `w = s^{1/(1-Hd)}` absorbs the `w^{-Hd}` singularity; on `[1, ∞)` the
/// substitution `w = s^{-1/(p-1)}`, `p = Hd + 2H`, maps the `w^{-p}/2` tail
/// onto a bounded integrand on `(0, 1]`.
pub fn chd_quadrature(model: &HurstModel) -> Result<ChdValue> {
    model.require_clt_regime()?;
    let h = model.hurst();
    let d = model.dim() as f64;
    let q = 1.0 - h * d;
    let p = h * d + 2.0 * h;
    let g = |w: f64| -(-0.5 * w.powf(-2.0 * h)).exp_m1();
    let tol = Tolerance::default();

    let head = integrate(|s| if s == 0.0 { 1.0 / q } else { g(s.powf(1.0 / q)) / q }, 0.0, 1.0, tol)?;
    let tail = integrate(
        |s| {
            if s == 0.0 {
                return 0.5 / (p - 1.0);
            }
            let w = s.powf(-1.0 / (p - 1.0));
            w.powf(-h * d) * g(w) * s.powf(-p / (p - 1.0)) / (p - 1.0)
        },
        0.0,
        1.0,
        tol,
    )?;
    let prefactor = 2.0 * (2.0 * PI).powf(-d / 2.0);
    let value = prefactor * (head.value + tail.value);
    let abs_error_estimate = prefactor * (head.abs_error + tail.abs_error);
    if abs_error_estimate > 1e-8 {
        return Err(Error::Numerical(format!(
            "C_Hd quadrature error estimate {abs_error_estimate:e} exceeds 1e-8"
        )));
    }
    Ok(ChdValue {
        value,
        method: ChdMethod::Quadrature,
        abs_error_estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Spectral,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaNorm {
    pub beta: f64,
    pub value_squared: f64,
    pub method: NormMethod,
}

impl BetaNorm {
    pub fn value(&self) -> f64 {
        self.value_squared.max(0.0).sqrt()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("β = {beta} outside (0, 2)")))
    }
}

/// `∫_{R^d} |f̂(ξ)|² |ξ|^{-β-d} dξ` via its radial reduction
/// `S_{d-1} ∫_0^∞ |f̂(r)|² r^{-β-1} dr`.
pub fn spectral_energy(f: &TestFunction, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if f.is_zero() {
        return Ok(0.0);
    }
    let (s1, s2) = f.sigmas();
    let knee = 1.0 / s1.min(s2);
    let tol = Tolerance {
        abs: 1e-14,
        rel: 1e-10,
        max_intervals: 4000,
    };
    let h = |r: f64| {
        if r == 0.0 {
            0.0
        } else {
            f.fourier_sq(r * r).powi(2) * r.powf(-beta - 1.0)
        }
    };
    let head = integrate(h, 0.0, knee, tol)?;
    let tail = integrate_to_infinity(h, knee, tol)?;
    let v = unit_sphere_area(f.dim()) * (head.value + tail.value);
    if !v.is_finite() {
        return Err(Error::Numerical("spectral integral diverged".into()));
    }
    Ok(v)
}

/// Discretisation of the direct (double-integral) representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectResolution {
    /// Inner Gauss–Legendre panels per unit of the smallest Gaussian width.
    pub panels_per_sigma: f64,
    /// Gauss–Legendre points per panel.
    pub order: usize,
    /// Half-width of the truncation box in units of the largest width.
    pub box_sigmas: f64,
    /// Relative tolerance of the outer adaptive radial integral.
    pub outer_rel_tol: f64,
}

impl Default for DirectResolution {
    fn default() -> Self {
        Self {
            panels_per_sigma: 1.0,
            order: 12,
            box_sigmas: 8.0,
            outer_rel_tol: 1e-8,
        }
    }
}

impl DirectResolution {
    /// A coarser, independent discretisation used for refinement checks.
    pub fn coarse() -> Self {
        Self {
            panels_per_sigma: 0.75,
            order: 10,
            box_sigmas: 7.5,
            outer_rel_tol: 1e-7,
        }
    }
}

/// Autocorrelation `A(z) = ∫ f(x) f(x+z) dx` at `z = r·e_1`.
///
/// For d ≥ 2 the integrand depends on `x_1` and `ρ = |x_⊥|` only, so the
/// inner integral is a 2-D tensor rule in `(x_1, ρ)` with weight
/// `S_{d-2} ρ^{d-2}`.
fn autocorrelation(f: &TestFunction, r: f64, res: &DirectResolution) -> f64 {
    let d = f.dim();
    let (s1, s2) = f.sigmas();
    let big = res.box_sigmas * s1.max(s2);
    // Mass of both factors lies in |x| < big and |x + r e1| < big.
    let half1 = big - r / 2.0;
    if half1 <= 0.0 {
        return 0.0;
    }
    let small = s1.min(s2);
    let panels = |len: f64| ((len * res.panels_per_sigma / small).ceil() as usize).max(4);
    let (y1, w1) = composite_gauss_legendre(-half1, half1, panels(2.0 * half1), res.order);
    let x1: Vec<f64> = y1.iter().map(|y| y - r / 2.0).collect();
    if d == 1 {
        return x1
            .iter()
            .zip(&w1)
            .map(|(x, w)| w * f.eval_sq(x * x) * f.eval_sq((x + r) * (x + r)))
            .sum();
    }
    let (rho, wr) = composite_gauss_legendre(0.0, big, panels(big), res.order);
    let shell = unit_sphere_area(d - 1);
    let radial: Vec<(f64, f64)> = rho
        .iter()
        .zip(&wr)
        .map(|(p, w)| (p * p, w * shell * p.powi(d as i32 - 2)))
        .collect();
    let mut total = 0.0;
    for (a, wa) in x1.iter().zip(&w1) {
        let a2 = a * a;
        let b2 = (a + r) * (a + r);
        let row: f64 = radial
            .iter()
            .map(|&(p2, w)| w * f.eval_sq(a2 + p2) * f.eval_sq(b2 + p2))
            .sum();
        total += wa * row;
    }
    total
}

/// `-∫∫ f(x) f(y) |x-y|^β dx dy` written as `-∫ A(z) |z|^β dz` with the
/// radial autocorrelation `A`, integrated as `-S_{d-1} ∫_0^R A(r) r^{β+d-1} dr`.
fn direct_energy(f: &TestFunction, beta: f64, res: &DirectResolution) -> Result<f64> {
    let d = f.dim() as f64;
    let (s1, s2) = f.sigmas();
    let reach = 2.0 * res.box_sigmas * s1.max(s2);
    let tol = Tolerance {
        abs: 1e-13,
        rel: res.outer_rel_tol,
        max_intervals: 2000,
    };
    let knee = s1.min(s2);
    let h = |r: f64| autocorrelation(f, r, res) * r.powf(beta + d - 1.0);
    let near = integrate(h, 0.0, knee, tol)?;
    let far = integrate(h, knee, reach, tol)?;
    Ok(-unit_sphere_area(f.dim()) * (near.value + far.value))
}

/// Calibrated value of `c_{β,d}` and the dual-reference residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RieszCalibration {
    pub beta: f64,
    pub dim: usize,
    pub constant: f64,
    /// Relative difference of the direct/spectral ratio between the two
    /// reference functions.
    pub residual: f64,
}

pub const CALIBRATION_TOLERANCE: f64 = 1e-4;

/// Calibrate `c_{β,d}` as the ratio of the direct and spectral sides on the
/// Gaussian difference `(σ1, σ2) = (1, 2)`, and check that the ratio on
/// `(0.5, 1.5)` agrees within [`CALIBRATION_TOLERANCE`].
pub fn calibrate_riesz_constant(beta: f64, dim: usize, res: &DirectResolution) -> Result<RieszCalibration> {
    check_beta(beta)?;
    let ratio = |s1: f64, s2: f64| -> Result<f64> {
        let f = TestFunction::gaussian_diff(s1, s2, 1.0, dim)?;
        Ok(direct_energy(&f, beta, res)? / spectral_energy(&f, beta)?)
    };
    let first = ratio(1.0, 2.0)?;
    let second = ratio(0.5, 1.5)?;
    let residual = ((first - second) / first).abs();
    if !(first > 0.0) || residual > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "c_(β={beta}, d={dim}) references disagree: {first} vs {second} (residual {residual:e})"
        )));
    }
    Ok(RieszCalibration {
        beta,
        dim,
        constant: first,
        residual,
    })
}

fn riesz_cache() -> &'static RwLock<HashMap<(u64, usize), f64>> {
    static CACHE: OnceLock<RwLock<HashMap<(u64, usize), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `c_{β,d}` such that `-∫∫ f f |x-y|^β = c_{β,d} ∫ |f̂|² |ξ|^{-β-d}`,
/// calibrated once per `(β, d)` and cached.
pub fn riesz_constant(beta: f64, dim: usize) -> Result<f64> {
    check_beta(beta)?;
    let key = (beta.to_bits(), dim);
    if let Some(c) = riesz_cache().read().expect("cache lock").get(&key) {
        return Ok(*c);
    }
    let cal = calibrate_riesz_constant(beta, dim, &DirectResolution::default())?;
    let mut cache = riesz_cache().write().expect("cache lock");
    Ok(*cache.entry(key).or_insert(cal.constant))
}

/// `‖f‖²_β = c_{β,d} ∫ |f̂(ξ)|² |ξ|^{-β-d} dξ`.
pub fn beta_norm_spectral(f: &TestFunction, beta: f64) -> Result<BetaNorm> {
    check_beta(beta)?;
    let value_squared = if f.is_zero() {
        0.0
    } else {
        riesz_constant(beta, f.dim())? * spectral_energy(f, beta)?
    };
    Ok(BetaNorm {
        beta,
        value_squared,
        method: NormMethod::Spectral,
    })
}

pub fn beta_norm_direct(f: &TestFunction, beta: f64) -> Result<BetaNorm> {
    beta_norm_direct_with(f, beta, &DirectResolution::default())
}

/// `‖f‖²_β = -∫∫ f(x) f(y) |x-y|^β dx dy` by quadrature.
pub fn beta_norm_direct_with(f: &TestFunction, beta: f64, res: &DirectResolution) -> Result<BetaNorm> {
    check_beta(beta)?;
    let value_squared = if f.is_zero() { 0.0 } else { direct_energy(f, beta, res)? };
    if value_squared < -1e-8 {
        return Err(Error::Consistency(format!(
            "direct ‖f‖²_β = {value_squared:e} is negative"
        )));
    }
    Ok(BetaNorm {
        beta,
        value_squared,
        method: NormMethod::Direct,
    })
}
