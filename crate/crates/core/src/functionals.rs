//! Pathwise functionals: the rescaled additive functional `F_n(t)`, the
//! occupation-scale functional and a Gaussian-kernel estimate of `L_t(0)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{FbmPath, FbmSampler, HurstModel, TimeGrid};
use crate::numerics::stats::RunningMoments;
use crate::rng::{stage, RngStream, StreamFactory};
use crate::test_function::RadialFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiemannRule {
    /// `f(B(t_k))` on each step.
    #[default]
    Left,
    /// `f` at the linear interpolation of the path at the step midpoint.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalSample {
    pub n: f64,
    pub t: f64,
    pub value: f64,
    pub riemann_rule: RiemannRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalTimeEstimate {
    pub t: f64,
    pub epsilon: f64,
    pub value: f64,
}

/// Running integral `T ↦ ∫_0^T f(B(s)) ds` of a piecewise-constant Riemann
/// approximation. Step `k` carries the integrand value `c_k`; a partial last
/// step is weighted linearly.
#[derive(Debug, Clone)]
pub struct OccupationIntegral {
    dt: f64,
    step_values: Vec<f64>,
    prefix: Vec<f64>,
}

impl OccupationIntegral {
    pub fn new<F: RadialFunction + ?Sized>(path: &FbmPath, f: &F, rule: RiemannRule) -> Self {
        match rule {
            RiemannRule::Left => Self::from_nodes(path, f, &[0.0]),
            RiemannRule::Midpoint => Self::from_nodes(path, f, &[0.5]),
        }
    }

    /// Left rule on the path linearly interpolated onto a grid `substeps`
    /// times finer.
    pub fn refined<F: RadialFunction + ?Sized>(path: &FbmPath, f: &F, substeps: usize) -> Self {
        let substeps = substeps.max(1);
        let nodes: Vec<f64> = (0..substeps).map(|j| j as f64 / substeps as f64).collect();
        Self::from_nodes(path, f, &nodes)
    }

    /// Average of `f` at the fractional positions `nodes` inside each step.
    fn from_nodes<F: RadialFunction + ?Sized>(path: &FbmPath, f: &F, nodes: &[f64]) -> Self {
        let d = path.model().dim();
        let steps = path.grid().n_steps();
        let coords: Vec<&[f64]> = (0..d).map(|c| path.coord(c)).collect();
        let mut step_values = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut acc = 0.0;
            for &u in nodes {
                let r2: f64 = coords
                    .iter()
                    .map(|x| {
                        let v = x[k] + u * (x[k + 1] - x[k]);
                        v * v
                    })
                    .sum();
                acc += f.eval_sq(r2);
            }
            step_values.push(acc / nodes.len() as f64);
        }
        Self::from_step_values(path.grid().dt(), step_values)
    }

    fn from_step_values(dt: f64, step_values: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(step_values.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in &step_values {
            acc += v * dt;
            prefix.push(acc);
        }
        Self {
            dt,
            step_values,
            prefix,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.step_values.len() as f64
    }

    /// `∫_0^T`, with `T` at most the path horizon.
    pub fn upto(&self, horizon: f64) -> Result<f64> {
        let total = self.horizon();
        if !(horizon >= 0.0) || horizon > total * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "integration horizon {horizon} outside the path horizon {total}"
            )));
        }
        let steps = self.step_values.len();
        let pos = horizon / self.dt;
        let k = (pos.floor() as usize).min(steps);
        if k == steps {
            return Ok(self.prefix[steps]);
        }
        let frac = horizon - k as f64 * self.dt;
        Ok(self.prefix[k] + frac * self.step_values[k])
    }
}

/// `n^{(Hd-1)/2}`, the CLT normalisation of `∫_0^{nt} f(B(s)) ds`.
pub fn clt_scale(model: &HurstModel, n: f64) -> f64 {
    n.powf(-model.occupation_exponent() / 2.0)
}

/// `F_n(t) = n^{(Hd-1)/2} ∫_0^{nt} f(B(s)) ds`.
pub fn additive_functional<F: RadialFunction + ?Sized>(
    path: &FbmPath,
    f: &F,
    n: f64,
    t: f64,
    rule: RiemannRule,
) -> Result<FunctionalSample> {
    check_scale(n, t)?;
    let integral = OccupationIntegral::new(path, f, rule);
    let value = clt_scale(path.model(), n) * integral.upto(n * t)?;
    Ok(FunctionalSample {
        n,
        t,
        value,
        riemann_rule: rule,
    })
}

/// `n^{Hd-1} ∫_0^{nt} g(B(s)) ds`, whose limit is `L_t(0) ∫ g`.
pub fn first_order_functional<F: RadialFunction + ?Sized>(path: &FbmPath, g: &F, n: f64, t: f64) -> Result<f64> {
    check_scale(n, t)?;
    let integral = OccupationIntegral::new(path, g, RiemannRule::Left);
    Ok(n.powf(-path.model().occupation_exponent()) * integral.upto(n * t)?)
}

fn check_scale(n: f64, t: f64) -> Result<()> {
    if n > 0.0 && t >= 0.0 && n.is_finite() && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("need n > 0 and t ≥ 0, got n = {n}, t = {t}")))
    }
}

/// `Σ_{t_k < t} p_ε(B(t_k))·Δ_k`, the left-rule occupation integral of the
/// mollified delta at the origin.
pub fn local_time_estimate(path: &FbmPath, t: f64, epsilon: f64) -> Result<LocalTimeEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {epsilon}")));
    }
    path.model().require_local_time()?;
    let dt = path.grid().dt();
    let d = path.model().dim();
    let norms = path.squared_norms();
    let steps = path.grid().n_steps();
    // Gaussian kernel (2πε)^{-d/2} e^{-|x|²/(2ε)}.
    let peak = (2.0 * PI * epsilon).powf(-(d as f64) / 2.0);
    let integral = OccupationIntegral::from_step_values(
        dt,
        norms[..steps].iter().map(|&r2| peak * (-r2 / (2.0 * epsilon)).exp()).collect(),
    );
    Ok(LocalTimeEstimate {
        t,
        epsilon,
        value: integral.upto(t)?,
    })
}

/// `E[L_t(0)] = (2π)^{-d/2} t^{1-Hd} / (1-Hd)`.
pub fn expected_local_time(model: &HurstModel, t: f64) -> Result<f64> {
    model.require_local_time()?;
    let q = model.occupation_exponent();
    Ok((2.0 * PI).powf(-(model.dim() as f64) / 2.0) * t.powf(q) / q)
}

/// Bandwidth schedule: start at `initial_factor·t^{2H}` and halve until the
/// mean estimates at `ε` and `ε/2` agree within `tolerance`, at most
/// `max_halvings` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthPolicy {
    pub initial_factor: f64,
    pub max_halvings: u32,
    pub tolerance: f64,
    /// Paths used to compare the means.
    pub calibration_paths: usize,
    /// Grid resolution of the paths on `[0, t]`.
    pub steps: usize,
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        Self {
            initial_factor: 1e-3,
            max_halvings: 3,
            tolerance: 0.03,
            calibration_paths: 500,
            steps: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthChoice {
    pub epsilon: f64,
    pub halvings: u32,
    pub converged: bool,
    /// `(ε, mean estimate)` for every bandwidth examined.
    pub trail: Vec<(f64, f64)>,
}

/// Run the bandwidth schedule on paths drawn from the calibration stage.
pub fn calibrate_bandwidth(
    model: &HurstModel,
    t: f64,
    policy: &BandwidthPolicy,
    factory: &StreamFactory,
) -> Result<BandwidthChoice> {
    model.require_local_time()?;
    if policy.calibration_paths == 0 || !(policy.initial_factor > 0.0) {
        return Err(Error::Config("bandwidth policy needs paths and a positive start".into()));
    }
    let sampler = FbmSampler::new(*model, TimeGrid::covering(t, policy.steps)?)?;
    let epsilons: Vec<f64> = (0..=policy.max_halvings + 1)
        .map(|j| policy.initial_factor * t.powf(2.0 * model.hurst()) / 2f64.powi(j as i32))
        .collect();
    let blocks = policy.calibration_paths.div_ceil(2);
    let per_block: Vec<Vec<f64>> = crate::parallel::map_indexed(blocks, |b| {
        let mut stream = factory.stream(stage::BANDWIDTH, b as u64);
        let paths = sampler.sample_many(&mut stream, 2);
        let mut sums = vec![0.0; epsilons.len()];
        for p in paths.iter().take(policy.calibration_paths - 2 * b) {
            for (s, &eps) in sums.iter_mut().zip(&epsilons) {
                *s += local_time_estimate(p, t, eps)?.value;
            }
        }
        Ok(sums)
    })?;
    let means: Vec<f64> = (0..epsilons.len())
        .map(|j| per_block.iter().map(|s| s[j]).sum::<f64>() / policy.calibration_paths as f64)
        .collect();
    let mut trail = vec![(epsilons[0], means[0])];
    for j in 0..=policy.max_halvings as usize {
        trail.push((epsilons[j + 1], means[j + 1]));
        let change = ((means[j] - means[j + 1]) / means[j + 1]).abs();
        if change < policy.tolerance {
            return Ok(BandwidthChoice {
                epsilon: epsilons[j],
                halvings: j as u32,
                converged: true,
                trail,
            });
        }
    }
    let last = policy.max_halvings as usize;
    Ok(BandwidthChoice {
        epsilon: epsilons[last],
        halvings: policy.max_halvings,
        converged: false,
        trail,
    })
}

/// Draws of `√C ‖f‖ W(L_t(0))`: `L_t(0)` is estimated on an independent fBm
/// path and `W(L) = √L·Z` with `Z` standard normal independent of the path.
#[derive(Debug)]
pub struct LimitSampler {
    sampler: FbmSampler,
    scale: f64,
    t: f64,
    epsilon: f64,
}

impl LimitSampler {
    pub fn new(model: HurstModel, f_norm: f64, chd: f64, t: f64, epsilon: f64, steps: usize) -> Result<Self> {
        model.require_clt_regime()?;
        if !(t > 0.0) || !(epsilon > 0.0) || !(chd > 0.0) || !(f_norm >= 0.0) {
            return Err(Error::Domain(format!(
                "limit sampler needs t, ε, C > 0 and ‖f‖ ≥ 0 (t = {t}, ε = {epsilon}, C = {chd}, ‖f‖ = {f_norm})"
            )));
        }
        Ok(Self {
            sampler: FbmSampler::new(model, TimeGrid::covering(t, steps)?)?,
            scale: chd.sqrt() * f_norm,
            t,
            epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `count` draws from one stream; paths are generated in pairs.
    pub fn draw_many(&self, stream: &mut RngStream, count: usize) -> Result<Vec<f64>> {
        let paths = self.sampler.sample_many(stream, count);
        let mut out = Vec::with_capacity(count);
        for p in &paths {
            let l = local_time_estimate(p, self.t, self.epsilon)?.value;
            out.push(self.scale * l.sqrt() * stream.normal());
        }
        Ok(out)
    }

    pub fn draw(&self, stream: &mut RngStream) -> Result<f64> {
        Ok(self.draw_many(stream, 1)?[0])
    }
}

/// One draw of the limit variable with the default bandwidth
/// `1e-3·t^{2H}` on a `2^14`-step path.
pub fn simulate_limit_variable(model: &HurstModel, f_norm: f64, chd: f64, t: f64, stream: &mut RngStream) -> Result<f64> {
    let epsilon = 1e-3 * t.powf(2.0 * model.hurst());
    LimitSampler::new(*model, f_norm, chd, t, epsilon, 1 << 14)?.draw(stream)
}

/// Mean and standard error of the kernel estimate over `paths` paths.
pub fn mean_local_time(
    model: &HurstModel,
    t: f64,
    epsilon: f64,
    steps: usize,
    paths: usize,
    factory: &StreamFactory,
) -> Result<RunningMoments> {
    let sampler = FbmSampler::new(*model, TimeGrid::covering(t, steps)?)?;
    let blocks = paths.div_ceil(2);
    let values: Vec<Vec<f64>> = crate::parallel::map_indexed(blocks, |b| {
        let mut stream = factory.stream(stage::PATHS, b as u64);
        sampler
            .sample_many(&mut stream, 2)
            .iter()
            .take(paths - 2 * b)
            .map(|p| Ok(local_time_estimate(p, t, epsilon)?.value))
            .collect()
    })?;
    Ok(values.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_function::{GaussianBump, TestFunction};

    fn model(h: f64, d: usize) -> HurstModel {
        HurstModel::new(h, d).unwrap()
    }

    fn unit_path(h: f64, d: usize, steps: usize, seed: u64) -> FbmPath {
        let m = model(h, d);
        let grid = TimeGrid::new(1.0, steps).unwrap();
        FbmSampler::new(m, grid).unwrap().sample(&mut RngStream::new(seed, 0))
    }

    #[test]
    fn zero_function_gives_zero() {
        let path = unit_path(0.4, 1, 1024, 1);
        let f = TestFunction::gaussian_diff(1.5, 1.5, 1.0, 1).unwrap();
        let s = additive_functional(&path, &f, 512.0, 1.0, RiemannRule::Left).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn constant_zero_path_is_arithmetic() {
        let m = model(0.4, 1);
        let path = FbmPath::zero(m, TimeGrid::new(1.0, 100).unwrap());
        let f = TestFunction::gaussian_diff(1.0, 2.0, 1.0, 1).unwrap();
        let (n, t) = (64.0f64, 1.3);
        let expected = n.powf((0.4 - 1.0) / 2.0) * f.eval_sq(0.0) * n * t;
        for rule in [RiemannRule::Left, RiemannRule::Midpoint] {
            let v = additive_functional(&path, &f, n, t, rule).unwrap().value;
            assert!((v - expected).abs() < 1e-12 * expected.abs(), "{v} vs {expected}");
        }
    }

    #[test]
    fn horizon_too_short_is_rejected() {
        let path = unit_path(0.4, 1, 128, 2);
        let f = TestFunction::gaussian_diff(1.0, 2.0, 1.0, 1).unwrap();
        assert!(matches!(
            additive_functional(&path, &f, 256.0, 1.0, RiemannRule::Left),
            Err(Error::Domain(_))
        ));
        assert!(additive_functional(&path, &f, 128.0, 1.0, RiemannRule::Left).is_ok());
    }

    #[test]
    fn partial_step_is_linearly_weighted() {
        let oi = OccupationIntegral::from_step_values(0.5, vec![1.0, 2.0, 4.0]);
        assert_eq!(oi.upto(0.0).unwrap(), 0.0);
        assert!((oi.upto(0.75).unwrap() - (0.5 + 0.25 * 2.0)).abs() < 1e-15);
        assert!((oi.upto(1.5).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn left_rule_matches_explicit_sum() {
        let path = unit_path(0.4, 2, 300, 3);
        let f = TestFunction::gaussian_diff(1.0, 2.0, 1.0, 2).unwrap();
        let norms = path.squared_norms();
        let n = 200.0f64;
        let direct: f64 = norms[..200].iter().map(|&r2| f.eval_sq(r2)).sum::<f64>() * n.powf((0.8 - 1.0) / 2.0);
        let v = additive_functional(&path, &f, n, 1.0, RiemannRule::Left).unwrap().value;
        assert!((v - direct).abs() < 1e-12 * direct.abs().max(1e-300));
    }

    #[test]
    fn first_order_is_linear_and_vanishes_at_zero() {
        let path = unit_path(0.4, 1, 2048, 4);
        let g = GaussianBump::new(1.0, 1.0, 1).unwrap();
        let a = first_order_functional(&path, &g, 2048.0, 1.0).unwrap();
        let b = first_order_functional(&path, &g.scaled(2.0), 2048.0, 1.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs());
        assert_eq!(first_order_functional(&path, &g, 2048.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn local_time_on_zero_path() {
        let m = model(0.4, 2);
        let path = FbmPath::zero(m, TimeGrid::covering(1.0, 64).unwrap());
        let eps = 0.01;
        let v = local_time_estimate(&path, 1.0, eps).unwrap().value;
        let expected = 1.0 / (2.0 * PI * eps);
        assert!((v - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn local_time_is_monotone_in_t() {
        let m = model(0.4, 1);
        let sampler = FbmSampler::new(m, TimeGrid::covering(1.0, 4096).unwrap()).unwrap();
        let mut stream = RngStream::new(5, 0);
        for p in sampler.sample_many(&mut stream, 20) {
            let half = local_time_estimate(&p, 0.5, 1e-3).unwrap().value;
            let full = local_time_estimate(&p, 1.0, 1e-3).unwrap().value;
            assert!(half >= 0.0 && half <= full);
        }
    }

    #[test]
    fn expected_local_time_value() {
        let v = expected_local_time(&model(0.4, 1), 1.0).unwrap();
        assert!((v - 0.664904).abs() < 1e-6, "{v}");
        assert!(expected_local_time(&model(0.6, 2), 1.0).is_err());
    }

    #[test]
    fn kernel_mean_matches_closed_form_expectation() {
        // E p_ε(B_s) = (2π(s^{2H} + ε))^{-1/2} in d = 1, summed on the grid.
        let m = model(0.4, 1);
        let (steps, eps) = (4096usize, 1e-3);
        let dt = 1.0 / steps as f64;
        let exact: f64 = (0..steps)
            .map(|k| dt / (2.0 * PI * ((k as f64 * dt).powf(0.8) + eps)).sqrt())
            .sum();
        let acc = mean_local_time(&m, 1.0, eps, steps, 2000, &StreamFactory::new(9)).unwrap();
        assert!((acc.mean() - exact).abs() < 4.0 * acc.stderr(), "{} ± {} vs {exact}", acc.mean(), acc.stderr());
    }

    #[test]
    fn limit_variable_basics() {
        let m = model(0.4, 1);
        let mut stream = RngStream::new(11, 0);
        assert_eq!(simulate_limit_variable(&m, 0.0, 2.8668, 1.0, &mut stream).unwrap(), 0.0);
        assert!(simulate_limit_variable(&model(0.3, 1), 1.0, 1.0, 1.0, &mut stream).is_err());
    }

    #[test]
    fn limit_variable_variance_and_symmetry() {
        let m = model(0.4, 1);
        let (chd, norm) = (2.8668, 0.5);
        let sampler = LimitSampler::new(m, norm, chd, 1.0, 1e-3, 1 << 12).unwrap();
        let factory = StreamFactory::new(12);
        let draws: Vec<f64> = (0..5000u64)
            .flat_map(|b| sampler.draw_many(&mut factory.stream(stage::LIMIT, b), 2).unwrap())
            .collect();
        let sq: RunningMoments = draws.iter().map(|x| x * x).collect();
        let target = chd * norm * norm * expected_local_time(&m, 1.0).unwrap();
        assert!((sq.mean() - target).abs() < 4.0 * sq.stderr(), "{} ± {} vs {target}", sq.mean(), sq.stderr());
        let cube: RunningMoments = draws.iter().map(|x| x * x * x).collect();
        assert!(cube.mean().abs() < 4.0 * cube.stderr());
    }

    fn median_rule_gap(sigma: f64, paths: usize) -> (f64, f64) {
        let m = model(0.4, 1);
        let n = 1usize << 14;
        let sampler = FbmSampler::new(m, TimeGrid::new(1.0, n).unwrap()).unwrap();
        let f = TestFunction::gaussian_diff(sigma, 2.0 * sigma, 1.0, 1).unwrap();
        let mut stream = RngStream::new(2024, 0);
        let mut mid = Vec::new();
        let mut fine = Vec::new();
        for p in sampler.sample_many(&mut stream, paths) {
            let left = additive_functional(&p, &f, n as f64, 1.0, RiemannRule::Left).unwrap().value;
            let m = additive_functional(&p, &f, n as f64, 1.0, RiemannRule::Midpoint).unwrap().value;
            let r = OccupationIntegral::refined(&p, &f, 2).upto(n as f64).unwrap() * clt_scale(&model(0.4, 1), n as f64);
            mid.push(((left - m) / left).abs());
            fine.push(((left - r) / left).abs());
        }
        mid.sort_by(f64::total_cmp);
        fine.sort_by(f64::total_cmp);
        (mid[paths / 2], fine[paths / 2])
    }

    #[test]
    fn riemann_rules_agree_for_wide_functions() {
        let (mid, fine) = median_rule_gap(4.0, 41);
        assert!(mid < 0.02 && fine < 0.02, "{mid} {fine}");
    }

    #[test]
    fn riemann_rule_gap_is_second_order_in_width() {
        let (narrow, _) = median_rule_gap(1.0, 41);
        let (wide, _) = median_rule_gap(2.0, 41);
        assert!(narrow / wide > 2.5, "{narrow} / {wide}");
    }
}
