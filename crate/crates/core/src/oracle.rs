//! Exact limit moments of `W(L(0))` increments, the CLT moment targets and
//! a randomized local-nondeterminism diagnostic.
//!
//! For disjoint intervals `(a_i, b_i]` and even `m_i`,
//!
//! ```text
//! E Π (W(L_{b_i}) - W(L_{a_i}))^{m_i}
//!   = Π m_i! / (2^{m_i/2} (2π)^{m_i d/4} (m_i/2)!) · ∫ det K(w)^{-d/2} dw
//! ```
//!
//! over the box `Π [a_i, b_i]^{m_i/2}`, with `K(w)` the scalar fBm covariance
//! at the sorted times `w`. Any odd `m_i` makes the moment vanish.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{beta_norm_spectral, chd_closed_form};
use crate::error::{Error, Result};
use crate::fbm::{increment_covariance, HurstModel, ScalarCovariance};
use crate::numerics::special::factorial;
use crate::numerics::stats::RunningMoments;
use crate::parallel::map_indexed;
use crate::rng::{stage, RngStream, StreamFactory};
use crate::test_function::TestFunction;

/// Disjoint ordered intervals `(a_i, b_i]` with exponents `m_i ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct MomentSpec {
    intervals: Vec<(f64, f64)>,
    multi_index: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    intervals: Vec<(f64, f64)>,
    multi_index: Vec<u32>,
}

impl TryFrom<RawSpec> for MomentSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        MomentSpec::new(raw.intervals, raw.multi_index)
    }
}

impl From<MomentSpec> for RawSpec {
    fn from(s: MomentSpec) -> Self {
        RawSpec {
            intervals: s.intervals,
            multi_index: s.multi_index,
        }
    }
}

impl MomentSpec {
    pub fn new(intervals: Vec<(f64, f64)>, multi_index: Vec<u32>) -> Result<Self> {
        if intervals.is_empty() || intervals.len() != multi_index.len() {
            return Err(Error::Config(format!(
                "{} intervals but {} exponents",
                intervals.len(),
                multi_index.len()
            )));
        }
        if multi_index.iter().any(|&m| m == 0) {
            return Err(Error::Config("exponents must be at least 1".into()));
        }
        let mut prev = 0.0;
        for &(a, b) in &intervals {
            if !(a >= prev && b > a && b.is_finite()) {
                return Err(Error::Config(format!(
                    "intervals must be ordered, disjoint and inside [0, ∞); got ({a}, {b}] after {prev}"
                )));
            }
            prev = b;
        }
        Ok(Self {
            intervals,
            multi_index,
        })
    }

    /// A single interval `(a, b]` with exponent `m`.
    pub fn single(a: f64, b: f64, m: u32) -> Result<Self> {
        Self::new(vec![(a, b)], vec![m])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn multi_index(&self) -> &[u32] {
        &self.multi_index
    }

    /// `|m| = Σ m_i`.
    pub fn order(&self) -> u32 {
        self.multi_index.iter().sum()
    }

    pub fn has_odd(&self) -> bool {
        self.multi_index.iter().any(|m| m % 2 == 1)
    }

    pub fn horizon(&self) -> f64 {
        self.intervals.last().map(|iv| iv.1).unwrap_or(0.0)
    }

    /// Compact label such as `(0:1]^2`, used in report tables.
    pub fn label(&self) -> String {
        self.intervals
            .iter()
            .zip(&self.multi_index)
            .map(|((a, b), m)| format!("({a}:{b}]^{m}"))
            .collect::<Vec<_>>()
            .join("x")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub exact: bool,
}

impl MomentEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            samples: 0,
            exact: true,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            stderr: self.stderr * factor.abs(),
            ..self
        }
    }
}

/// `Π m_i! / (2^{m_i/2} (2π)^{m_i d/4} (m_i/2)!)` for even exponents.
pub fn moment_prefactor(spec: &MomentSpec, d: usize) -> f64 {
    spec.multi_index
        .iter()
        .map(|&m| {
            let half = m / 2;
            factorial(m) / (2f64.powi(half as i32) * (2.0 * PI).powf(m as f64 * d as f64 / 4.0) * factorial(half))
        })
        .product()
}

/// Samples drawn per substream; fixing the block size keeps the estimate
/// independent of the thread count.
const ORACLE_BLOCK: u64 = 4096;
const MAX_REDRAWS: usize = 1000;

/// `E Π (W(L_{b_i}) - W(L_{a_i}))^{m_i}` with `L = L(0)` of d-dimensional
/// fBm: exactly 0 when some `m_i` is odd, otherwise a Monte Carlo estimate
/// over the box of the determinant integral.
pub fn limit_moment(spec: &MomentSpec, model: &HurstModel, mc_samples: u64, factory: &StreamFactory) -> Result<MomentEstimate> {
    if spec.has_odd() {
        return Ok(MomentEstimate::exact(0.0));
    }
    model.require_local_time()?;
    if mc_samples < 2 {
        return Err(Error::Config("need at least two Monte Carlo samples".into()));
    }
    let d = model.dim() as f64;
    let slots: Vec<(f64, f64)> = spec
        .intervals
        .iter()
        .zip(&spec.multi_index)
        .flat_map(|(&iv, &m)| std::iter::repeat_n(iv, m as usize / 2))
        .collect();
    let volume: f64 = slots.iter().map(|(a, b)| b - a).product();
    let blocks = mc_samples.div_ceil(ORACLE_BLOCK);
    let parts = map_indexed(blocks as usize, |b| {
        let mut stream = factory.stream(stage::ORACLE, b as u64);
        let count = ORACLE_BLOCK.min(mc_samples - b as u64 * ORACLE_BLOCK);
        let mut acc = RunningMoments::new();
        let mut w = vec![0.0; slots.len()];
        for _ in 0..count {
            let log_det = draw_log_det(model, &slots, &mut w, &mut stream)?;
            acc.push((-0.5 * d * log_det).exp() * volume);
        }
        Ok(acc)
    })?;
    let mut total = RunningMoments::new();
    for p in &parts {
        total.merge(p);
    }
    let c = moment_prefactor(spec, model.dim());
    Ok(MomentEstimate {
        value: c * total.mean(),
        stderr: c * total.stderr(),
        samples: total.count(),
        exact: false,
    })
}

/// Uniform point in the box, sorted, and the log-determinant of its scalar
/// covariance; near-singular draws are redrawn.
fn draw_log_det(model: &HurstModel, slots: &[(f64, f64)], w: &mut [f64], stream: &mut RngStream) -> Result<f64> {
    for _ in 0..MAX_REDRAWS {
        for (x, &(a, b)) in w.iter_mut().zip(slots) {
            *x = stream.uniform_in(a, b);
        }
        w.sort_by(f64::total_cmp);
        match ScalarCovariance::new(model, w) {
            Ok(cov) => return Ok(cov.log_det()),
            Err(Error::Factorization { .. }) | Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical(format!(
        "covariance factorization failed on {MAX_REDRAWS} consecutive draws"
    )))
}

/// Limit of `E Π (F_n(b_i) - F_n(a_i))^{m_i}`:
/// `C_{H,d}^{|m|/2} ‖f‖^{|m|} · E Π (W(L_{b_i}) - W(L_{a_i}))^{m_i}` with
/// `‖f‖` taken at `β = 1/H - d`.
pub fn clt_moment_target(
    spec: &MomentSpec,
    model: &HurstModel,
    f: &TestFunction,
    mc_samples: u64,
    factory: &StreamFactory,
) -> Result<MomentEstimate> {
    model.require_clt_regime()?;
    if spec.has_odd() {
        return Ok(MomentEstimate::exact(0.0));
    }
    let beta = 1.0 / model.hurst() - model.dim() as f64;
    f.verify_membership(beta)?;
    let chd = chd_closed_form(model)?.value;
    let norm_sq = beta_norm_spectral(f, beta)?.value_squared;
    let half = spec.order() as f64 / 2.0;
    let factor = chd.powf(half) * norm_sq.powf(half);
    Ok(limit_moment(spec, model, mc_samples, factory)?.scaled(factor))
}

/// Times and direction vectors of one local-nondeterminism configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LndConfig {
    pub times: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LndReport {
    pub min_ratio: f64,
    pub configs_tested: usize,
    pub worst_config: LndConfig,
}

/// Smallest spacing accepted between consecutive sampled times.
const LND_MIN_GAP: f64 = 1e-9;

/// `Var(Σ u_i·(B(s_i) - B(s_{i-1}))) / Σ |u_i|² (s_i - s_{i-1})^{2H}` for
/// `s_0 = 0`. Coordinates are independent, so the numerator is
/// `Σ_{ij} ⟨u_i, u_j⟩ Cov(ΔB_i, ΔB_j)` with scalar increment covariances.
pub fn lnd_ratio(model: &HurstModel, config: &LndConfig) -> f64 {
    let h2 = 2.0 * model.hurst();
    let n = config.times.len();
    let edges: Vec<(f64, f64)> = (0..n)
        .map(|i| (if i == 0 { 0.0 } else { config.times[i - 1] }, config.times[i]))
        .collect();
    let dot = |i: usize, j: usize| -> f64 { config.vectors[i].iter().zip(&config.vectors[j]).map(|(x, y)| x * y).sum() };
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += dot(i, j) * increment_covariance(model, edges[i], edges[j]);
        }
    }
    let scale: f64 = (0..n).map(|i| dot(i, i) * (edges[i].1 - edges[i].0).powf(h2)).sum();
    var / scale
}

fn draw_lnd_config(d: usize, n_points: usize, stream: &mut RngStream) -> LndConfig {
    let times = loop {
        let mut t: Vec<f64> = (0..n_points).map(|_| stream.uniform()).collect();
        t.sort_by(f64::total_cmp);
        let ok = t[0] > LND_MIN_GAP && t.windows(2).all(|w| w[1] - w[0] > LND_MIN_GAP);
        if ok {
            break t;
        }
    };
    let vectors = (0..n_points)
        .map(|_| {
            let mut v = vec![0.0; d];
            stream.fill_normal(&mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect();
    LndConfig { times, vectors }
}

/// Randomized search for the local-nondeterminism constant: draws
/// `n_configs` sorted time sets on `(0, 1)` with independent uniform unit
/// vectors and reports the smallest variance ratio found.
pub fn lnd_scan(model: &HurstModel, n_points: usize, n_configs: usize, factory: &StreamFactory) -> Result<LndReport> {
    if n_points == 0 || n_configs == 0 {
        return Err(Error::Config("lnd_scan needs n_points ≥ 1 and n_configs ≥ 1".into()));
    }
    let d = model.dim();
    let results = map_indexed(n_configs, |i| {
        let mut stream = factory.stream(stage::LND, i as u64);
        let config = draw_lnd_config(d, n_points, &mut stream);
        let ratio = lnd_ratio(model, &config);
        if !ratio.is_finite() {
            return Err(Error::Numerical(format!("non-finite LND ratio for {config:?}")));
        }
        Ok((ratio, config))
    })?;
    let (min_ratio, worst_config) = results
        .into_iter()
        .reduce(|best, next| if next.0 < best.0 { next } else { best })
        .expect("at least one configuration");
    Ok(LndReport {
        min_ratio,
        configs_tested: n_configs,
        worst_config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature::gauss_legendre;

    fn model(h: f64, d: usize) -> HurstModel {
        HurstModel::new(h, d).unwrap()
    }

    fn factory(seed: u64) -> StreamFactory {
        StreamFactory::new(seed)
    }

    /// `(2π)^{-d/2} (b^{1-Hd} - a^{1-Hd}) / (1-Hd)`.
    fn second_moment_oracle(h: f64, d: usize, a: f64, b: f64) -> f64 {
        let q = 1.0 - h * d as f64;
        (2.0 * PI).powf(-(d as f64) / 2.0) * (b.powf(q) - a.powf(q)) / q
    }

    #[test]
    fn spec_validation() {
        assert!(MomentSpec::new(vec![(0.0, 1.0), (0.5, 2.0)], vec![1, 1]).is_err());
        assert!(MomentSpec::new(vec![(0.0, 1.0)], vec![1, 1]).is_err());
        assert!(MomentSpec::new(vec![(0.0, 1.0)], vec![0]).is_err());
        assert!(MomentSpec::new(vec![(1.0, 1.0)], vec![2]).is_err());
        let s = MomentSpec::new(vec![(0.0, 1.0), (1.0, 2.0)], vec![2, 3]).unwrap();
        assert_eq!(s.order(), 5);
        assert!(s.has_odd());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<MomentSpec>(&json).unwrap(), s);
        assert!(serde_json::from_str::<MomentSpec>(r#"{"intervals":[[1,0]],"multi_index":[2]}"#).is_err());
    }

    #[test]
    fn odd_moments_are_exactly_zero() {
        let m = model(0.4, 1);
        for spec in [
            MomentSpec::single(0.0, 1.0, 3).unwrap(),
            MomentSpec::single(0.0, 1.0, 1).unwrap(),
            MomentSpec::new(vec![(0.0, 1.0), (1.0, 2.0)], vec![2, 1]).unwrap(),
        ] {
            let e = limit_moment(&spec, &m, 100, &factory(1)).unwrap();
            assert_eq!(e, MomentEstimate::exact(0.0));
        }
    }

    #[test]
    fn prefactor_values() {
        let two = MomentSpec::single(0.0, 1.0, 2).unwrap();
        assert!((moment_prefactor(&two, 1) - (2.0 * PI).powf(-0.5)).abs() < 1e-15);
        let four = MomentSpec::single(0.0, 1.0, 4).unwrap();
        assert!((moment_prefactor(&four, 1) - 3.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn second_moment_matches_closed_form() {
        for (h, a, b) in [(0.3, 0.0, 1.0), (0.4, 0.0, 1.0), (0.45, 0.5, 2.0)] {
            let spec = MomentSpec::single(a, b, 2).unwrap();
            let e = limit_moment(&spec, &model(h, 1), 200_000, &factory(2)).unwrap();
            let exact = second_moment_oracle(h, 1, a, b);
            assert!((e.value - exact).abs() < 3.0 * e.stderr, "H={h}: {} ± {} vs {exact}", e.value, e.stderr);
        }
        let e = limit_moment(&MomentSpec::single(0.0, 1.0, 2).unwrap(), &model(0.4, 1), 200_000, &factory(2)).unwrap();
        assert!((e.value - 0.664904).abs() < 3.0 * e.stderr);
    }

    #[test]
    fn determinant_power_in_two_dimensions() {
        let spec = MomentSpec::single(0.25, 1.5, 2).unwrap();
        let e = limit_moment(&spec, &model(0.3, 2), 200_000, &factory(3)).unwrap();
        let exact = second_moment_oracle(0.3, 2, 0.25, 1.5);
        assert!((e.value - exact).abs() < 3.0 * e.stderr, "{} ± {} vs {exact}", e.value, e.stderr);
    }

    /// `∫_{[0,1]²} (w_< (w_> - w_<))^{-1/2} dw` for Brownian motion, by a
    /// tensor rule on `w_< = v·sin²θ`, `w_> = v`, which removes both
    /// singularities.
    fn brownian_fourth_moment_oracle(nodes: usize) -> f64 {
        let (x, w) = gauss_legendre(nodes);
        let mut total = 0.0;
        for (xv, wv) in x.iter().zip(&w) {
            let v = 0.5 * (xv + 1.0);
            for (xt, wt) in x.iter().zip(&w) {
                let theta = PI / 4.0 * (xt + 1.0);
                let (s, c) = theta.sin_cos();
                let lo = v * s * s;
                let jac = v * 2.0 * s * c;
                let integrand = 1.0 / (lo * (v - lo)).sqrt();
                total += 0.5 * wv * PI / 4.0 * wt * integrand * jac;
            }
        }
        // Ordered triangle counted twice for the unordered square.
        2.0 * total
    }

    #[test]
    fn brownian_fourth_moment() {
        let quad = 3.0 / (2.0 * PI) * brownian_fourth_moment_oracle(200);
        // E W(L_1)^4 = 3 E L_1² = 3 for standard Brownian motion.
        assert!((quad - 3.0).abs() < 1e-10, "{quad}");
        let spec = MomentSpec::single(0.0, 1.0, 4).unwrap();
        let e = limit_moment(&spec, &model(0.5, 1), 2_000_000, &factory(4)).unwrap();
        assert!((e.value - quad).abs() < 0.01 * quad, "{} vs {quad}", e.value);
    }

    #[test]
    fn second_moment_increases_with_t() {
        let m = model(0.4, 1);
        let mut last = 0.0;
        for t in [0.25, 0.5, 1.0, 2.0] {
            let e = limit_moment(&MomentSpec::single(0.0, t, 2).unwrap(), &m, 20_000, &factory(5)).unwrap();
            assert!(e.value > last);
            last = e.value;
        }
    }

    #[test]
    fn estimate_is_independent_of_thread_count() {
        let spec = MomentSpec::new(vec![(0.0, 1.0), (1.0, 2.0)], vec![2, 2]).unwrap();
        let m = model(0.4, 1);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| limit_moment(&spec, &m, 20_000, &factory(6)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn clt_target_factors() {
        let m = model(0.4, 1);
        let f = TestFunction::gaussian_diff(1.0, 2.0, 1.0, 1).unwrap();
        let spec = MomentSpec::single(0.0, 1.0, 2).unwrap();
        let a = clt_moment_target(&spec, &m, &f, 50_000, &factory(7)).unwrap();
        let b = clt_moment_target(&spec, &m, &f, 200_000, &factory(8)).unwrap();
        let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 3.0 * combined);
        let chd = chd_closed_form(&m).unwrap().value;
        let norm = beta_norm_spectral(&f, 1.5).unwrap().value_squared;
        let exact = chd * norm * second_moment_oracle(0.4, 1, 0.0, 1.0);
        assert!((b.value - exact).abs() < 3.0 * b.stderr);
        let doubled = clt_moment_target(&spec, &m, &f.scaled(2.0), 50_000, &factory(7)).unwrap();
        assert!((doubled.value - 4.0 * a.value).abs() < 1e-12 * a.value);
        let odd = MomentSpec::single(0.0, 1.0, 3).unwrap();
        assert_eq!(clt_moment_target(&odd, &m, &f, 10, &factory(7)).unwrap(), MomentEstimate::exact(0.0));
        assert!(clt_moment_target(&spec, &model(0.3, 1), &f, 10, &factory(7)).is_err());
    }

    #[test]
    fn lnd_trivial_cases() {
        let f = factory(9);
        let r = lnd_scan(&model(0.4, 2), 1, 500, &f).unwrap();
        assert!((r.min_ratio - 1.0).abs() < 1e-12);
        let r = lnd_scan(&model(0.5, 1), 5, 500, &f).unwrap();
        assert!((r.min_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lnd_positive_for_rough_paths() {
        let r = lnd_scan(&model(0.4, 1), 4, 10_000, &factory(10)).unwrap();
        assert!(r.min_ratio > 0.0 && r.min_ratio < 1.0, "{}", r.min_ratio);
        assert_eq!(r.configs_tested, 10_000);
        assert!((lnd_ratio(&model(0.4, 1), &r.worst_config) - r.min_ratio).abs() < 1e-15);
    }
}
