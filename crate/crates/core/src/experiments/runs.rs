use std::f64::consts::PI;

use crate::constants::{beta_norm_spectral, chd_closed_form};
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, FbmSampler, HurstModel, TimeGrid};
use crate::functionals::{
    calibrate_bandwidth, clt_scale, expected_local_time, BandwidthChoice, LimitSampler, OccupationIntegral, RiemannRule,
};
use crate::numerics::stats::{ks_two_sample, linear_fit, pooled_moments, KsResult, LinearFit, RunningMoments};
use crate::oracle::{clt_moment_target, MomentEstimate, MomentSpec};
use crate::parallel::map_indexed;
use crate::rng::{stage, StreamFactory};
use crate::test_function::{GaussianBump, TestFunction};

use super::config::ExperimentConfig;
use super::report::{num, Check, Outcome, ReportFile};

/// Longest unit-step path a run may plan.
pub const MAX_PLANNED_STEPS: usize = 1 << 24;

/// Number of unit steps needed to reach `n·horizon`.
fn plan_steps(n: f64, horizon: f64) -> Result<usize> {
    let steps = (n * horizon).ceil().max(1.0);
    if !steps.is_finite() || steps > MAX_PLANNED_STEPS as f64 {
        return Err(Error::Planning(format!(
            "horizon n·t = {n}·{horizon} needs {steps} steps, above the limit {MAX_PLANNED_STEPS}"
        )));
    }
    Ok(steps as usize)
}

/// Simulate `replicas` unit-step paths from `stage_tag` and map each one,
/// returning the results in replica order.
fn per_replica<T, F>(
    model: &HurstModel,
    steps: usize,
    replicas: usize,
    factory: &StreamFactory,
    stage_tag: u64,
    per_path: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&FbmPath) -> Result<T> + Sync + Send,
{
    let sampler = FbmSampler::new(*model, TimeGrid::new(1.0, steps)?)?;
    let nested = map_indexed(replicas.div_ceil(2), |b| {
        let mut stream = factory.stream(stage_tag, b as u64);
        sampler
            .sample_many(&mut stream, 2)
            .iter()
            .take(replicas - 2 * b)
            .map(&per_path)
            .collect::<Result<Vec<T>>>()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Column `j` of row-major per-replica values, pooled.
fn column_moments(values: &[Vec<f64>], j: usize) -> RunningMoments {
    let column: Vec<f64> = values.iter().map(|row| row[j]).collect();
    pooled_moments(&column)
}

fn z_score(diff: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        diff / sd
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

fn relative(diff: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        diff / reference
    } else {
        z_score(diff, 0.0)
    }
}

/// `‖f‖²` at `β = 1/H - d` for a certified `f`.
fn clt_norm_sq(model: &HurstModel, f: &TestFunction) -> Result<f64> {
    let beta = 1.0 / model.hurst() - model.dim() as f64;
    if f.is_zero() {
        return Ok(0.0);
    }
    f.verify_membership(beta)?;
    Ok(beta_norm_spectral(f, beta)?.value_squared)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub n: f64,
    pub spec: String,
    pub empirical: f64,
    pub stderr: f64,
    pub target: f64,
    pub target_stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct CltMomentsResult {
    pub specs: Vec<MomentSpec>,
    pub targets: Vec<MomentEstimate>,
    pub rows: Vec<MomentRow>,
    pub checks: Vec<Check>,
}

impl CltMomentsResult {
    /// Rows of one specification across the schedule.
    pub fn rows_for(&self, spec: &MomentSpec) -> Vec<&MomentRow> {
        let label = spec.label();
        self.rows.iter().filter(|r| r.spec == label).collect()
    }
}

impl Outcome for CltMomentsResult {
    fn files(&self) -> Vec<ReportFile> {
        vec![ReportFile::csv(
            "moments.csv",
            &["n", "m_spec", "empirical", "stderr", "target", "target_stderr", "z"],
            self.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.spec.clone(),
                    num(r.empirical),
                    num(r.stderr),
                    num(r.target),
                    num(r.target_stderr),
                    num(r.z),
                ]
            }),
        )]
    }

    fn checks(&self) -> &[Check] {
        &self.checks
    }
}

/// Empirical `E Π (F_n(b_i) - F_n(a_i))^{m_i}` for every scheduled `n` and
/// every moment specification, against the limit targets.
pub fn run_clt_moments(cfg: &ExperimentConfig) -> Result<CltMomentsResult> {
    cfg.validate()?;
    cfg.model.require_clt_regime()?;
    let specs = cfg.moment_specs()?;
    let horizon = specs.iter().map(MomentSpec::horizon).fold(0.0, f64::max);
    let steps = plan_steps(cfg.n_max(), horizon)?;
    let factory = StreamFactory::new(cfg.seed);
    let targets = specs
        .iter()
        .map(|s| clt_moment_target(s, &cfg.model, &cfg.f, cfg.oracle_samples, &factory))
        .collect::<Result<Vec<_>>>()?;

    let values = per_replica(&cfg.model, steps, cfg.replicas, &factory, stage::PATHS, |path| {
        let integral = OccupationIntegral::new(path, &cfg.f, cfg.rule);
        let mut row = Vec::with_capacity(cfg.n_schedule.len() * specs.len());
        for &n in &cfg.n_schedule {
            let scale = clt_scale(&cfg.model, n);
            for spec in &specs {
                let mut prod = 1.0;
                for (&(a, b), &m) in spec.intervals().iter().zip(spec.multi_index()) {
                    let inc = scale * (integral.upto(n * b)? - integral.upto(n * a)?);
                    prod *= inc.powi(m as i32);
                }
                row.push(prod);
            }
        }
        Ok(row)
    })?;

    let mut rows = Vec::new();
    for (i, &n) in cfg.n_schedule.iter().enumerate() {
        for (j, spec) in specs.iter().enumerate() {
            let acc = column_moments(&values, i * specs.len() + j);
            let target = targets[j];
            let sd = (acc.stderr().powi(2) + target.stderr.powi(2)).sqrt();
            rows.push(MomentRow {
                n,
                spec: spec.label(),
                empirical: acc.mean(),
                stderr: acc.stderr(),
                target: target.value,
                target_stderr: target.stderr,
                z: z_score(acc.mean() - target.value, sd),
            });
        }
    }

    let mut checks = Vec::new();
    let th = cfg.checks;
    for (j, spec) in specs.iter().enumerate() {
        let series: Vec<&MomentRow> = rows.iter().skip(j).step_by(specs.len()).collect();
        let last = series.last().expect("non-empty schedule");
        let label = spec.label();
        if spec.has_odd() {
            let bound = th.odd_z * last.stderr;
            checks.push(Check::new(
                format!("{label} vanishes at n = {}", last.n),
                last.empirical.abs() <= bound,
                format!("|{:.4e}| vs {} stderr = {:.4e}", last.empirical, th.odd_z, bound),
            ));
            continue;
        }
        let rel = relative(last.empirical - last.target, last.target).abs();
        checks.push(Check::new(
            format!("{label} relative error at n = {}", last.n),
            rel <= th.moment_rel_tol,
            format!(
                "empirical {:.6e} ± {:.2e}, target {:.6e}: |rel| = {:.4} (tolerance {})",
                last.empirical, last.stderr, last.target, rel, th.moment_rel_tol
            ),
        ));
        if series.len() >= 3 {
            let x: Vec<f64> = series.iter().map(|r| r.n.log2()).collect();
            let y: Vec<f64> = series
                .iter()
                .map(|r| relative(r.empirical - r.target, r.target).abs())
                .collect();
            let fit = linear_fit(&x, &y);
            checks.push(Check::new(
                format!("{label} |relative error| trend"),
                fit.slope <= th.trend_z * fit.slope_stderr,
                format!(
                    "slope of |rel| per doubling of n = {:.4e} ± {:.2e} (must not exceed {} stderr)",
                    fit.slope, fit.slope_stderr, th.trend_z
                ),
            ));
        }
    }
    Ok(CltMomentsResult {
        specs,
        targets,
        rows,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnRow {
    pub n: f64,
    pub t: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub limit: f64,
    pub rel_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct LlnResult {
    pub rows: Vec<LlnRow>,
    pub checks: Vec<Check>,
}

impl Outcome for LlnResult {
    fn files(&self) -> Vec<ReportFile> {
        vec![ReportFile::csv(
            "lln.csv",
            &["n", "t", "empirical", "stderr", "limit", "rel_error", "z"],
            self.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.t.to_string(),
                    num(r.empirical),
                    num(r.stderr),
                    num(r.limit),
                    num(r.rel_error),
                    num(r.z),
                ]
            }),
        )]
    }

    fn checks(&self) -> &[Check] {
        &self.checks
    }
}

/// Mean of `n^{Hd-1} ∫_0^{nt} g(B(s)) ds` against `E[L_t(0)]·∫g`.
pub fn run_lln(cfg: &ExperimentConfig) -> Result<LlnResult> {
    cfg.validate()?;
    cfg.model.require_local_time()?;
    let g = GaussianBump::new(cfg.lln.sigma, cfg.lln.mass, cfg.model.dim())?;
    let t_max = cfg.t_points.iter().cloned().fold(0.0, f64::max);
    let steps = plan_steps(cfg.n_max(), t_max)?;
    let factory = StreamFactory::new(cfg.seed);
    let q = cfg.model.occupation_exponent();
    let values = per_replica(&cfg.model, steps, cfg.replicas, &factory, stage::PATHS, |path| {
        let integral = OccupationIntegral::new(path, &g, RiemannRule::Left);
        let mut row = Vec::new();
        for &n in &cfg.n_schedule {
            for &t in &cfg.t_points {
                row.push(n.powf(-q) * integral.upto(n * t)?);
            }
        }
        Ok(row)
    })?;
    let nt = cfg.t_points.len();
    let mut rows = Vec::new();
    for (i, &n) in cfg.n_schedule.iter().enumerate() {
        for (j, &t) in cfg.t_points.iter().enumerate() {
            let acc = column_moments(&values, i * nt + j);
            let limit = expected_local_time(&cfg.model, t)? * cfg.lln.mass;
            let diff = acc.mean() - limit;
            rows.push(LlnRow {
                n,
                t,
                empirical: acc.mean(),
                stderr: acc.stderr(),
                limit,
                rel_error: relative(diff, limit),
                z: z_score(diff, acc.stderr()),
            });
        }
    }
    let n_max = cfg.n_max();
    let checks = rows
        .iter()
        .filter(|r| r.n == n_max)
        .map(|r| {
            let tol = cfg.checks.lln_rel_tol;
            Check::new(
                format!("occupation mean at n = {}, t = {}", r.n, r.t),
                r.rel_error.abs() <= tol,
                format!(
                    "empirical {:.6e} ± {:.2e}, limit {:.6e}: |rel| = {:.4} (tolerance {tol})",
                    r.empirical,
                    r.stderr,
                    r.limit,
                    r.rel_error.abs()
                ),
            )
        })
        .collect();
    Ok(LlnResult { rows, checks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessRow {
    pub ell: f64,
    pub a: f64,
    pub b: f64,
    pub empirical: f64,
    pub stderr: f64,
    /// `C ‖f‖² E[L_b(0) - L_a(0)]`.
    pub limit: f64,
}

#[derive(Debug, Clone)]
pub struct TightnessResult {
    pub n: f64,
    pub rows: Vec<TightnessRow>,
    pub fit: LinearFit,
    /// `1 - Hd`.
    pub exponent: f64,
    /// Supremum of the admissible error-rate exponent γ.
    pub gamma: f64,
    pub checks: Vec<Check>,
}

impl Outcome for TightnessResult {
    fn files(&self) -> Vec<ReportFile> {
        let table = ReportFile::csv(
            "tightness.csv",
            &["ell", "a", "b", "empirical", "stderr", "limit", "log_ell", "log_empirical"],
            self.rows.iter().map(|r| {
                vec![
                    r.ell.to_string(),
                    r.a.to_string(),
                    r.b.to_string(),
                    num(r.empirical),
                    num(r.stderr),
                    num(r.limit),
                    num(r.ell.ln()),
                    num(r.empirical.ln()),
                ]
            }),
        );
        let fit = ReportFile::csv(
            "tightness_fit.csv",
            &["n", "slope", "slope_stderr", "intercept", "exponent", "gamma", "band_low", "band_high"],
            [vec![
                self.n.to_string(),
                num(self.fit.slope),
                num(self.fit.slope_stderr),
                num(self.fit.intercept),
                num(self.exponent),
                num(self.gamma),
                num(self.exponent - self.gamma),
                num(self.exponent),
            ]],
        );
        vec![table, fit]
    }

    fn checks(&self) -> &[Check] {
        &self.checks
    }
}

/// Regress `log E[(F_n(b) - F_n(a))²]` on `log(b - a)` at fixed `n`.
pub fn run_tightness_scan(cfg: &ExperimentConfig) -> Result<TightnessResult> {
    cfg.validate()?;
    cfg.model.require_clt_regime()?;
    let set = &cfg.tightness;
    if set.lengths.len() < 4 {
        return Err(Error::Config(format!(
            "tightness scan needs at least 4 interval lengths, got {}",
            set.lengths.len()
        )));
    }
    if set.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) || !(set.anchor >= 0.0) {
        return Err(Error::Config("tightness lengths must be positive and the anchor non-negative".into()));
    }
    let n = set.n.unwrap_or(cfg.n_max());
    if !(n > 0.0) {
        return Err(Error::Config(format!("tightness scale must be positive, got {n}")));
    }
    let a = set.anchor;
    let longest = set.lengths.iter().cloned().fold(0.0, f64::max);
    let steps = plan_steps(n, a + longest)?;
    let factory = StreamFactory::new(cfg.seed);
    let scale = clt_scale(&cfg.model, n);
    let values = per_replica(&cfg.model, steps, cfg.replicas, &factory, stage::PATHS, |path| {
        let integral = OccupationIntegral::new(path, &cfg.f, cfg.rule);
        let base = integral.upto(n * a)?;
        set.lengths
            .iter()
            .map(|l| Ok((scale * (integral.upto(n * (a + l))? - base)).powi(2)))
            .collect()
    })?;
    let q = cfg.model.occupation_exponent();
    let variance = chd_closed_form(&cfg.model)?.value * clt_norm_sq(&cfg.model, &cfg.f)?;
    let d = cfg.model.dim() as f64;
    let rows: Vec<TightnessRow> = set
        .lengths
        .iter()
        .enumerate()
        .map(|(j, &ell)| {
            let acc = column_moments(&values, j);
            let b = a + ell;
            TightnessRow {
                ell,
                a,
                b,
                empirical: acc.mean(),
                stderr: acc.stderr(),
                limit: variance * (2.0 * PI).powf(-d / 2.0) * (b.powf(q) - a.powf(q)) / q,
            }
        })
        .collect();
    if rows.iter().any(|r| !(r.empirical > 0.0)) {
        return Err(Error::Numerical("a second moment is not positive; cannot fit on a log scale".into()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.ell.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.empirical.ln()).collect();
    let fit = linear_fit(&x, &y);
    let gamma = cfg.model.gamma_bound().expect("regime checked");
    let tol = cfg.checks.slope_tol;
    let checks = vec![Check::new(
        format!("tightness slope at n = {n}"),
        (fit.slope - q).abs() <= tol,
        format!(
            "slope {:.4} ± {:.4} vs 1 - Hd = {q:.4} ± {tol}; exponent band [{:.4}, {q:.4}]",
            fit.slope,
            fit.slope_stderr,
            q - gamma
        ),
    )];
    Ok(TightnessResult {
        n,
        rows,
        fit,
        exponent: q,
        gamma,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct DistributionResult {
    pub n: f64,
    pub t: f64,
    pub bandwidth: BandwidthChoice,
    pub chd: f64,
    pub norm_sq: f64,
    pub main: KsResult,
    pub control: Option<KsResult>,
    pub fn_samples: Vec<f64>,
    pub limit_samples: Vec<f64>,
    pub checks: Vec<Check>,
}

impl Outcome for DistributionResult {
    fn files(&self) -> Vec<ReportFile> {
        let ks_row = |name: &str, r: &KsResult| {
            vec![
                name.to_string(),
                self.n.to_string(),
                self.t.to_string(),
                num(r.statistic),
                num(r.p_value),
                r.n1.to_string(),
                r.n2.to_string(),
            ]
        };
        let mut ks_rows = vec![ks_row("fn_vs_limit", &self.main)];
        if let Some(c) = &self.control {
            ks_rows.push(ks_row("fn_vs_fn_control", c));
        }
        let ks = ReportFile::csv(
            "ks.csv",
            &["comparison", "n", "t", "statistic", "p_value", "n1", "n2"],
            ks_rows,
        );
        let mut ecdf_rows = Vec::new();
        for (name, sample) in [("fn", &self.fn_samples), ("limit", &self.limit_samples)] {
            let mut sorted = sample.clone();
            sorted.sort_by(f64::total_cmp);
            let len = sorted.len() as f64;
            for (i, v) in sorted.iter().enumerate() {
                ecdf_rows.push(vec![name.to_string(), num(*v), num((i + 1) as f64 / len)]);
            }
        }
        let ecdf = ReportFile::csv("ks_ecdf.csv", &["sample", "value", "ecdf"], ecdf_rows);
        let bandwidth = ReportFile::csv(
            "bandwidth.csv",
            &["epsilon", "mean_local_time"],
            self.bandwidth.trail.iter().map(|(e, m)| vec![num(*e), num(*m)]),
        );
        vec![ks, ecdf, bandwidth]
    }

    fn checks(&self) -> &[Check] {
        &self.checks
    }
}

/// Two-sample KS test between `F_n(t)` at the largest `n` and draws of the
/// limit `√C ‖f‖ W(L_t(0))`.
pub fn run_distribution_test(cfg: &ExperimentConfig) -> Result<DistributionResult> {
    cfg.validate()?;
    cfg.model.require_clt_regime()?;
    if cfg.replicas < 2000 {
        return Err(Error::Config(format!(
            "distribution test needs at least 2000 replicas, got {}",
            cfg.replicas
        )));
    }
    let n = cfg.n_max();
    let t = cfg.t_points[0];
    if !(t > 0.0) {
        return Err(Error::Config("distribution test needs a positive first time point".into()));
    }
    let steps = plan_steps(n, t)?;
    let factory = StreamFactory::new(cfg.seed);
    let scale = clt_scale(&cfg.model, n);
    let sample_fn = |stage_tag| {
        per_replica(&cfg.model, steps, cfg.replicas, &factory, stage_tag, |path| {
            Ok(scale * OccupationIntegral::new(path, &cfg.f, cfg.rule).upto(n * t)?)
        })
    };
    let fn_samples = sample_fn(stage::PATHS)?;

    let bandwidth = calibrate_bandwidth(&cfg.model, t, &cfg.bandwidth, &factory)?;
    let chd = chd_closed_form(&cfg.model)?.value;
    let norm_sq = clt_norm_sq(&cfg.model, &cfg.f)?;
    let limit = LimitSampler::new(cfg.model, norm_sq.sqrt(), chd, t, bandwidth.epsilon, cfg.bandwidth.steps)?;
    let limit_count = cfg.ks.limit_replicas.unwrap_or(cfg.replicas);
    let limit_samples: Vec<f64> = map_indexed(limit_count.div_ceil(2), |b| {
        let mut stream = factory.stream(stage::LIMIT, b as u64);
        let mut draws = limit.draw_many(&mut stream, 2)?;
        draws.truncate(limit_count - 2 * b);
        Ok(draws)
    })?
    .into_iter()
    .flatten()
    .collect();

    let main = ks_two_sample(&fn_samples, &limit_samples);
    let control = if cfg.ks.control {
        Some(ks_two_sample(&fn_samples, &sample_fn(stage::CONTROL)?))
    } else {
        None
    };
    let alpha = cfg.checks.ks_alpha;
    let mut checks = vec![
        Check::new(
            "bandwidth converged",
            bandwidth.converged,
            format!("ε = {:.4e} after {} halvings", bandwidth.epsilon, bandwidth.halvings),
        ),
        Check::new(
            format!("F_n vs limit at n = {n}, t = {t}"),
            main.p_value > alpha,
            format!("D = {:.4e}, p = {:.4} (must exceed {alpha})", main.statistic, main.p_value),
        ),
    ];
    if let Some(c) = &control {
        checks.push(Check::new(
            "F_n vs independent F_n",
            c.p_value > alpha,
            format!("D = {:.4e}, p = {:.4}", c.statistic, c.p_value),
        ));
    }
    Ok(DistributionResult {
        n,
        t,
        bandwidth,
        chd,
        norm_sq,
        main,
        control,
        fn_samples,
        limit_samples,
        checks,
    })
}
