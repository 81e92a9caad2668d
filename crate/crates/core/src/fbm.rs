//! Fractional Brownian motion: the model, its covariance algebra and exact
//! samplers on uniform grids.
//!
//! Paths are produced by circulant embedding of the fractional Gaussian
//! noise autocovariance. A circulant of length `2m`, `m = next_pow2(n - 1)`,
//! is diagonalised once per sampler; each FFT of complex white noise then
//! yields two independent increment sequences (real and imaginary parts).
//! When the embedding has an eigenvalue below `-1e-9·λ_max` the sampler falls
//! back to a dense Cholesky factor of the Toeplitz covariance, which is only
//! feasible for short grids.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::Cholesky;
use crate::rng::RngStream;

/// Relative threshold below which a negative circulant eigenvalue is treated
/// as round-off and clipped to zero.
pub const EIGENVALUE_CLIP: f64 = 1e-9;

/// Largest grid the dense Cholesky fallback accepts.
pub const MAX_CHOLESKY_STEPS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct HurstModel {
    h: f64,
    d: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawModel {
    hurst: f64,
    dim: usize,
}

impl TryFrom<RawModel> for HurstModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        HurstModel::new(raw.hurst, raw.dim)
    }
}

impl From<HurstModel> for RawModel {
    fn from(m: HurstModel) -> Self {
        RawModel {
            hurst: m.h,
            dim: m.d,
        }
    }
}

impl HurstModel {
    pub fn new(h: f64, d: usize) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Domain(format!("Hurst index {h} not in (0, 1)")));
        }
        if d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        Ok(Self { h, d })
    }

    pub fn hurst(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Open interval `(1/(d+2), 1/d)` in which the CLT holds.
    pub fn clt_bounds(&self) -> (f64, f64) {
        (1.0 / (self.d as f64 + 2.0), 1.0 / self.d as f64)
    }

    pub fn clt_regime(&self) -> bool {
        let (lo, hi) = self.clt_bounds();
        lo < self.h && self.h < hi
    }

    pub fn require_clt_regime(&self) -> Result<()> {
        if self.clt_regime() {
            Ok(())
        } else {
            let (lower, upper) = self.clt_bounds();
            Err(Error::Regime {
                hurst: self.h,
                dim: self.d,
                lower,
                upper,
            })
        }
    }

    /// Local time at the origin exists iff `H·d < 1`.
    pub fn require_local_time(&self) -> Result<()> {
        if self.occupation_exponent() > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "local time needs H·d < 1, got H = {}, d = {}",
                self.h, self.d
            )))
        }
    }

    /// `1 - H·d`, the scaling exponent of `E[L_t(0)]` in `t`.
    pub fn occupation_exponent(&self) -> f64 {
        1.0 - self.h * self.d as f64
    }

    /// Supremum of the admissible moment error-rate exponent γ:
    /// `(1-Hd)/2` when `1-Hd ≤ H`, otherwise `(Hd+2H-1)/2`.
    /// `None` outside the CLT regime.
    pub fn gamma_bound(&self) -> Option<f64> {
        if !self.clt_regime() {
            return None;
        }
        let q = self.occupation_exponent();
        if q <= self.h {
            Some(q / 2.0)
        } else {
            Some((self.h * self.d as f64 + 2.0 * self.h - 1.0) / 2.0)
        }
    }
}

/// Uniform time grid `t_k = k·dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("grid step {dt} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::Domain("grid needs at least one step".into()));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid with `n_steps` equal steps covering `[0, horizon]`.
    pub fn covering(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::new(horizon / n_steps as f64, n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }
}

/// One d-dimensional path on a [`TimeGrid`], starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    model: HurstModel,
    grid: TimeGrid,
    // coordinate-major: values[c * (n_steps + 1) + k]
    values: Vec<f64>,
}

impl FbmPath {
    /// Wrap externally built coordinates (coordinate-major layout).
    pub fn from_values(model: HurstModel, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let len = grid.n_steps + 1;
        if values.len() != model.d * len {
            return Err(Error::Domain(format!(
                "expected {} values, got {}",
                model.d * len,
                values.len()
            )));
        }
        if (0..model.d).any(|c| values[c * len] != 0.0) {
            return Err(Error::Domain("path must start at the origin".into()));
        }
        Ok(Self { model, grid, values })
    }

    /// The degenerate path that never leaves the origin.
    pub fn zero(model: HurstModel, grid: TimeGrid) -> Self {
        Self {
            model,
            grid,
            values: vec![0.0; model.d * (grid.n_steps + 1)],
        }
    }

    pub fn model(&self) -> &HurstModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, c: usize) -> &[f64] {
        let len = self.len();
        &self.values[c * len..(c + 1) * len]
    }

    pub fn value(&self, c: usize, k: usize) -> f64 {
        self.values[c * self.len() + k]
    }

    /// `|B(t_k)|²` for every grid point.
    pub fn squared_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for c in 0..self.model.d {
            for (o, v) in out.iter_mut().zip(self.coord(c)) {
                *o += v * v;
            }
        }
        out
    }

    /// CSV with header `t,coord_1,...,coord_d` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for c in 1..=self.model.d {
            write!(w, ",coord_{c}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{:.16e}", self.grid.time(k))?;
            for c in 0..self.model.d {
                write!(w, ",{:.16e}", self.value(c, k))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Per-coordinate covariance `½(t^{2H} + s^{2H} - |t-s|^{2H})`.
pub fn fbm_covariance(model: &HurstModel, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::Domain(format!("negative time in covariance ({s}, {t})")));
    }
    Ok(covariance_unchecked(model.h, s, t))
}

fn covariance_unchecked(h: f64, s: f64, t: f64) -> f64 {
    let p = 2.0 * h;
    0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
}

/// Covariance of the increments `B(b)-B(a)` and `B(d)-B(c)` of one coordinate.
pub fn increment_covariance(model: &HurstModel, (a, b): (f64, f64), (c, d): (f64, f64)) -> f64 {
    let p = 2.0 * model.h;
    0.5 * ((d - a).abs().powf(p) + (c - b).abs().powf(p) - (d - b).abs().powf(p) - (c - a).abs().powf(p))
}

/// Autocovariance of fractional Gaussian noise with step `dt` at integer lag.
pub fn fgn_autocovariance(model: &HurstModel, lag: u64, dt: f64) -> f64 {
    let p = 2.0 * model.h;
    let k = lag as f64;
    let unit = if lag == 0 {
        1.0
    } else {
        0.5 * ((k + 1.0).powf(p) + (k - 1.0).powf(p) - 2.0 * k.powf(p))
    };
    dt.powf(p) * unit
}

/// The scalar covariance block `K_ij = Cov(B¹(t_i), B¹(t_j))` with its
/// Cholesky factor. The d-dimensional covariance is `K ⊗ I_d`.
#[derive(Debug, Clone)]
pub struct ScalarCovariance {
    times: Vec<f64>,
    matrix: Vec<f64>,
    factor: Cholesky,
}

impl ScalarCovariance {
    pub fn new(model: &HurstModel, times: &[f64]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Domain("empty time list".into()));
        }
        if times[0] <= 0.0 {
            return Err(Error::Domain("times must be strictly positive".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("times must be strictly increasing".into()));
        }
        let n = times.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = covariance_unchecked(model.h, times[i], times[j]);
                matrix[i * n + j] = v;
                matrix[j * n + i] = v;
            }
        }
        let factor = Cholesky::factor(&matrix, n)?;
        Ok(Self {
            times: times.to_vec(),
            matrix,
            factor,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        self.factor.log_det()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Circulant,
    Cholesky,
}

#[derive(Clone)]
enum Engine {
    Circulant {
        // sqrt(λ_k / M) for the length-M embedding
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky(Cholesky),
}

/// Immutable exact sampler for one `(model, grid)` pair.
#[derive(Clone)]
pub struct FbmSampler {
    model: HurstModel,
    grid: TimeGrid,
    engine: Engine,
    min_eigen_ratio: f64,
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmSampler")
            .field("model", &self.model)
            .field("grid", &self.grid)
            .field("kind", &self.kind())
            .finish()
    }
}

/// Eigenvalues of the circulant embedding of the unit-step fGn
/// autocovariance, for `n` increments.
pub fn circulant_eigenvalues(model: &HurstModel, n: usize) -> Vec<f64> {
    let m = n.saturating_sub(1).max(1).next_power_of_two();
    let len = 2 * m;
    let mut row: Vec<Complex<f64>> = (0..len)
        .map(|j| {
            let lag = if j <= m { j } else { len - j };
            Complex::new(fgn_autocovariance(model, lag as u64, 1.0), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut row);
    row.into_iter().map(|z| z.re).collect()
}

impl FbmSampler {
    /// Circulant embedding, falling back to Cholesky when the embedding is
    /// not nonnegative definite and the grid is small enough.
    pub fn new(model: HurstModel, grid: TimeGrid) -> Result<Self> {
        match Self::circulant(model, grid) {
            Ok(s) => Ok(s),
            Err(Error::Sampling(msg)) => {
                if grid.n_steps <= MAX_CHOLESKY_STEPS {
                    Self::cholesky(model, grid)
                } else {
                    Err(Error::Sampling(format!(
                        "{msg}; {} steps exceed the Cholesky fallback limit {MAX_CHOLESKY_STEPS}",
                        grid.n_steps
                    )))
                }
            }
            Err(e) => Err(e),
        }
    }

    /// Circulant embedding only; fails if an eigenvalue is below
    /// `-EIGENVALUE_CLIP·λ_max`.
    pub fn circulant(model: HurstModel, grid: TimeGrid) -> Result<Self> {
        let eig = circulant_eigenvalues(&model, grid.n_steps);
        let len = eig.len();
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -EIGENVALUE_CLIP * max {
            return Err(Error::Sampling(format!(
                "circulant embedding has eigenvalue {min:e} (max {max:e})"
            )));
        }
        let scale = eig
            .iter()
            .map(|&l| (l.max(0.0) / len as f64).sqrt())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self {
            model,
            grid,
            engine: Engine::Circulant { scale, fft },
            min_eigen_ratio: min / max,
        })
    }

    /// Dense Cholesky factor of the n × n fGn Toeplitz covariance.
    pub fn cholesky(model: HurstModel, grid: TimeGrid) -> Result<Self> {
        let n = grid.n_steps;
        if n > MAX_CHOLESKY_STEPS {
            return Err(Error::Sampling(format!(
                "{n} steps exceed the Cholesky limit {MAX_CHOLESKY_STEPS}"
            )));
        }
        let acf: Vec<f64> = (0..n as u64).map(|k| fgn_autocovariance(&model, k, 1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = acf[i.abs_diff(j)];
            }
        }
        let factor = Cholesky::factor(&a, n)?;
        Ok(Self {
            model,
            grid,
            engine: Engine::Cholesky(factor),
            min_eigen_ratio: f64::NAN,
        })
    }

    pub fn model(&self) -> &HurstModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> SamplerKind {
        match self.engine {
            Engine::Circulant { .. } => SamplerKind::Circulant,
            Engine::Cholesky(_) => SamplerKind::Cholesky,
        }
    }

    /// `λ_min / λ_max` of the embedding (NaN for the Cholesky engine).
    pub fn min_eigen_ratio(&self) -> f64 {
        self.min_eigen_ratio
    }

    /// `count` independent unit-variance-scaled increment sequences of
    /// length `n_steps`, already multiplied by `dt^H`.
    fn increments(&self, stream: &mut RngStream, count: usize) -> Vec<Vec<f64>> {
        let n = self.grid.n_steps;
        let step_scale = self.grid.dt.powf(self.model.h);
        let mut out = Vec::with_capacity(count);
        match &self.engine {
            Engine::Circulant { scale, fft } => {
                let len = scale.len();
                let mut buf = vec![Complex::new(0.0, 0.0); len];
                let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
                while out.len() < count {
                    for (z, s) in buf.iter_mut().zip(scale) {
                        let re = stream.normal();
                        let im = stream.normal();
                        *z = Complex::new(s * re, s * im);
                    }
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    out.push(buf[..n].iter().map(|z| z.re * step_scale).collect());
                    if out.len() < count {
                        out.push(buf[..n].iter().map(|z| z.im * step_scale).collect());
                    }
                }
            }
            Engine::Cholesky(factor) => {
                let mut z = vec![0.0; n];
                for _ in 0..count {
                    stream.fill_normal(&mut z);
                    let mut y = vec![0.0; n];
                    factor.mul_lower(&z, &mut y);
                    y.iter_mut().for_each(|v| *v *= step_scale);
                    out.push(y);
                }
            }
        }
        out
    }

    /// Draw `count` independent paths from one stream. Consecutive coordinate
    /// sequences share transforms, so `count = 2` costs one FFT when d = 1.
    pub fn sample_many(&self, stream: &mut RngStream, count: usize) -> Vec<FbmPath> {
        let d = self.model.d;
        let len = self.grid.n_steps + 1;
        let incs = self.increments(stream, count * d);
        let mut seqs = incs.into_iter();
        (0..count)
            .map(|_| {
                let mut values = vec![0.0; d * len];
                for c in 0..d {
                    let inc = seqs.next().expect("enough sequences were drawn");
                    let coord = &mut values[c * len..(c + 1) * len];
                    let mut acc = 0.0;
                    for (k, x) in inc.iter().enumerate() {
                        acc += x;
                        coord[k + 1] = acc;
                    }
                }
                FbmPath {
                    model: self.model,
                    grid: self.grid,
                    values,
                }
            })
            .collect()
    }

    pub fn sample(&self, stream: &mut RngStream) -> FbmPath {
        self.sample_many(stream, 1).pop().expect("one path")
    }
}

/// One-shot convenience: build a sampler and draw a single path.
pub fn sample_fbm(model: HurstModel, grid: TimeGrid, stream: &mut RngStream) -> Result<FbmPath> {
    Ok(FbmSampler::new(model, grid)?.sample(stream))
}
