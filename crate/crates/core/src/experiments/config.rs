use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::HurstModel;
use crate::functionals::{BandwidthPolicy, RiemannRule};
use crate::oracle::MomentSpec;
use crate::test_function::{RadialFunction, TestFunction};

/// Experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: HurstModel,
    pub f: TestFunction,
    /// Scales `n`, strictly increasing.
    pub n_schedule: Vec<f64>,
    pub replicas: usize,
    #[serde(default = "default_t_points")]
    pub t_points: Vec<f64>,
    /// Moment specifications for `clt-moments`; defaults to `(0, t]^2` for
    /// the first time point.
    #[serde(default)]
    pub moments: Vec<MomentSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub rule: RiemannRule,
    /// Monte Carlo points for the limit-moment oracle.
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: u64,
    #[serde(default)]
    pub lln: LlnSettings,
    #[serde(default)]
    pub tightness: TightnessSettings,
    #[serde(default)]
    pub ks: KsSettings,
    #[serde(default)]
    pub checks: CheckSettings,
}

fn default_t_points() -> Vec<f64> {
    vec![1.0]
}

fn default_oracle_samples() -> u64 {
    200_000
}

/// The Gaussian `g = mass·φ_σ` of the occupation functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlnSettings {
    pub sigma: f64,
    pub mass: f64,
}

impl Default for LlnSettings {
    fn default() -> Self {
        Self { sigma: 1.0, mass: 1.0 }
    }
}

/// Interval lengths `ℓ` for `(anchor, anchor + ℓ]` at scale `n` (the
/// largest scheduled `n` when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessSettings {
    pub n: Option<f64>,
    pub lengths: Vec<f64>,
    pub anchor: f64,
}

impl Default for TightnessSettings {
    fn default() -> Self {
        Self {
            n: None,
            lengths: vec![0.125, 0.25, 0.5, 1.0],
            anchor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsSettings {
    /// Limit-variable draws; defaults to `replicas`.
    pub limit_replicas: Option<usize>,
    /// Also compare two independent `F_n` samples.
    pub control: bool,
}

impl Default for KsSettings {
    fn default() -> Self {
        Self {
            limit_replicas: None,
            control: false,
        }
    }
}

/// Pass/fail thresholds used by `--check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub moment_rel_tol: f64,
    pub lln_rel_tol: f64,
    pub slope_tol: f64,
    pub ks_alpha: f64,
    pub odd_z: f64,
    /// Allowed upward drift of `|relative error|` across the schedule, in
    /// standard errors of the fitted slope.
    pub trend_z: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            moment_rel_tol: 0.15,
            lln_rel_tol: 0.10,
            slope_tol: 0.15,
            ks_alpha: 0.01,
            odd_z: 4.0,
            trend_z: 2.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.f.dim() != self.model.dim() {
            return fail(format!(
                "test function dimension {} differs from model dimension {}",
                self.f.dim(),
                self.model.dim()
            ));
        }
        if self.replicas < 100 {
            return fail(format!("replicas must be at least 100, got {}", self.replicas));
        }
        if self.n_schedule.is_empty() || self.n_schedule.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return fail("n_schedule must be a non-empty list of positive scales".into());
        }
        if self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return fail("n_schedule must be strictly increasing".into());
        }
        if self.t_points.is_empty() || self.t_points.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return fail("t_points must be a non-empty list of non-negative times".into());
        }
        if !(self.lln.sigma > 0.0 && self.lln.mass.is_finite()) {
            return fail("lln.sigma must be positive and lln.mass finite".into());
        }
        if self.oracle_samples < 2 {
            return fail("oracle_samples must be at least 2".into());
        }
        Ok(())
    }

    /// The largest scheduled scale.
    pub fn n_max(&self) -> f64 {
        *self.n_schedule.last().expect("validated non-empty")
    }

    /// Moment specifications, with the default `(0, t_1]^2`.
    pub fn moment_specs(&self) -> Result<Vec<MomentSpec>> {
        if self.moments.is_empty() {
            let t = self.t_points[0];
            if !(t > 0.0) {
                return Err(Error::Config("default moment needs a positive first time point".into()));
            }
            Ok(vec![MomentSpec::single(0.0, t, 2)?])
        } else {
            Ok(self.moments.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"hurst": 0.4, "dim": 1},
        "f": {"kind": "gaussian_diff", "sigma1": 1.0, "sigma2": 2.0, "dim": 1},
        "n_schedule": [1024, 2048],
        "replicas": 200
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.t_points, vec![1.0]);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.rule, RiemannRule::Left);
        assert_eq!(cfg.moment_specs().unwrap(), vec![MomentSpec::single(0.0, 1.0, 2).unwrap()]);
        let echo = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&echo).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let cases = [
            MINIMAL.replace("[1024, 2048]", "[2048, 1024]"),
            MINIMAL.replace("200", "50"),
            MINIMAL.replace("\"sigma2\": 2.0, \"dim\": 1", "\"sigma2\": 2.0, \"dim\": 2"),
            MINIMAL.replace("\"replicas\"", "\"unknown\": 1, \"replicas\""),
            MINIMAL.replace("0.4", "1.4"),
        ];
        for text in cases {
            let err = ExperimentConfig::from_json(&text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }
}
