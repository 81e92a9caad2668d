//! Monte Carlo drivers that confront empirical functionals with the oracle
//! targets, plus the configuration, report and manifest plumbing.
//!
//! Every run draws one unit-step path per replica, long enough for the
//! largest `n` in the schedule, and evaluates `F_n` for the whole schedule on
//! that path. Replicas are simulated in blocks of two (one FFT), block `b`
//! using substream `b` of the relevant stage, so results are a pure function
//! of the configuration and seed.

mod config;
mod report;
mod runs;

pub use config::{CheckSettings, ExperimentConfig, KsSettings, LlnSettings, TightnessSettings};
pub use report::{emit_report, sha256_hex, Check, Manifest, Outcome, ReportFile, TOOLKIT_VERSION};
pub use runs::{
    run_clt_moments, run_distribution_test, run_lln, run_tightness_scan, CltMomentsResult, DistributionResult,
    LlnResult, LlnRow, MomentRow, TightnessResult, TightnessRow, MAX_PLANNED_STEPS,
};
