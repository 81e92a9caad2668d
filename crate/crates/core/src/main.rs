use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fbmclt::constants::{chd_closed_form, chd_quadrature, riesz_constant};
use fbmclt::experiments::{
    emit_report, run_clt_moments, run_distribution_test, run_lln, run_tightness_scan, Check, ExperimentConfig,
    Manifest, Outcome, ReportFile,
};
use fbmclt::fbm::{FbmSampler, HurstModel, TimeGrid};
use fbmclt::oracle::{clt_moment_target, limit_moment, MomentSpec};
use fbmclt::rng::{stage, StreamFactory};
use fbmclt::test_function::TestFunction;
use fbmclt::{Error, Result};

/// Fractional Brownian motion CLT toolkit.
#[derive(Parser)]
#[command(name = "fbmclt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print C_{H,d} by both methods and the Riesz constant.
    Constants(ConstantsArgs),
    /// Sample one fBm path and write it as CSV.
    Simulate(SimulateArgs),
    /// Evaluate a limit moment (or a CLT target when the config names `f`).
    Oracle(RunArgs),
    /// Empirical moments of F_n against the limit targets.
    CltMoments(RunArgs),
    /// Occupation-scale functional against E[L_t(0)]·∫g.
    Lln(RunArgs),
    /// Scaling exponent of E[(F_n(b) - F_n(a))²] in b - a.
    Tightness(RunArgs),
    /// Two-sample KS test of F_n against the limit law.
    Ks(RunArgs),
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long)]
    hurst: f64,
    #[arg(long)]
    dim: usize,
    /// Defaults to 1/H - d.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Exit with status 4 when any check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Replica index of the path.
    #[arg(long, default_value_t = 0)]
    index: u64,
}

/// Input of the `oracle` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleConfig {
    model: HurstModel,
    spec: MomentSpec,
    #[serde(default = "default_mc")]
    mc_samples: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<TestFunction>,
}

fn default_mc() -> u64 {
    200_000
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Constants(a) => constants(a),
        Command::Simulate(a) => with_threads(a.common.threads, || simulate(&a)),
        Command::Oracle(a) => with_threads(a.common.threads, || oracle(&a)),
        Command::CltMoments(a) => experiment("clt-moments", &a, |c| Ok(Box::new(run_clt_moments(c)?))),
        Command::Lln(a) => experiment("lln", &a, |c| Ok(Box::new(run_lln(c)?))),
        Command::Tightness(a) => experiment("tightness", &a, |c| Ok(Box::new(run_tightness_scan(c)?))),
        Command::Ks(a) => experiment("ks", &a, |c| Ok(Box::new(run_distribution_test(c)?))),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(job),
    }
}

fn constants(a: ConstantsArgs) -> Result<u8> {
    let model = HurstModel::new(a.hurst, a.dim)?;
    let (closed, quad) = if model.clt_regime() {
        (Some(chd_closed_form(&model)?.value), Some(chd_quadrature(&model)?.value))
    } else {
        (None, None)
    };
    let abs_err = closed.zip(quad).map(|(c, q)| (c - q).abs());
    let beta = a.beta.unwrap_or(1.0 / a.hurst - a.dim as f64);
    let riesz = if beta > 0.0 && beta < 2.0 {
        Some(riesz_constant(beta, a.dim)?)
    } else {
        None
    };
    let (lo, hi) = model.clt_bounds();
    let regime = if model.clt_regime() { "clt" } else { "outside_clt" };
    if a.json {
        let out = json!({
            "chd_closed": closed,
            "chd_quad": quad,
            "abs_err": abs_err,
            "riesz_c": riesz,
            "regime": regime,
        });
        println!("{out}");
    } else {
        let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.12}"));
        println!("H = {}, d = {}, CLT range ({lo:.6}, {hi:.6}): {regime}", a.hurst, a.dim);
        println!("C_Hd closed form  {}", show(closed));
        println!("C_Hd quadrature   {}", show(quad));
        println!("|difference|      {}", abs_err.map_or("undefined".into(), |x| format!("{x:.3e}")));
        println!("c_(beta={beta}, d)  {}", show(riesz));
    }
    Ok(0)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(a: &SimulateArgs) -> Result<u8> {
    let (model, cfg_seed) = match (&a.common.config, a.hurst, a.dim) {
        (Some(path), None, None) => {
            let cfg = ExperimentConfig::load(path)?;
            (cfg.model, cfg.seed)
        }
        (None, Some(h), Some(d)) => (HurstModel::new(h, d)?, 0),
        _ => {
            return Err(Error::Config(
                "simulate needs either --config or both --hurst and --dim".into(),
            ))
        }
    };
    let seed = a.common.seed.unwrap_or(cfg_seed);
    let grid = TimeGrid::new(a.dt, a.steps)?;
    let sampler = FbmSampler::new(model, grid)?;
    let mut stream = StreamFactory::new(seed).stream(stage::PATHS, a.index);
    let path = sampler.sample(&mut stream);
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    let contents = String::from_utf8(buf).expect("CSV is ASCII");
    match &a.common.out {
        None => print!("{contents}"),
        Some(dir) => {
            let echo = json!({"model": model, "grid": grid, "index": a.index, "sampler": format!("{:?}", sampler.kind())});
            let manifest = Manifest::new("simulate", seed, &echo)?;
            let file = ReportFile {
                name: "path.csv".into(),
                contents,
            };
            emit_report(dir, &[file], &[], manifest)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(0)
}

fn oracle(a: &RunArgs) -> Result<u8> {
    let path = a
        .common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("oracle needs --config".into()))?;
    let mut cfg: OracleConfig = read_json(path)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let factory = StreamFactory::new(cfg.seed);
    let estimate = match &cfg.f {
        Some(f) => clt_moment_target(&cfg.spec, &cfg.model, f, cfg.mc_samples, &factory)?,
        None => limit_moment(&cfg.spec, &cfg.model, cfg.mc_samples, &factory)?,
    };
    let text = serde_json::to_string(&estimate)?;
    println!("{text}");
    if let Some(dir) = &a.common.out {
        let manifest = Manifest::new("oracle", cfg.seed, &cfg)?;
        let file = ReportFile {
            name: "oracle.json".into(),
            contents: format!("{text}\n"),
        };
        emit_report(dir, &[file], &[], manifest)?;
    }
    Ok(0)
}

type Runner = fn(&ExperimentConfig) -> Result<Box<dyn Outcome + Send>>;

fn experiment(command: &str, a: &RunArgs, run: Runner) -> Result<u8> {
    let path = a
        .common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{command} needs --config")))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(out) = &a.common.out {
        cfg.output_dir = Some(out.clone());
    }
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let outcome = with_threads(a.common.threads, || run(&cfg))?;
    let manifest = Manifest::new(command, cfg.seed, &cfg)?;
    let files = outcome.files();
    emit_report(&dir, &files, outcome.checks(), manifest)?;
    for c in outcome.checks() {
        print_check(c);
    }
    println!("wrote {} files to {}", files.len() + 1, dir.display());
    Ok(if a.check && !outcome.all_passed() { 4 } else { 0 })
}

fn print_check(c: &Check) {
    let tag = if c.passed { "PASS" } else { "FAIL" };
    println!("{tag} {}: {}", c.name, c.detail);
}
