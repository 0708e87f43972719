//! `smolsens` batch runner: config parsing, scenario dispatch, artifacts.
//!
//! Exit status: 0 all checks pass, 1 an internal check failed, 2 schema or
//! usage error, 3 kernel hypotheses fail, 4 the forward solution blew up.

pub mod config;
pub mod runner;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use smolsens::io::{fmt_f64, parse_trajectory};
use smolsens::validation::hypothesis_check;
use smolsens::{BoundFunction, Kernel, Trajectory};

use config::{parse_config, RunConfig};
use runner::{sha256_hex, Artifacts};

pub const OUTDIR_ENV: &str = "SMOLSENS_OUTDIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Hypothesis(String),
    #[error("{0}")]
    BlowUp(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::BlowUp(_) => 4,
            CliError::Check(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<smolsens::Error> for CliError {
    fn from(e: smolsens::Error) -> Self {
        use smolsens::Error as E;
        let msg = e.to_string();
        match e {
            E::BlowUp { .. } | E::StepUnderflow { .. } => CliError::BlowUp(msg),
            E::Hypothesis(_) => CliError::Hypothesis(msg),
            E::Spec(_) | E::ParamBox { .. } | E::Dimension { .. } | E::InvalidArgument(_) | E::Parse { .. } => {
                CliError::Schema(msg)
            }
            _ => CliError::Internal(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smolsens", version, about = "Coagulation sensitivities: solver, propagator and particle estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides SMOLSENS_OUTDIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the stochastic seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of checkpoint intervals on [0, horizon].
        #[arg(long)]
        checkpoints: Option<usize>,
    },
    /// Per-checkpoint weighted distances between two runs' trajectories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Norm exponent p in sum |w_k| phi(k)^p.
        #[arg(long, default_value_t = 1.0)]
        norm: f64,
        /// Scale of phi(x) = scale (1 + x).
        #[arg(long, default_value_t = 1.0)]
        phi_scale: f64,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schema-check a config and report the kernel hypotheses.
    Validate { config: PathBuf },
}

/// Parse `args` and execute; returns the process exit code.
pub fn main_entry<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            checkpoints,
        } => run(&config, out, seed, checkpoints).map(|_| ()),
        Command::Compare {
            dir_a,
            dir_b,
            norm,
            phi_scale,
            out,
        } => compare(&dir_a, &dir_b, norm, phi_scale, out.as_deref()).map(|table| print!("{table}")),
        Command::Validate { config } => validate(&config).map(|report| print!("{report}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("smolsens: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path) -> Result<(String, RunConfig), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    Ok((text, cfg))
}

/// `--out`, then `SMOLSENS_OUTDIR`, then the config, then `smolsens-out`.
pub fn resolve_outdir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTDIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("smolsens-out"))
}

/// Summary of a completed `run`.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub passed: bool,
    pub summary: Value,
}

pub fn run(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    checkpoints: Option<usize>,
) -> Result<RunReport, CliError> {
    let (text, mut cfg) = load_config(path)?;
    if let Some(s) = seed {
        cfg.stochastic.seed = s;
    }
    if let Some(k) = checkpoints {
        cfg.set_checkpoints(k).map_err(|e| CliError::Schema(e.to_string()))?;
    }
    let kernel = cfg.kernel.build()?;
    let hyp = hypothesis_check(&kernel, &cfg.initial, cfg.solver.epsilon);
    if !hyp.passed() {
        return Err(CliError::Hypothesis(format!("hypothesis check failed\n{hyp}")));
    }

    let out_dir = resolve_outdir(out, &cfg);
    let mut art = Artifacts::new(&out_dir)?;
    let started = Instant::now();
    let outcome = runner::execute(&cfg, &kernel, &mut art)?;
    let wall = started.elapsed().as_secs_f64();
    let passed = outcome.passed();

    let summary = json!({
        "scenario": cfg.scenario.name(),
        "family": kernel.family().name(),
        "lambda": kernel.params(),
        "n_max": cfg.n_max,
        "horizon": cfg.horizon,
        "phi_scale": cfg.kernel.phi_scale,
        "passed": passed,
        "headline": Value::Object(outcome.headline.clone()),
        "checks": outcome.checks.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
    });
    let summary_text = serde_json::to_string_pretty(&summary).expect("json") + "\n";
    art.write("summary.json", |w| {
        w.extend_from_slice(summary_text.as_bytes());
        Ok(())
    })?;

    let mut report = String::new();
    for c in &outcome.checks {
        report += &format!(
            "{} {} value={} limit={}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            fmt_f64(c.value),
            fmt_f64(c.limit)
        );
    }
    for n in &outcome.notes {
        report += &format!("NOTE {n}\n");
    }
    art.write("report.txt", |w| {
        w.extend_from_slice(report.as_bytes());
        Ok(())
    })?;

    let manifest = json!({
        "config_path": path.display().to_string(),
        "config_sha256": sha256_hex(text.as_bytes()),
        "scenario": cfg.scenario.name(),
        "seed": cfg.stochastic.seed,
        "dt_checkpoint": cfg.solver.dt_checkpoint,
        "versions": { "smolsens": smolsens::VERSION, "smolsens-cli": env!("CARGO_PKG_VERSION") },
        "wall_time_s": wall,
        "artifacts": art.written.iter().map(|(name, hash, bytes)| json!({
            "file": name, "sha256": hash, "bytes": bytes,
        })).collect::<Vec<_>>(),
    });
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("json") + "\n";
    fs::write(out_dir.join("manifest.json"), manifest_text)
        .map_err(|e| CliError::Internal(format!("cannot write manifest: {e}")))?;

    eprint!("{report}");
    if !passed {
        let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(CliError::Check(format!("internal checks failed: {}", failed.join(", "))));
    }
    Ok(RunReport {
        out_dir,
        passed,
        summary,
    })
}

pub fn validate(path: &Path) -> Result<String, CliError> {
    let (_, cfg) = load_config(path)?;
    let kernel = cfg.kernel.build()?;
    let hyp = hypothesis_check(&kernel, &cfg.initial, cfg.solver.epsilon);
    if hyp.passed() {
        Ok(format!("schema ok: scenario {}\n{hyp}", cfg.scenario.name()))
    } else {
        Err(CliError::Hypothesis(format!("hypothesis check failed\n{hyp}")))
    }
}

fn load_trajectory(dir: &Path) -> Result<Trajectory, CliError> {
    let path = dir.join("trajectory.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    parse_trajectory(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// `t,distance` rows over the checkpoints common to both runs.
pub fn compare(dir_a: &Path, dir_b: &Path, p: f64, phi_scale: f64, out: Option<&Path>) -> Result<String, CliError> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(CliError::Schema(format!("--norm must be finite and >= 0 (got {p})")));
    }
    if !(phi_scale >= 1.0 && phi_scale.is_finite()) {
        return Err(CliError::Schema(format!("--phi-scale must be >= 1 (got {phi_scale})")));
    }
    let a = load_trajectory(dir_a)?;
    let b = load_trajectory(dir_b)?;
    if a.n_max() != b.n_max() {
        return Err(CliError::Schema(format!(
            "incompatible grids: n_max {} vs {}",
            a.n_max(),
            b.n_max()
        )));
    }
    let table = BoundFunction::linear(phi_scale).table(a.n_max(), p);
    let mut csv = String::from("t,distance\n");
    let mut rows = 0;
    let mut j = 0;
    for (i, &t) in a.times().iter().enumerate() {
        while j < b.len() && b.times()[j] < t && !same_time(b.times()[j], t) {
            j += 1;
        }
        if j < b.len() && same_time(b.times()[j], t) {
            let d = a.measures()[i].sub(&b.measures()[j])?.norm_weighted(&table);
            csv += &format!("{},{}\n", fmt_f64(t), fmt_f64(d));
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(CliError::Schema("the two runs share no checkpoint times".into()));
    }
    if let Some(path) = out {
        fs::write(path, &csv).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(csv)
}
