//! Scenario execution. Each scenario writes its CSV artifacts and returns
//! headline scalars plus the pass/fail checks that decide the exit status.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use smolsens::forward::moments_report;
use smolsens::io as csv;
use smolsens::io::RouteRow;
use smolsens::propagator::{DualContext, DuhamelOptions};
use smolsens::sensitivity::{solve_coupled, SensitivityPath};
use smolsens::stochastic::{coupled_fd_sensitivity, ml_ensemble, CI_Z};
use smolsens::validation::{
    analytic_constant_kernel, analytic_sensitivity_constant, curly_bound_violations, fd_oracle,
    kolokoltsov_tv_check, sensitivity_rates, time_derivative_residual, truncation_sweep,
    ConvergenceTable,
};
use smolsens::{
    solve_forward, GridMeasure, Kernel, KernelFamily, ParametricKernel, TestFunction, Trajectory,
};

use crate::config::{RunConfig, Scenario};
use crate::CliError;

/// One scenario-internal check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= limit`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "name": self.name, "value": self.value, "limit": self.limit, "pass": self.pass })
    }
}

/// Files written into the run directory, with their digests.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    pub written: Vec<(String, String, usize)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::Internal(e.to_string()))?;
        let path = self.dir.join(name);
        fs::write(&path, &buf).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        self.written.push((name.to_string(), sha256_hex(&buf), buf.len()));
        Ok(())
    }
}

/// Result of a scenario.
#[derive(Debug, Default)]
pub struct Outcome {
    pub headline: Map<String, Value>,
    pub checks: Vec<Check>,
    /// Free-form lines for `report.txt`.
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn put(&mut self, key: &str, v: impl Into<Value>) {
        self.headline.insert(key.to_string(), v.into());
    }
}

fn is_unit_monodisperse(cfg: &RunConfig) -> bool {
    cfg.initial == GridMeasure::delta(cfg.n_max, 1, 1.0)
}

fn forward_checks(traj: &Trajectory, mu0: &GridMeasure) -> Vec<Check> {
    let mut negative = 0usize;
    let mut increase: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let m0 = mu0.mass();
    for (i, (t, mu)) in traj.times().iter().zip(traj.measures()).enumerate() {
        negative += mu.weights().iter().filter(|&&w| w < 0.0).count();
        if i > 0 {
            increase = increase.max(mu.number() - traj.measures()[i - 1].number());
        }
        let d = (mu.mass() + mu.overflow_mass - m0).abs() / m0;
        drift = drift.max(if *t > 0.0 { d / t } else { d });
    }
    vec![
        Check::at_most("negative_weights", negative as f64, 0.0),
        Check::at_most("number_increase", increase, 0.0),
        Check::at_most("relative_mass_drift_per_unit_time", drift, 1e-10),
    ]
}

fn forward_headline(out: &mut Outcome, traj: &Trajectory, cfg: &RunConfig) {
    let mu = traj.last();
    let phi = cfg.kernel.phi();
    out.put("number_T", mu.number());
    out.put("mass_T", mu.mass());
    out.put("overflow_mass_T", mu.overflow_mass);
    out.put("overflow_number_T", mu.overflow_number);
    out.put("norm_2eps_T", mu.norm_p(2.0 + cfg.solver.epsilon, &phi));
    out.put("checkpoints", traj.len());
}

fn sensitivity_checks(sens: &SensitivityPath) -> Check {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for b in sens.blocks() {
        for c in &b.components {
            worst = worst.max((c.mass() + c.overflow_mass).abs());
            scale = scale.max(c.total_variation());
        }
    }
    Check::at_most("sensitivity_mass_balance", worst / scale, 1e-9)
}

fn sensitivity_headline(out: &mut Outcome, sens: &SensitivityPath, cfg: &RunConfig) {
    let phi = cfg.kernel.phi();
    let last = sens.last();
    out.put("sigma_norm1_T", last.norms(1.0, &phi));
    out.put(
        "sigma_number_T",
        last.components.iter().map(|c| c.number()).collect::<Vec<f64>>(),
    );
}

fn analytic_checks(cfg: &RunConfig, traj: &Trajectory, sens: Option<&SensitivityPath>) -> Result<Vec<Check>, CliError> {
    if cfg.kernel.family != KernelFamily::Constant || !is_unit_monodisperse(cfg) {
        return Ok(Vec::new());
    }
    let lam = cfg.kernel.lambda[0];
    let t = cfg.horizon;
    let exact = analytic_constant_kernel(cfg.n_max, t, lam)?;
    let mut checks = vec![Check::at_most(
        "analytic_forward_max_abs",
        traj.last().max_abs_diff(&exact)?,
        1e-8,
    )];
    if let Some(sens) = sens {
        if lam > 0.0 {
            let exact = analytic_sensitivity_constant(cfg.n_max, t, lam)?;
            let gap = sens.last().component(0).sub(&exact)?.total_variation();
            checks.push(Check::at_most("analytic_sensitivity_tv", gap, 1e-6));
        }
    }
    Ok(checks)
}

/// `(sigma^(m)_t)` by linear interpolation between checkpoints.
fn sigma_at(traj: &Trajectory, sens: &SensitivityPath, m: usize, t: f64) -> Result<GridMeasure, CliError> {
    let times = traj.times();
    if let Some(i) = traj.index_of(t) {
        return Ok(sens.blocks()[i].component(m).clone());
    }
    let i = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
    let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    let mut out = sens.blocks()[i - 1].component(m).scaled(1.0 - w);
    out.axpy(w, sens.blocks()[i].component(m))?;
    Ok(out)
}

fn route_rows(
    cfg: &RunConfig,
    traj: &Trajectory,
    sens: &SensitivityPath,
    kernel: &ParametricKernel,
    times: &[f64],
) -> Result<Vec<RouteRow>, CliError> {
    let ctx = DualContext::new(traj, kernel)?;
    let p = kernel.param_dim();
    let mut rows = Vec::new();
    for &t in times {
        let i = traj.index_of(t).ok_or_else(|| {
            CliError::Schema(format!("representation time {t} is not a checkpoint of the solve grid"))
        })?;
        for (id, f) in &cfg.representation.functions {
            let rep = ctx.representation(f, t)?;
            for (m, r) in rep.into_iter().enumerate() {
                rows.push(RouteRow {
                    t: traj.times()[i],
                    f_id: if p == 1 { id.clone() } else { format!("{id}[{m}]") },
                    direct: sens.blocks()[i].component(m).pair(f)?,
                    representation: r,
                });
            }
        }
    }
    Ok(rows)
}

fn convergence_checks(table: &ConvergenceTable, cfg: &RunConfig) -> Vec<Check> {
    let increases = table
        .rows
        .windows(2)
        .filter(|w| w[1].err_mu > w[0].err_mu || w[1].err_sigma > w[0].err_sigma)
        .count();
    let mut checks = vec![Check::at_most("convergence_increases", increases as f64, 0.0)];
    let top = cfg.kernel.phi().eval(cfg.n_max as u64).powi(2);
    let last = table.rows.last().expect("levels are non-empty");
    if last.level >= top {
        checks.push(Check::at_most("inactive_level_err_mu", last.err_mu, 1e-8));
        checks.push(Check::at_most("inactive_level_err_sigma", last.err_sigma, 1e-8));
    }
    checks
}

pub fn execute(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    match cfg.scenario {
        Scenario::Forward => forward(cfg, kernel, art),
        Scenario::Sensitivity => sensitivity(cfg, kernel, art),
        Scenario::Representation => representation(cfg, kernel, art),
        Scenario::Truncation => truncation(cfg, kernel, art),
        Scenario::Mlsim => mlsim(cfg, kernel, art),
        Scenario::CoupledFd => coupled_fd(cfg, kernel, art),
        Scenario::ValidateAll => validate_all(cfg, kernel, art),
    }
}

fn forward(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let traj = solve_forward(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    art.write("trajectory.csv", |w| csv::write_trajectory(w, &traj))?;
    let eps = cfg.solver.epsilon;
    let moments = moments_report(&traj, kernel.phi(), &[0.0, 1.0, 2.0, 2.0 + eps, 4.0 + eps])?;
    art.write("moments.csv", |w| csv::write_moments(w, &moments))?;
    let mut out = Outcome::default();
    forward_headline(&mut out, &traj, cfg);
    out.put("moment_4eps_max", *moments.running_max.last().unwrap().last().unwrap());
    out.checks = forward_checks(&traj, &cfg.initial);
    out.checks.extend(analytic_checks(cfg, &traj, None)?);
    Ok(out)
}

fn sensitivity(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let (traj, sens) = solve_coupled(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    art.write("trajectory.csv", |w| csv::write_trajectory(w, &traj))?;
    art.write("sensitivity.csv", |w| csv::write_sensitivity(w, &sens))?;
    let mut out = Outcome::default();
    forward_headline(&mut out, &traj, cfg);
    sensitivity_headline(&mut out, &sens, cfg);
    out.checks = forward_checks(&traj, &cfg.initial);
    out.checks.push(sensitivity_checks(&sens));
    out.checks.extend(analytic_checks(cfg, &traj, Some(&sens))?);
    Ok(out)
}

fn representation(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let (traj, sens) = solve_coupled(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    let rows = route_rows(cfg, &traj, &sens, kernel, &cfg.representation.times)?;
    art.write("trajectory.csv", |w| csv::write_trajectory(w, &traj))?;
    art.write("sensitivity.csv", |w| csv::write_sensitivity(w, &sens))?;
    art.write("routes.csv", |w| csv::write_routes(w, &rows))?;
    let worst = rows.iter().map(RouteRow::abs_diff).fold(0.0, f64::max);
    let mut out = Outcome::default();
    sensitivity_headline(&mut out, &sens, cfg);
    out.put("route_max_abs_diff", worst);
    out.put("route_rows", rows.len());
    out.checks = vec![Check::at_most("route_max_abs_diff", worst, cfg.representation.tolerance)];
    Ok(out)
}

fn truncation(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let table = truncation_sweep(kernel, &cfg.initial, cfg.horizon, &cfg.truncation_levels, &cfg.solver)?;
    art.write("convergence.csv", |w| csv::write_convergence(w, &table))?;
    let mut out = Outcome::default();
    out.put("levels", table.rows.iter().map(|r| r.level).collect::<Vec<f64>>());
    out.put("err_mu", table.rows.iter().map(|r| r.err_mu).collect::<Vec<f64>>());
    out.put("err_sigma", table.rows.iter().map(|r| r.err_sigma).collect::<Vec<f64>>());
    out.checks = convergence_checks(&table, cfg);
    Ok(out)
}

fn mlsim(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let st = &cfg.stochastic;
    let (runs, summary) = ml_ensemble(&cfg.initial, st.n, kernel, &st.observe, st.seed, st.replicas)?;
    let reference = solve_forward(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    art.write("stochastic.csv", |w| csv::write_stochastic(w, &csv::replica_paths(&runs), &summary))?;
    let mean_traj = Trajectory::new(st.observe.clone(), summary.mean.clone(), Default::default())?;
    art.write("trajectory.csv", |w| csv::write_trajectory(w, &mean_traj))?;

    let m0 = runs[0].measures[0].mass() + runs[0].measures[0].overflow_mass;
    let mut mass_dev: f64 = 0.0;
    for r in &runs {
        for m in &r.measures {
            mass_dev = mass_dev.max((m.mass() + m.overflow_mass - m0).abs() / m0);
        }
    }
    let mut per_time = Vec::new();
    for (i, &t) in st.observe.iter().enumerate() {
        let xs: Vec<f64> = runs.iter().map(|r| r.measures[i].number()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        let det = reference.at(t)?.number();
        per_time.push(json!({
            "t": t, "number_mean": mean, "number_stderr": se, "deterministic": det,
            "within_3_stderr": (mean - det).abs() <= 3.0 * se,
        }));
    }
    let mut out = Outcome::default();
    out.put("n_eff", runs[0].n_eff);
    out.put("census_residual", runs[0].census_residual);
    out.put("replicas", runs.len());
    out.put("mean_jumps", runs.iter().map(|r| r.jumps as f64).sum::<f64>() / runs.len() as f64);
    out.put("number_vs_deterministic", Value::Array(per_time));
    out.checks = vec![Check::at_most("particle_mass_deviation", mass_dev, 1e-12)];
    Ok(out)
}

fn coupled_fd(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let st = &cfg.stochastic;
    let est = coupled_fd_sensitivity(&cfg.initial, st.n, kernel, st.param, st.h, &st.observe, st.seed, st.replicas)?;
    let (traj, sens) = solve_coupled(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    let paths: Vec<&[GridMeasure]> = est.per_replica.iter().map(|r| r.as_slice()).collect();
    art.write("stochastic.csv", |w| csv::write_stochastic(w, &paths, &est.summary))?;
    art.write("sensitivity.csv", |w| csv::write_sensitivity(w, &sens))?;
    let ivs = est.functional(&TestFunction::constant(cfg.n_max, 1.0))?;
    let mut per_time = Vec::new();
    let mut missed = 0usize;
    for (iv, &t) in ivs.iter().zip(&st.observe) {
        let direct = sigma_at(&traj, &sens, st.param, t)?.number();
        let covered = iv.covers(direct);
        missed += !covered as usize;
        per_time.push(json!({
            "t": t, "estimate": iv.mean, "stderr": iv.stderr, "lo": iv.lo, "hi": iv.hi,
            "direct": direct, "covered": covered,
        }));
    }
    let mut out = Outcome::default();
    out.put("param", st.param);
    out.put("h", st.h);
    out.put("z", CI_Z);
    out.put("number_sensitivity", Value::Array(per_time));
    out.checks = vec![Check::at_most("ci_misses", missed as f64, 0.0)];
    Ok(out)
}

fn validate_all(cfg: &RunConfig, kernel: &ParametricKernel, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let (traj, sens) = solve_coupled(&cfg.initial, kernel, cfg.horizon, &cfg.solver)?;
    let mut out = Outcome::default();
    out.checks = forward_checks(&traj, &cfg.initial);
    out.checks.push(sensitivity_checks(&sens));
    out.checks.extend(analytic_checks(cfg, &traj, Some(&sens))?);
    let p = kernel.param_dim();
    let phi = kernel.phi();
    let n = cfg.n_max;

    // finite-difference oracle, where the box leaves room
    let table1 = phi.table(n, 1.0);
    for m in 0..p {
        let (lo, hi) = kernel.param_box()[m];
        let lam = kernel.params()[m];
        let h = 1e-3 * lam.abs().max(1.0);
        if lam - h < lo || lam + h > hi {
            out.notes.push(format!("fd oracle for parameter {m} skipped: lambda +- {h} leaves the box"));
            continue;
        }
        // central differences at h and h/2, Richardson-combined to O(h^4)
        let (coarse, fine) = (
            fd_oracle(kernel, &cfg.initial, m, h, cfg.horizon, &cfg.solver)?,
            fd_oracle(kernel, &cfg.initial, m, h / 2.0, cfg.horizon, &cfg.solver)?,
        );
        let sigma = sens.component_path(m);
        let (mut raw, mut gap, mut scale) = (0.0f64, 0.0f64, 1.0f64);
        for ((c, f), s) in coarse.iter().zip(&fine).zip(&sigma) {
            let mut rich = f.scaled(4.0 / 3.0);
            rich.axpy(-1.0 / 3.0, c)?;
            raw = raw.max(f.sub(s)?.norm_weighted(&table1));
            gap = gap.max(rich.sub(s)?.norm_weighted(&table1));
            scale = scale.max(s.norm_weighted(&table1));
        }
        out.put(&format!("fd_oracle_raw_rel_gap[{m}]"), raw / scale);
        out.checks.push(Check::at_most(format!("fd_oracle_rel_gap[{m}]"), gap / scale, 1e-6));
    }

    // representation route at the horizon and at mid-window
    let mid = traj.times()[traj.len() / 2];
    let rows = route_rows(cfg, &traj, &sens, kernel, &[mid, cfg.horizon])?;
    let worst = rows.iter().map(RouteRow::abs_diff).fold(0.0, f64::max);
    out.checks.push(Check::at_most("route_max_abs_diff", worst, cfg.representation.tolerance));

    // propagator: norm bound, cocycle, Duhamel against the backward ODE
    let ctx = DualContext::new(&traj, kernel)?;
    let h = phi.table(n, 1.0);
    let h_norm = |f: &TestFunction| f.values().iter().zip(&h).map(|(v, w)| v.abs() / w).fold(0.0, f64::max);
    let bound = ctx.series_bound(&h, 0.0, cfg.horizon)?;
    let (mut norm_viol, mut series_viol, mut duhamel, mut cocycle) = (0usize, 0usize, 0.0f64, 0.0f64);
    for f in [TestFunction::constant(n, 1.0), TestFunction::phi_power(n, phi, 1.0)] {
        let ode = ctx.solve_backward(&f, cfg.horizon, 0.0)?;
        norm_viol += ode.norm0.iter().zip(&ode.bound0).filter(|(a, b)| a > b).count();
        let dh = ctx.solve_backward_duhamel(&f, cfg.horizon, 0.0, &DuhamelOptions::default())?;
        duhamel = duhamel.max(ode.first().sub(dh.first())?.sup_norm() / f.sup_norm());
        let fh = h_norm(&f);
        series_viol += dh
            .times()
            .iter()
            .zip(dh.values())
            .filter(|(s, v)| h_norm(v) > bound.factor(cfg.horizon - **s) * fh * (1.0 + 1e-12))
            .count();
        cocycle = cocycle.max(ctx.cocycle_check(0.0, mid, cfg.horizon, &f)?);
    }
    out.checks.push(Check::at_most("norm_bound_violations", norm_viol as f64, 0.0));
    out.checks.push(Check::at_most("series_bound_violations", series_viol as f64, 0.0));
    out.checks.push(Check::at_most("duhamel_rel_gap", duhamel, 1e-6));
    out.checks.push(Check::at_most("cocycle_residual", cocycle, 1e-7));

    // total-variation identity on each sensitivity component
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stochastic.seed);
    let probes: Vec<TestFunction> = (0..8)
        .map(|_| TestFunction::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite"))
        .collect();
    let (mut tv, mut sign) = (0.0f64, 0.0f64);
    for m in 0..p {
        let rates = sensitivity_rates(&traj, &sens, kernel, m)?;
        let rep = kolokoltsov_tv_check(traj.times(), &sens.component_path(m), &rates, &probes)?;
        tv = tv.max(rep.max_residual);
        sign = sign.max(rep.max_sign_residual);
    }
    out.checks.push(Check::at_most("tv_identity_residual", tv, 1e-6));
    out.checks.push(Check::at_most("sign_identity_residual", sign, 0.0));

    // time regularity: the centred-difference residual is second order
    if traj.len() >= 9 {
        let fine = time_derivative_residual(&traj, kernel, cfg.solver.epsilon)?;
        let idx: Vec<usize> = (0..traj.len()).step_by(2).collect();
        if *idx.last().unwrap() == traj.len() - 1 {
            let coarse_traj = Trajectory::new(
                idx.iter().map(|&i| traj.times()[i]).collect(),
                idx.iter().map(|&i| traj.measures()[i].clone()).collect(),
                Default::default(),
            )?;
            let coarse = time_derivative_residual(&coarse_traj, kernel, cfg.solver.epsilon)?;
            let ratio = coarse / fine;
            out.put("time_derivative_residual", fine);
            out.put("time_derivative_ratio", ratio);
            if fine > 1e-9 {
                out.checks.push(Check::at_most("time_derivative_ratio_dev", (ratio - 4.0).abs(), 0.5));
            }
        }
    }

    // curly-bracket bound on random f
    let mut viol = 0usize;
    for pw in [1.0, 2.0, 3.0] {
        for _ in 0..100 {
            let growth = rng.gen_range(0.0..pw);
            let v: Vec<f64> = (1..=n as u64)
                .map(|x| rng.gen_range(-1.0..1.0) * phi.eval(x).powf(growth))
                .collect();
            viol += curly_bound_violations(&TestFunction::new(v).expect("finite"), phi, pw);
        }
    }
    out.checks.push(Check::at_most("curly_bound_violations", viol as f64, 0.0));

    let table = truncation_sweep(kernel, &cfg.initial, cfg.horizon, &cfg.truncation_levels, &cfg.solver)?;
    out.checks.extend(convergence_checks(&table, cfg));

    art.write("trajectory.csv", |w| csv::write_trajectory(w, &traj))?;
    art.write("sensitivity.csv", |w| csv::write_sensitivity(w, &sens))?;
    art.write("routes.csv", |w| csv::write_routes(w, &rows))?;
    art.write("convergence.csv", |w| csv::write_convergence(w, &table))?;
    forward_headline(&mut out, &traj, cfg);
    sensitivity_headline(&mut out, &sens, cfg);
    out.put("route_max_abs_diff", worst);
    out.put("duhamel_rel_gap", duhamel);
    out.put("tv_identity_residual", tv);
    Ok(out)
}
