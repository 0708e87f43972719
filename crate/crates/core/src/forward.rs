//! Forward solve of the strong coagulation equation `mu' = K(mu, mu) / 2` on the grid.

use crate::error::{Error, Result};
use crate::kernels::{value_matrix, Kernel};
use crate::measures::{coag_raw, BoundFunction, GridMeasure, KernelMatrix};
use crate::ode::{integrate, IntegratorOptions, IntegratorStats};

/// Default checkpoint spacing, `2^-9`.
pub const DEFAULT_DT_CHECKPOINT: f64 = 1.0 / 512.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_checkpoint: f64,
    /// Abort when `(phi^{4+eps}, mu_t)` exceeds this.
    pub moment_ceiling: f64,
    /// Abort when the overflow number exceeds this fraction of `(1, mu_0)`.
    pub overflow_fraction_max: f64,
    pub epsilon: f64,
    pub max_step: Option<f64>,
    pub fixed_step: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            dt_checkpoint: DEFAULT_DT_CHECKPOINT,
            moment_ceiling: 1e12,
            overflow_fraction_max: 1e-9,
            epsilon: 0.5,
            max_step: None,
            fixed_step: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_checkpoint", self.dt_checkpoint),
            ("moment_ceiling", self.moment_ceiling),
            ("overflow_fraction_max", self.overflow_fraction_max),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0 (got {v})")));
            }
        }
        Ok(())
    }

    pub(crate) fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            fixed_step: self.fixed_step,
            ..Default::default()
        }
    }
}

/// A checkpointed solution `{mu_t}` on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub dt_checkpoint: f64,
    times: Vec<f64>,
    measures: Vec<GridMeasure>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, measures: Vec<GridMeasure>, stats: IntegratorStats) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(Error::invalid("trajectory needs matching, non-empty times and measures"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("checkpoint times must be strictly increasing"));
        }
        let n = measures[0].n_max();
        if let Some(m) = measures.iter().find(|m| m.n_max() != n) {
            return Err(Error::Dimension {
                expected: n,
                found: m.n_max(),
            });
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Trajectory {
            t0: times[0],
            t1: *times.last().unwrap(),
            dt_checkpoint: dt,
            times,
            measures,
            stats,
        })
    }

    pub fn n_max(&self) -> usize {
        self.measures[0].n_max()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[GridMeasure] {
        &self.measures
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &GridMeasure {
        self.measures.last().unwrap()
    }

    /// Index of the checkpoint at time `t`, if `t` sits on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.dt_checkpoint.max(f64::MIN_POSITIVE);
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    /// Measure at the checkpoint nearest to `t` on the grid, else `None`.
    pub fn at_checkpoint(&self, t: f64) -> Option<&GridMeasure> {
        self.index_of(t).map(|i| &self.measures[i])
    }

    /// Piecewise-linear interpolation in `t` between checkpoints.
    pub fn at(&self, t: f64) -> Result<GridMeasure> {
        if t < self.t0 - 1e-12 || t > self.t1 + 1e-12 {
            return Err(Error::invalid(format!(
                "t = {t} outside trajectory window [{}, {}]",
                self.t0, self.t1
            )));
        }
        if let Some(i) = self.index_of(t) {
            return Ok(self.measures[i].clone());
        }
        let i = self.times.partition_point(|&s| s <= t).clamp(1, self.len() - 1);
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let w = (t - ta) / (tb - ta);
        let mut out = self.measures[i - 1].scaled(1.0 - w);
        out.axpy(w, &self.measures[i])?;
        Ok(out)
    }
}

/// Uniform checkpoint grid on `[t0, t1]` whose spacing is at most `dt`.
pub fn checkpoint_times(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t1 > t0) {
        return Err(Error::invalid(format!("time window must satisfy t1 > t0 (got [{t0}, {t1}])")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("checkpoint spacing must be > 0"));
    }
    let span = t1 - t0;
    let k = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..k).map(|i| t0 + span * i as f64 / k as f64).collect();
    times.push(t1);
    Ok(times)
}

/// `K(mu, mu) / 2`.
pub fn rhs(mu: &GridMeasure, kernel: &KernelMatrix) -> Result<GridMeasure> {
    let mut out = GridMeasure::zeros(mu.n_max());
    crate::measures::coag_accumulate(kernel, mu, mu, 0.5, &mut out)?;
    Ok(out)
}

/// Block layout shared by forward and coupled state vectors: `n` weights,
/// then the overflow mass and number.
#[inline]
pub(crate) fn block_len(n: usize) -> usize {
    n + 2
}

pub(crate) fn to_block(m: &GridMeasure, out: &mut [f64]) {
    let n = m.n_max();
    out[..n].copy_from_slice(m.weights());
    out[n] = m.overflow_mass;
    out[n + 1] = m.overflow_number;
}

pub(crate) fn from_block(b: &[f64]) -> GridMeasure {
    let n = b.len() - 2;
    GridMeasure::from_parts(b[..n].to_vec(), b[n], b[n + 1])
}

/// `out_block += scale * F(a, b)` on raw blocks.
pub(crate) fn coag_block(k: &KernelMatrix, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let n = k.n_max();
    let (_, om, on) = coag_raw(k, &a[..n], &b[..n], scale, &mut out[..n]);
    out[n] += om;
    out[n + 1] += on;
}

/// Per-step guard for the `mu` block: clamps roundoff negatives, rejects
/// larger ones, and trips the moment and overflow blow-up detectors.
pub(crate) struct ForwardGuard {
    moment_table: Vec<f64>,
    moment_ceiling: f64,
    overflow_limit: f64,
    clamp_floor: f64,
}

impl ForwardGuard {
    pub(crate) fn new(mu0: &GridMeasure, phi: &BoundFunction, opts: &SolveOptions) -> Self {
        let n0 = mu0.number();
        ForwardGuard {
            moment_table: phi.table(mu0.n_max(), 4.0 + opts.epsilon),
            moment_ceiling: opts.moment_ceiling,
            overflow_limit: if n0 > 0.0 {
                opts.overflow_fraction_max * n0
            } else {
                f64::INFINITY
            },
            clamp_floor: -10.0 * opts.abs_tol,
        }
    }

    pub(crate) fn check(&self, t: f64, block: &mut [f64]) -> Result<()> {
        let n = self.moment_table.len();
        let mut moment = 0.0;
        for (k, w) in block[..n].iter_mut().enumerate() {
            if *w < 0.0 {
                if *w < self.clamp_floor {
                    return Err(Error::Negativity {
                        time: t,
                        mass: k + 1,
                        weight: *w,
                    });
                }
                *w = 0.0;
            }
            moment += self.moment_table[k] * *w;
        }
        if !(moment <= self.moment_ceiling) {
            return Err(Error::BlowUp {
                time: t,
                reason: format!(
                    "(phi^(4+eps), mu_t) = {moment:e} exceeds ceiling {:e}",
                    self.moment_ceiling
                ),
            });
        }
        if block[n + 1] > self.overflow_limit {
            return Err(Error::BlowUp {
                time: t,
                reason: format!(
                    "overflow number {:e} exceeds limit {:e}",
                    block[n + 1],
                    self.overflow_limit
                ),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_initial(mu0: &GridMeasure) -> Result<()> {
    if !mu0.is_finite() {
        return Err(Error::invalid("initial measure has non-finite entries"));
    }
    if !mu0.is_nonnegative() {
        return Err(Error::invalid("initial measure must be non-negative"));
    }
    Ok(())
}

/// Solve `mu' = K(mu, mu) / 2` on `[0, horizon]` with checkpoints every
/// `opts.dt_checkpoint`.
pub fn solve_forward(
    mu0: &GridMeasure,
    kernel: &dyn Kernel,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    check_initial(mu0)?;
    let n = mu0.n_max();
    let times = checkpoint_times(0.0, horizon, opts.dt_checkpoint)?;
    let kmat = value_matrix(kernel, n);
    let guard = ForwardGuard::new(mu0, kernel.phi(), opts);
    let mut y0 = vec![0.0; block_len(n)];
    to_block(mu0, &mut y0);
    let (states, stats) = integrate(
        &y0,
        &times,
        |_, y, dy| {
            dy.fill(0.0);
            coag_block(&kmat, y, y, 0.5, dy);
        },
        &opts.integrator(),
        |t, y| guard.check(t, y),
    )?;
    let measures = states.iter().map(|b| from_block(b)).collect();
    Trajectory::new(times, measures, stats)
}

/// Moments `(phi^p, mu_t)` per checkpoint with running maxima.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentsReport {
    pub powers: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j]` = `(phi^{powers[j]}, mu_{times[i]})`.
    pub values: Vec<Vec<f64>>,
    /// Running maximum over checkpoints `<= times[i]`; the last row is the
    /// observed `C(T)` per power.
    pub running_max: Vec<Vec<f64>>,
}

pub fn moments_report(traj: &Trajectory, phi: &BoundFunction, powers: &[f64]) -> Result<MomentsReport> {
    if let Some(p) = powers.iter().find(|p| !(0.0..=8.0).contains(*p)) {
        return Err(Error::invalid(format!("moment power {p} outside [0, 8]")));
    }
    let n = traj.n_max();
    let tables: Vec<Vec<f64>> = powers.iter().map(|&p| phi.table(n, p)).collect();
    let mut values = Vec::with_capacity(traj.len());
    let mut running_max: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
    let mut current = vec![f64::NEG_INFINITY; powers.len()];
    for mu in traj.measures() {
        let row: Vec<f64> = tables
            .iter()
            .map(|t| crate::measures::dot(t, mu.weights()))
            .collect();
        for (c, v) in current.iter_mut().zip(&row) {
            *c = c.max(*v);
        }
        values.push(row);
        running_max.push(current.clone());
    }
    Ok(MomentsReport {
        powers: powers.to_vec(),
        times: traj.times().to_vec(),
        values,
        running_max,
    })
}
