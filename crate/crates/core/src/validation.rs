//! Oracles and diagnostics that are independent of the solvers they check:
//! closed forms for the constant kernel, central finite differences of
//! forward runs, truncation sweeps, hypothesis reports, the total-variation
//! identity and the curly-bracket bound.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{
    block_len, check_initial, checkpoint_times, coag_block, from_block, solve_forward, to_block,
    ForwardGuard, SolveOptions, Trajectory,
};
use crate::kernels::{
    bound_breaches, find_asymmetry, partial_matrix, truncate, value_matrix, AtParams, BoundBreach,
    Kernel,
};
use crate::measures::{
    coag_accumulate, curly, sign_density, BoundFunction, BoundViolation, GridMeasure, TestFunction,
};
use crate::ode::integrate;
use crate::sensitivity::{solve_coupled, SensitivityPath};

fn check_constant_args(t: f64, lam: f64) -> Result<()> {
    if !(t >= 0.0) || !(lam > 0.0) || !t.is_finite() || !lam.is_finite() {
        return Err(Error::invalid(format!("need t >= 0 and lambda > 0 (got t = {t}, lambda = {lam})")));
    }
    Ok(())
}

/// `c_k(t) = a^{k-1} / (1 + a)^{k+1}`, `a = lambda t / 2`, for `mu_0 = delta_1`
/// and `K = lambda`, restricted to the grid.
pub fn analytic_constant_kernel(n_max: usize, t: f64, lam: f64) -> Result<GridMeasure> {
    check_constant_args(t, lam)?;
    let a = lam * t / 2.0;
    let w = (1..=n_max as i32)
        .map(|k| a.powi(k - 1) / (1.0 + a).powi(k + 1))
        .collect();
    GridMeasure::from_weights(w)
}

/// `d c_k / d lambda` of [`analytic_constant_kernel`].
pub fn analytic_sensitivity_constant(n_max: usize, t: f64, lam: f64) -> Result<GridMeasure> {
    check_constant_args(t, lam)?;
    let a = lam * t / 2.0;
    let w = (1..=n_max as i32)
        .map(|k| {
            let da = if k == 1 { 0.0 } else { (k - 1) as f64 * a.powi(k - 2) / (1.0 + a).powi(k + 1) };
            let db = (k + 1) as f64 * a.powi(k - 1) / (1.0 + a).powi(k + 2);
            0.5 * t * (da - db)
        })
        .collect();
    GridMeasure::from_weights(w)
}

/// Central difference `(mu^{lambda + h e_m} - mu^{lambda - h e_m}) / 2h` at every checkpoint.
pub fn fd_oracle(
    kernel: &dyn Kernel,
    mu0: &GridMeasure,
    m: usize,
    h: f64,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<Vec<GridMeasure>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step h must be > 0"));
    }
    let plus = AtParams::shifted(kernel, m, h)?;
    let minus = AtParams::shifted(kernel, m, -h)?;
    let (a, b) = rayon::join(
        || solve_forward(mu0, &plus, horizon, opts),
        || solve_forward(mu0, &minus, horizon, opts),
    );
    let (a, b) = (a?, b?);
    a.measures()
        .iter()
        .zip(b.measures())
        .map(|(x, y)| Ok(x.sub(y)?.scaled(0.5 / h)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: f64,
    /// `sup_t ||mu^N_t - mu_t||_{2+eps}`.
    pub err_mu: f64,
    /// `sup_t max_m ||sigma^N_t - sigma_t||_1`.
    pub err_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub epsilon: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Both error columns non-increasing down the table.
    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].err_mu <= w[0].err_mu && w[1].err_sigma <= w[0].err_sigma)
    }
}

fn sup_distance(
    a: &[GridMeasure],
    b: &[GridMeasure],
    table: &[f64],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max(x.sub(y)?.norm_weighted(table));
    }
    Ok(worst)
}

/// Coupled solves with `K 1{phi phi < N}` for each level, against the
/// untruncated grid solution.
pub fn truncation_sweep(
    kernel: &dyn Kernel,
    mu0: &GridMeasure,
    horizon: f64,
    levels: &[f64],
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("truncation levels must be non-empty and increasing"));
    }
    let n = mu0.n_max();
    let phi = kernel.phi();
    let t_mu = phi.table(n, 2.0 + opts.epsilon);
    let t_sigma = phi.table(n, 1.0);
    let (ref_traj, ref_sens) = solve_coupled(mu0, kernel, horizon, opts)?;
    let p = kernel.param_dim();
    let rows = levels
        .par_iter()
        .map(|&level| {
            let tk = truncate(kernel, level)?;
            let (traj, sens) = solve_coupled(mu0, &tk, horizon, opts)?;
            let err_mu = sup_distance(traj.measures(), ref_traj.measures(), &t_mu)?;
            let mut err_sigma: f64 = 0.0;
            for m in 0..p {
                err_sigma = err_sigma.max(sup_distance(
                    &sens.component_path(m),
                    &ref_sens.component_path(m),
                    &t_sigma,
                )?);
            }
            Ok(ConvergenceRow {
                level,
                err_mu,
                err_sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        epsilon: opts.epsilon,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    Asymmetric { x: u64, y: u64 },
    KernelBound(BoundBreach),
    Phi(BoundViolation),
    InitialMoment { value: f64 },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Asymmetric { x, y } => write!(f, "asymmetric kernel: K({x}, {y}) != K({y}, {x})"),
            Finding::KernelBound(b) => write!(f, "{b}"),
            Finding::Phi(BoundViolation::BelowOne { x, value }) => {
                write!(f, "phi({x}) = {value} is below 1")
            }
            Finding::Phi(BoundViolation::NotSubadditive { x, y }) => {
                write!(f, "phi is not sub-additive at ({x}, {y})")
            }
            Finding::InitialMoment { value } => {
                write!(f, "(phi^(4+eps), mu_0) = {value} is not finite")
            }
        }
    }
}

/// Exhaustive grid check of the kernel and moment hypotheses.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub findings: Vec<Finding>,
    /// `(phi^{4+eps}, mu_0)`.
    pub initial_moment: f64,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn bound_breach_at(&self, x: u64, y: u64) -> bool {
        self.findings
            .iter()
            .any(|f| matches!(f, Finding::KernelBound(b) if (b.x, b.y) == (x.min(y), x.max(y))))
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "initial moment (phi^(4+eps), mu_0) = {:.16e}", self.initial_moment)?;
        if self.findings.is_empty() {
            return writeln!(f, "all hypothesis checks passed");
        }
        for finding in &self.findings {
            writeln!(f, "FAIL {finding}")?;
        }
        Ok(())
    }
}

pub fn hypothesis_check(kernel: &dyn Kernel, mu0: &GridMeasure, epsilon: f64) -> HypothesisReport {
    let n = mu0.n_max();
    let mut findings = Vec::new();
    if let Some((x, y)) = find_asymmetry(kernel, n) {
        findings.push(Finding::Asymmetric { x, y });
    }
    findings.extend(bound_breaches(kernel, n).into_iter().map(Finding::KernelBound));
    findings.extend(kernel.phi().violations_on_grid(n).into_iter().map(Finding::Phi));
    let initial_moment = mu0.norm_p(4.0 + epsilon, kernel.phi());
    if !initial_moment.is_finite() {
        findings.push(Finding::InitialMoment {
            value: initial_moment,
        });
    }
    HypothesisReport {
        findings,
        initial_moment,
    }
}

/// Residuals of the total-variation identity along a path.
#[derive(Clone, Debug, PartialEq)]
pub struct TvReport {
    /// `|‖rho_t‖_0 - ‖rho_0‖_0 - int_0^t (eps_s, rho'_s) ds|` per node.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Max of `|(f, |rho_t|) - (f eps_t, rho_t)|` over nodes and probes.
    pub max_sign_residual: f64,
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Interpolant through up to four `(x, y)` points, evaluated at `s`.
fn lagrange(xs: &[f64], ys: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for (i, (&xi, &yi)) in xs.iter().zip(ys).enumerate() {
        let mut l = 1.0;
        for (j, &xj) in xs.iter().enumerate() {
            if j != i {
                l *= (s - xj) / (xi - xj);
            }
        }
        acc += l * yi;
    }
    acc
}

/// Three-point Gauss-Legendre on `[u, v]`; exact for quintics.
fn gauss3(u: f64, v: f64, g: impl Fn(f64) -> f64) -> f64 {
    const X: f64 = 0.774_596_669_241_483_4;
    let (c, r) = (0.5 * (u + v), 0.5 * (v - u));
    r * (5.0 * g(c - r * X) + 8.0 * g(c) + 5.0 * g(c + r * X)) / 9.0
}

/// Cubic Hermite through `(a, ra, da)` and `(a + dt, rb, db)` at fraction `th`.
fn hermite(ra: f64, rb: f64, da: f64, db: f64, dt: f64, th: f64) -> f64 {
    let (t2, t3) = (th * th, th * th * th);
    (2.0 * t3 - 3.0 * t2 + 1.0) * ra
        + (t3 - 2.0 * t2 + th) * dt * da
        + (-2.0 * t3 + 3.0 * t2) * rb
        + (t3 - t2) * dt * db
}

/// `int sgn(rho) rho' ds` over interval `i` for one mass.
///
/// `rho'` is integrated from its cubic interpolant on the four nearest
/// nodes; a sign change inside the interval is located on the Hermite cubic
/// of `rho` and the interval is split there.
fn signed_increment(times: &[f64], rho: &[f64], dot: &[f64], i: usize) -> f64 {
    let len = times.len();
    let width = len.min(4);
    let lo = i.saturating_sub(1).min(len - width);
    let (xs, ys) = (&times[lo..lo + width], &dot[lo..lo + width]);
    let integral = |u: f64, v: f64| gauss3(u, v, |s| lagrange(xs, ys, s));
    let (a, b) = (times[i], times[i + 1]);
    let (ra, rb) = (rho[i], rho[i + 1]);
    let dt = b - a;
    let curve = |th: f64| hermite(ra, rb, dot[i], dot[i + 1], dt, th);
    if ra * rb < 0.0 {
        let (mut l, mut r) = (0.0, 1.0);
        for _ in 0..60 {
            let m = 0.5 * (l + r);
            if sgn(curve(m)) == sgn(ra) {
                l = m;
            } else {
                r = m;
            }
        }
        let c = a + 0.5 * (l + r) * dt;
        sgn(ra) * integral(a, c) + sgn(rb) * integral(c, b)
    } else {
        let mut s = sgn(ra + rb);
        if s == 0.0 {
            s = sgn(curve(0.5));
        }
        s * integral(a, b)
    }
}

pub fn kolokoltsov_tv_check(
    times: &[f64],
    rho: &[GridMeasure],
    rho_dot: &[GridMeasure],
    probes: &[TestFunction],
) -> Result<TvReport> {
    if times.is_empty() || rho.len() != times.len() || rho_dot.len() != times.len() {
        return Err(Error::invalid("times, rho and rho_dot must have equal, non-zero length"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("times must be increasing"));
    }
    let n = rho[0].n_max();
    for m in rho.iter().chain(rho_dot) {
        m.check_same_grid(n)?;
    }
    // per-mass time series
    let rho_k: Vec<Vec<f64>> = (1..=n).map(|k| rho.iter().map(|m| m.weight(k)).collect()).collect();
    let dot_k: Vec<Vec<f64>> = (1..=n).map(|k| rho_dot.iter().map(|m| m.weight(k)).collect()).collect();
    let norm0 = rho[0].total_variation();
    let mut integral = 0.0;
    let mut residuals = vec![0.0];
    for i in 1..times.len() {
        integral += (0..n)
            .map(|k| signed_increment(times, &rho_k[k], &dot_k[k], i - 1))
            .sum::<f64>();
        residuals.push((rho[i].total_variation() - norm0 - integral).abs());
    }
    let mut max_sign_residual: f64 = 0.0;
    for r in rho {
        let eps = sign_density(r);
        let abs = r.abs();
        for f in probes {
            let lhs = abs.pair(f)?;
            let rhs = r.pair(&f.mul(&eps)?)?;
            max_sign_residual = max_sign_residual.max((lhs - rhs).abs());
        }
    }
    Ok(TvReport {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        max_sign_residual,
    })
}

/// `sigma'^(m)_t = K(mu_t, sigma_t) + dK_m(mu_t, mu_t)/2` at each checkpoint.
pub fn sensitivity_rates(
    traj: &Trajectory,
    sens: &SensitivityPath,
    kernel: &dyn Kernel,
    m: usize,
) -> Result<Vec<GridMeasure>> {
    let n = traj.n_max();
    if m >= kernel.param_dim() {
        return Err(Error::invalid(format!("parameter index {m} out of range")));
    }
    let k = value_matrix(kernel, n);
    let d = partial_matrix(kernel, m, n);
    traj.measures()
        .iter()
        .zip(sens.blocks())
        .map(|(mu, b)| {
            let mut out = GridMeasure::zeros(n);
            coag_accumulate(&k, mu, &b.components[m], 1.0, &mut out)?;
            coag_accumulate(&d, mu, mu, 0.5, &mut out)?;
            Ok(out)
        })
        .collect()
}

/// Co-integrate `mu' = K(mu, mu)/2` with the linearized `rho' = K(mu, rho)`.
pub fn solve_linearized(
    mu0: &GridMeasure,
    rho0: &GridMeasure,
    kernel: &dyn Kernel,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<(Trajectory, Vec<GridMeasure>)> {
    opts.validate()?;
    check_initial(mu0)?;
    let n = mu0.n_max();
    rho0.check_same_grid(n)?;
    let times = checkpoint_times(0.0, horizon, opts.dt_checkpoint)?;
    let kmat = value_matrix(kernel, n);
    let guard = ForwardGuard::new(mu0, kernel.phi(), opts);
    let b = block_len(n);
    let mut y0 = vec![0.0; 2 * b];
    to_block(mu0, &mut y0[..b]);
    to_block(rho0, &mut y0[b..]);
    let (states, stats) = integrate(
        &y0,
        &times,
        |_, y, dy| {
            dy.fill(0.0);
            let (mu, rho) = y.split_at(b);
            let (dmu, drho) = dy.split_at_mut(b);
            coag_block(&kmat, mu, mu, 0.5, dmu);
            coag_block(&kmat, mu, rho, 1.0, drho);
        },
        &opts.integrator(),
        |t, y| guard.check(t, &mut y[..b]),
    )?;
    let mus = states.iter().map(|s| from_block(&s[..b])).collect();
    let rhos = states.iter().map(|s| from_block(&s[b..])).collect();
    Ok((Trajectory::new(times, mus, stats)?, rhos))
}

/// Max over interior checkpoints of
/// `||(mu_{i+1} - mu_{i-1}) / (t_{i+1} - t_{i-1}) - K(mu_i, mu_i)/2||_{2+eps}`.
pub fn time_derivative_residual(traj: &Trajectory, kernel: &dyn Kernel, epsilon: f64) -> Result<f64> {
    let n = traj.n_max();
    let k = value_matrix(kernel, n);
    let table = kernel.phi().table(n, 2.0 + epsilon);
    let (t, mu) = (traj.times(), traj.measures());
    let mut worst: f64 = 0.0;
    for i in 1..t.len().saturating_sub(1) {
        let mut d = mu[i + 1].sub(&mu[i - 1])?.scaled(1.0 / (t[i + 1] - t[i - 1]));
        coag_accumulate(&k, &mu[i], &mu[i], -0.5, &mut d)?;
        worst = worst.max(d.norm_weighted(&table));
    }
    Ok(worst)
}

/// Number of grid pairs where `|{f}(x, y)| > 2^p ||f||_p (phi^p(x) + phi^p(y))`.
pub fn curly_bound_violations(f: &TestFunction, phi: &BoundFunction, p: f64) -> usize {
    let n = f.n_max();
    let table = phi.table(n, p);
    let fp = f.norm_weighted(&table);
    let scale = 2f64.powf(p) * fp;
    let mut count = 0;
    for x in 1..=n {
        for y in 1..=n {
            let lhs = curly(f, x, y).abs();
            let rhs = scale * (table[x - 1] + table[y - 1]);
            if lhs > rhs * (1.0 + 1e-12) {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_kernel, KernelFamily, ParametricKernel};
    use crate::measures::coag_apply;

    fn phi() -> BoundFunction {
        BoundFunction::linear(1.0)
    }

    #[test]
    fn analytic_constant_examples() {
        assert_eq!(analytic_constant_kernel(8, 0.0, 1.0).unwrap(), GridMeasure::delta(8, 1, 1.0));
        let c = analytic_constant_kernel(64, 2.0, 1.0).unwrap();
        for k in 1..=64 {
            assert!((c.weight(k) - 0.5f64.powi(k as i32 + 1)).abs() < 1e-300 + 1e-16);
        }
        assert!((c.number() - 0.5).abs() < 1e-15);
        assert!(analytic_constant_kernel(8, -1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_constant_satisfies_discrete_equation() {
        // substitute the closed form into c_k' = 1/2 sum_{i+j=k} c_i c_j - c_k sum_j c_j
        let (t, lam, h) = (0.7, 1.3, 1e-5);
        let n = 40;
        let c = analytic_constant_kernel(n, t, lam).unwrap();
        let up = analytic_constant_kernel(n, t + h, lam).unwrap();
        let dn = analytic_constant_kernel(n, t - h, lam).unwrap();
        let k = crate::measures::KernelMatrix::from_fn(n, |_, _| lam);
        let mut rhs = coag_apply(&k, &c, &c).unwrap().scaled(0.5);
        // the infinite system has no overflow: restore the loss against masses above the grid
        let tail: f64 = (n as i32 + 1..400)
            .map(|j| {
                let a = lam * t / 2.0;
                a.powi(j - 1) / (1.0 + a).powi(j + 1)
            })
            .sum();
        for kk in 1..=n {
            rhs.weights_mut()[kk - 1] -= lam * c.weight(kk) * tail;
        }
        for kk in 1..=n {
            let fd = (up.weight(kk) - dn.weight(kk)) / (2.0 * h);
            assert!((fd - rhs.weight(kk)).abs() < 1e-9, "k = {kk}");
        }
    }

    #[test]
    fn analytic_sensitivity_examples() {
        assert_eq!(analytic_sensitivity_constant(8, 0.0, 1.0).unwrap(), GridMeasure::zeros(8));
        let s = analytic_sensitivity_constant(64, 2.0, 1.0).unwrap();
        assert!((s.weight(1) + 0.25).abs() < 1e-15);
        assert!((s.number() + 0.25).abs() < 1e-14);
        // against a central difference of the closed form
        let (t, lam, h) = (1.5, 0.8, 1e-6);
        let s = analytic_sensitivity_constant(20, t, lam).unwrap();
        let a = analytic_constant_kernel(20, t, lam + h).unwrap();
        let b = analytic_constant_kernel(20, t, lam - h).unwrap();
        let fd = a.sub(&b).unwrap().scaled(0.5 / h);
        assert!(fd.sub(&s).unwrap().total_variation() < 1e-8);
    }

    #[test]
    fn fd_oracle_matches_closed_form() {
        let k = make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 2.0)], phi(), 64).unwrap();
        let fd = fd_oracle(&k, &GridMeasure::delta(64, 1, 1.0), 0, 1e-3, 2.0, &SolveOptions::default())
            .unwrap();
        let exact = analytic_sensitivity_constant(64, 2.0, 1.0).unwrap();
        let d = fd.last().unwrap().sub(&exact).unwrap().norm_p(1.0, &phi());
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn hypothesis_examples() {
        let k = make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 1.0)], phi(), 16).unwrap();
        let r = hypothesis_check(&k, &GridMeasure::delta(16, 1, 1.0), 0.5);
        assert!(r.passed(), "{r}");
        assert!((r.initial_moment - 2f64.powf(4.5)).abs() < 1e-12);
        let xy = ParametricKernel::unchecked(
            KernelFamily::Multiplicative,
            vec![1.0],
            vec![(0.0, 1.0)],
            BoundFunction::constant(1.0),
        )
        .unwrap();
        let r = hypothesis_check(&xy, &GridMeasure::delta(16, 1, 1.0), 0.5);
        assert!(!r.passed());
        assert!(r.bound_breach_at(2, 2));
        assert!(!r.bound_breach_at(1, 1));
        assert!(r.to_string().contains("FAIL"));
    }

    #[test]
    fn tv_identity_on_hand_path() {
        for nodes in [11, 10, 2] {
            let times: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
            let rho: Vec<GridMeasure> = times
                .iter()
                .map(|t| GridMeasure::delta(4, 1, 1.0 - 2.0 * t))
                .collect();
            let dot = vec![GridMeasure::delta(4, 1, -2.0); nodes];
            let probes = [TestFunction::constant(4, 1.0), TestFunction::identity(4)];
            let r = kolokoltsov_tv_check(&times, &rho, &dot, &probes).unwrap();
            assert!(r.max_residual < 1e-15, "{nodes}: {r:?}");
            assert_eq!(r.max_sign_residual, 0.0);
            assert!((rho.last().unwrap().total_variation() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tv_identity_on_constant_path() {
        let times = [0.0, 0.5, 1.0];
        let rho = vec![GridMeasure::from_atoms(4, &[(1, 0.3), (2, -0.2)]); 3];
        let dot = vec![GridMeasure::zeros(4); 3];
        let r = kolokoltsov_tv_check(&times, &rho, &dot, &[]).unwrap();
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn curly_bound_holds_for_examples() {
        let f = TestFunction::from_fn(32, |x| (x as f64).powi(2) * if x % 2 == 0 { 1.0 } else { -1.0 });
        for p in [1.0, 2.0, 3.0] {
            assert_eq!(curly_bound_violations(&f, &phi(), p), 0);
        }
    }

    #[test]
    fn truncation_sweep_inactive_level_is_exact() {
        let k = make_kernel(KernelFamily::Additive, vec![1.0], vec![(0.0, 1.0)], phi(), 16).unwrap();
        let opts = SolveOptions {
            overflow_fraction_max: 1e-3,
            dt_checkpoint: 1.0 / 64.0,
            ..Default::default()
        };
        let table =
            truncation_sweep(&k, &GridMeasure::delta(16, 1, 1.0), 0.5, &[8.0, 1e6], &opts).unwrap();
        assert!(table.rows[0].err_mu > 0.0);
        assert_eq!(table.rows[1].err_mu, 0.0);
        assert_eq!(table.rows[1].err_sigma, 0.0);
        assert!(table.is_monotone());
    }

    #[test]
    fn time_derivative_residual_is_second_order() {
        let k = make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 1.0)], phi(), 64).unwrap();
        let mu0 = GridMeasure::delta(64, 1, 1.0);
        let res = |dt| {
            let opts = SolveOptions {
                dt_checkpoint: dt,
                ..Default::default()
            };
            let traj = solve_forward(&mu0, &k, 1.0, &opts).unwrap();
            time_derivative_residual(&traj, &k, 0.5).unwrap()
        };
        let ratio = res(1.0 / 32.0) / res(1.0 / 64.0);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }
}
