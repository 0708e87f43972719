//! Dual (backward) machinery on test functions.
//!
//! `Lambda_s f(x) = sum_y {f}(x, y) K(x, y) mu_s(y)` and its `lambda`-partial,
//! the split `Lambda_s = J_s - M_s` with `J_s = L_s - tau_s`, the backward
//! equation `f_s' = -Lambda_s f_s`, its Duhamel/Picard construction, and the
//! representation `(f, sigma_t) = 1/2 int_0^t (Lambda^d_s U_{s,t} f, mu_s) ds`.
//!
//! Values of `mu_s` between checkpoints come from cubic Hermite interpolation
//! using the exact `mu'` at the checkpoints; at checkpoints the stored values
//! are used unchanged.

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::kernels::{partial_matrix, value_matrix, Kernel};
use crate::measures::{coag_raw, dot, GridMeasure, KernelMatrix, TestFunction};

/// `out = Lambda f` for the kernel matrix `k` and weights `mu`.
pub(crate) fn lambda_raw(k: &KernelMatrix, mu: &[f64], f: &[f64], out: &mut [f64]) {
    let n = f.len();
    for x in 1..=n {
        let row = k.row(x);
        let fx = f[x - 1];
        let mut acc = 0.0;
        for y in 1..=n {
            let w = row[y - 1] * mu[y - 1];
            if w == 0.0 {
                continue;
            }
            let fxy = if x + y <= n { f[x + y - 1] } else { 0.0 };
            acc += (fxy - fx - f[y - 1]) * w;
        }
        out[x - 1] = acc;
    }
}

fn check_pair(f: &TestFunction, mu: &GridMeasure) -> Result<()> {
    mu.check_same_grid(f.n_max())
}

/// `Lambda_s f` at the kernel's own parameter.
pub fn lambda_apply(f: &TestFunction, mu_s: &GridMeasure, k: &dyn Kernel) -> Result<TestFunction> {
    check_pair(f, mu_s)?;
    let n = f.n_max();
    let mut out = vec![0.0; n];
    lambda_raw(&value_matrix(k, n), mu_s.weights(), f.values(), &mut out);
    Ok(TestFunction::from_vec_unchecked(out))
}

/// `Lambda^{d lambda_m}_s f`: as [`lambda_apply`] with `dK/dlambda_m` in place of `K`.
pub fn lambda_partial_apply(
    f: &TestFunction,
    mu_s: &GridMeasure,
    k: &dyn Kernel,
    m: usize,
) -> Result<TestFunction> {
    check_pair(f, mu_s)?;
    if m >= k.param_dim() {
        return Err(Error::invalid(format!("parameter index {m} out of range")));
    }
    let n = f.n_max();
    let mut out = vec![0.0; n];
    lambda_raw(&partial_matrix(k, m, n), mu_s.weights(), f.values(), &mut out);
    Ok(TestFunction::from_vec_unchecked(out))
}

/// The pieces of `Lambda_s` at a fixed measure `mu_s`.
#[derive(Clone, Debug)]
pub struct SplitOperators<'a> {
    kernel: &'a KernelMatrix,
    mu: &'a [f64],
    tau: Vec<f64>,
}

impl<'a> SplitOperators<'a> {
    pub fn new(kernel: &'a KernelMatrix, mu: &'a GridMeasure) -> Result<Self> {
        mu.check_same_grid(kernel.n_max())?;
        Ok(Self::from_raw(kernel, mu.weights()))
    }

    pub(crate) fn from_raw(kernel: &'a KernelMatrix, mu: &'a [f64]) -> Self {
        let n = mu.len();
        let tau = (1..=n).map(|x| dot(kernel.row(x), mu)).collect();
        SplitOperators { kernel, mu, tau }
    }

    /// `tau_s(x) = sum_y K(x, y) mu_s(y)`.
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// `L_s f(x) = sum_y f(x + y) K(x, y) mu_s(y)`, `f = 0` above the grid.
    pub fn l_apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        (1..=n)
            .map(|x| {
                let row = self.kernel.row(x);
                (1..=n - x).map(|y| f[x + y - 1] * row[y - 1] * self.mu[y - 1]).sum()
            })
            .collect()
    }

    /// `M_s f(x) = sum_y f(y) K(x, y) mu_s(y)`.
    pub fn m_apply(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len();
        (1..=n)
            .map(|x| {
                let row = self.kernel.row(x);
                (0..n).map(|j| f[j] * row[j] * self.mu[j]).sum()
            })
            .collect()
    }

    /// `J_s f = L_s f - tau_s f`.
    pub fn j_apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = self.l_apply(f);
        for ((o, t), v) in out.iter_mut().zip(&self.tau).zip(f) {
            *o -= t * v;
        }
        out
    }

    pub fn lambda_apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        lambda_raw(self.kernel, self.mu, f, &mut out);
        out
    }

    /// `||M_s||_h = max_x sum_y h(y) K(x, y) mu_s(y) / h(x)` (attained at `f = h`).
    pub fn m_norm(&self, h: &[f64]) -> f64 {
        self.m_apply(h)
            .iter()
            .zip(h)
            .map(|(a, b)| a.abs() / b)
            .fold(0.0, f64::max)
    }

    /// Smallest `c` with `J_s h <= c h` pointwise.
    pub fn j_growth(&self, h: &[f64]) -> f64 {
        self.j_apply(h)
            .iter()
            .zip(h)
            .map(|(a, b)| a / b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `mu_s` along a trajectory, with `mu'_s` at each checkpoint for Hermite
/// interpolation.
#[derive(Clone, Debug)]
pub struct MeasurePath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl MeasurePath {
    pub fn new(traj: &Trajectory, kernel: &KernelMatrix) -> Result<Self> {
        let n = traj.n_max();
        if kernel.n_max() != n {
            return Err(Error::Dimension {
                expected: n,
                found: kernel.n_max(),
            });
        }
        let values: Vec<Vec<f64>> = traj.measures().iter().map(|m| m.weights().to_vec()).collect();
        let slopes = values
            .iter()
            .map(|w| {
                let mut d = vec![0.0; n];
                coag_raw(kernel, w, w, 0.5, &mut d);
                d
            })
            .collect();
        Ok(MeasurePath {
            times: traj.times().to_vec(),
            values,
            slopes,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Weights at `t`: the stored checkpoint when `t` is on the grid, else
    /// the cubic Hermite interpolant.
    pub fn weights_at(&self, t: f64) -> Vec<f64> {
        let tol = 1e-12 * (1.0 + t.abs());
        let i = self.times.partition_point(|&s| s < t - tol);
        if i < self.times.len() && (self.times[i] - t).abs() <= tol {
            return self.values[i].clone();
        }
        let i = i.clamp(1, self.times.len() - 1);
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let dt = tb - ta;
        let u = (t - ta) / dt;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let (a, b) = (&self.values[i - 1], &self.values[i]);
        let (da, db) = (&self.slopes[i - 1], &self.slopes[i]);
        (0..a.len())
            .map(|k| h00 * a[k] + h10 * dt * da[k] + h01 * b[k] + h11 * dt * db[k])
            .collect()
    }
}

/// Test-function values `f_s = U_{s,t} f` on the node grid `[s_lo, t]`.
#[derive(Clone, Debug)]
pub struct DualPath {
    /// Anchor time.
    pub t: f64,
    times: Vec<f64>,
    values: Vec<TestFunction>,
    /// `||f_s||_0` per node.
    pub norm0: Vec<f64>,
    /// `||f_s||_1` per node.
    pub norm1: Vec<f64>,
    /// Norm bound `e^{3 M ||mu_0||_0 (t - s)} ||f_t||_0` per node.
    pub bound0: Vec<f64>,
    /// Outer and total inner Picard iterations (Duhamel route only).
    pub iterations: Option<(usize, usize)>,
}

impl DualPath {
    /// Node times in increasing order, ending at `t`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[TestFunction] {
        &self.values
    }

    /// `U_{s_lo, t} f`.
    pub fn first(&self) -> &TestFunction {
        &self.values[0]
    }

    pub fn at(&self, s: f64) -> Option<&TestFunction> {
        let tol = 1e-9 * (1.0 + s.abs());
        self.times
            .iter()
            .position(|&u| (u - s).abs() <= tol)
            .map(|i| &self.values[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuhamelOptions {
    pub max_iters: usize,
    pub series_tol: f64,
    pub extrapolate: bool,
}

impl Default for DuhamelOptions {
    fn default() -> Self {
        DuhamelOptions {
            max_iters: 200,
            series_tol: 1e-12,
            extrapolate: true,
        }
    }
}

/// Constants of the exponential bound `e^{(c + sup_r ||M_r||_h)(t - s)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesBound {
    pub c: f64,
    pub m_norm: f64,
}

impl SeriesBound {
    pub fn factor(&self, elapsed: f64) -> f64 {
        ((self.c + self.m_norm) * elapsed).exp()
    }
}

fn is_uniform(nodes: &[f64]) -> bool {
    let h = nodes[1] - nodes[0];
    nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
}

/// Shared, immutable context for dual solves against one trajectory.
pub struct DualContext<'a> {
    traj: &'a Trajectory,
    kmat: KernelMatrix,
    partials: Vec<KernelMatrix>,
    path: MeasurePath,
    phi1: Vec<f64>,
    kmax: f64,
    fault_factor: f64,
}

impl<'a> DualContext<'a> {
    pub fn new(traj: &'a Trajectory, kernel: &dyn Kernel) -> Result<Self> {
        let n = traj.n_max();
        let kmat = value_matrix(kernel, n);
        let partials = (0..kernel.param_dim())
            .map(|m| partial_matrix(kernel, m, n))
            .collect();
        let path = MeasurePath::new(traj, &kmat)?;
        Ok(DualContext {
            traj,
            kmax: kmat.max_abs(),
            phi1: kernel.phi().table(n, 1.0),
            kmat,
            partials,
            path,
            fault_factor: 10.0,
        })
    }

    pub fn n_max(&self) -> usize {
        self.traj.n_max()
    }

    pub fn kernel_matrix(&self) -> &KernelMatrix {
        &self.kmat
    }

    pub fn path(&self) -> &MeasurePath {
        &self.path
    }

    /// `M = max K` on the grid.
    pub fn kernel_max(&self) -> f64 {
        self.kmax
    }

    /// Nodes `{s_lo} u (checkpoints in (s_lo, t)) u {t}`.
    pub fn nodes(&self, s_lo: f64, t: f64) -> Result<Vec<f64>> {
        if !(s_lo <= t) || s_lo < self.traj.t0 - 1e-12 || t > self.traj.t1 + 1e-12 {
            return Err(Error::invalid(format!(
                "need {} <= s_lo <= t <= {} (got s_lo = {s_lo}, t = {t})",
                self.traj.t0, self.traj.t1
            )));
        }
        let tol = 1e-9 * self.traj.dt_checkpoint;
        let mut out = vec![s_lo];
        out.extend(
            self.traj
                .times()
                .iter()
                .copied()
                .filter(|&u| u > s_lo + tol && u < t - tol),
        );
        if t > s_lo + tol {
            out.push(t);
        }
        Ok(out)
    }

    fn check_f(&self, f: &TestFunction) -> Result<()> {
        if f.n_max() != self.n_max() {
            return Err(Error::Dimension {
                expected: self.n_max(),
                found: f.n_max(),
            });
        }
        Ok(())
    }

    fn prop3_bound(&self, f_t: &TestFunction, elapsed: f64) -> f64 {
        let mass0 = self.traj.measures()[0].total_variation();
        (3.0 * self.kmax * mass0 * elapsed).exp() * f_t.sup_norm()
    }

    /// Backward RK4 solve of `f_s' = -Lambda_s f_s` from `t` down to `s_lo`.
    pub fn solve_backward(&self, f_t: &TestFunction, t: f64, s_lo: f64) -> Result<DualPath> {
        self.backward_impl(f_t, t, s_lo, |_, _, _| {})
    }

    fn backward_impl(
        &self,
        f_t: &TestFunction,
        t: f64,
        s_lo: f64,
        mut visit: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<DualPath> {
        self.check_f(f_t)?;
        let nodes = self.nodes(s_lo, t)?;
        let n = self.n_max();
        let k = nodes.len();
        let mut values = vec![Vec::new(); k];
        let mut f = f_t.values().to_vec();
        let mut mu_b = self.path.weights_at(nodes[k - 1]);
        visit(k - 1, &f, &mu_b);
        values[k - 1] = f.clone();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for i in (0..k - 1).rev() {
            let (sa, sb) = (nodes[i], nodes[i + 1]);
            let h = sa - sb;
            let mu_m = self.path.weights_at(0.5 * (sa + sb));
            let mu_a = self.path.weights_at(sa);
            // F(s, f) = -Lambda_s f
            lambda_raw(&self.kmat, &mu_b, &f, &mut k1);
            for j in 0..n {
                tmp[j] = f[j] - 0.5 * h * k1[j];
            }
            lambda_raw(&self.kmat, &mu_m, &tmp, &mut k2);
            for j in 0..n {
                tmp[j] = f[j] - 0.5 * h * k2[j];
            }
            lambda_raw(&self.kmat, &mu_m, &tmp, &mut k3);
            for j in 0..n {
                tmp[j] = f[j] - h * k3[j];
            }
            lambda_raw(&self.kmat, &mu_a, &tmp, &mut k4);
            for j in 0..n {
                f[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::BackwardFault {
                    time: sa,
                    reason: "non-finite test function".into(),
                });
            }
            visit(i, &f, &mu_a);
            values[i] = f.clone();
            mu_b = mu_a;
        }
        self.finish(f_t, t, nodes, values, None)
    }

    fn finish(
        &self,
        f_t: &TestFunction,
        t: f64,
        nodes: Vec<f64>,
        values: Vec<Vec<f64>>,
        iterations: Option<(usize, usize)>,
    ) -> Result<DualPath> {
        let mut norm0 = Vec::with_capacity(nodes.len());
        let mut norm1 = Vec::with_capacity(nodes.len());
        let mut bound0 = Vec::with_capacity(nodes.len());
        for (s, v) in nodes.iter().zip(&values) {
            let n0 = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            let b0 = self.prop3_bound(f_t, t - s);
            if n0 > self.fault_factor * b0 {
                return Err(Error::BackwardFault {
                    time: *s,
                    reason: format!("||f_s||_0 = {n0:e} exceeds {} x bound {b0:e}", self.fault_factor),
                });
            }
            norm0.push(n0);
            norm1.push(v.iter().zip(&self.phi1).fold(0.0_f64, |a, (x, p)| a.max(x.abs() / p)));
            bound0.push(b0);
        }
        Ok(DualPath {
            t,
            times: nodes,
            values: values.into_iter().map(TestFunction::from_vec_unchecked).collect(),
            norm0,
            norm1,
            bound0,
            iterations,
        })
    }

    /// Nested Picard iteration: inner on the `e^{T_s - T_r} L_r` integral
    /// equation, outer on the `- S_{s,r} M_r` perturbation, both from zero.
    ///
    /// Time integrals use the trapezoid rule on the nodes. With
    /// `opts.extrapolate` and an even number of uniform intervals, the
    /// solve is repeated on every other node and the two are combined by
    /// Richardson extrapolation; the odd nodes receive the mean of the
    /// neighbouring corrections.
    pub fn solve_backward_duhamel(
        &self,
        f_t: &TestFunction,
        t: f64,
        s_lo: f64,
        opts: &DuhamelOptions,
    ) -> Result<DualPath> {
        self.check_f(f_t)?;
        if opts.max_iters == 0 || !(opts.series_tol > 0.0) {
            return Err(Error::invalid("need max_iters > 0 and series_tol > 0"));
        }
        let nodes = self.nodes(s_lo, t)?;
        let (mut fine, outer, inner) = self.picard(f_t.values(), &nodes, opts)?;
        let intervals = nodes.len() - 1;
        if opts.extrapolate && intervals >= 2 && intervals % 2 == 0 && is_uniform(&nodes) {
            let coarse_nodes: Vec<f64> = nodes.iter().copied().step_by(2).collect();
            let (coarse, _, _) = self.picard(f_t.values(), &coarse_nodes, opts)?;
            let n = self.n_max();
            let corr: Vec<Vec<f64>> = coarse
                .iter()
                .enumerate()
                .map(|(j, c)| (0..n).map(|x| (fine[2 * j][x] - c[x]) / 3.0).collect())
                .collect();
            for (i, v) in fine.iter_mut().enumerate() {
                for x in 0..n {
                    v[x] += if i % 2 == 0 {
                        corr[i / 2][x]
                    } else {
                        0.5 * (corr[i / 2][x] + corr[i / 2 + 1][x])
                    };
                }
            }
        }
        self.finish(f_t, t, nodes, fine, Some((outer, inner)))
    }

    fn picard(
        &self,
        g: &[f64],
        nodes: &[f64],
        opts: &DuhamelOptions,
    ) -> Result<(Vec<Vec<f64>>, usize, usize)> {
        let n = self.n_max();
        let k = nodes.len();
        let mus: Vec<Vec<f64>> = nodes.iter().map(|&s| self.path.weights_at(s)).collect();
        let ops: Vec<SplitOperators> = mus
            .iter()
            .map(|m| SplitOperators::from_raw(&self.kmat, m))
            .collect();
        // decay[i] = e^{T_i - T_{i+1}}, trapezoid in s for T
        let decay: Vec<Vec<f64>> = (0..k - 1)
            .map(|i| {
                let dt = nodes[i + 1] - nodes[i];
                (0..n)
                    .map(|x| (-0.5 * dt * (ops[i].tau[x] + ops[i + 1].tau[x])).exp())
                    .collect()
            })
            .collect();
        let phi = &self.phi1;
        let dist = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter()
                .zip(b)
                .flat_map(|(u, v)| u.iter().zip(v).zip(phi).map(|((x, y), p)| (x - y).abs() / p))
                .fold(0.0_f64, f64::max)
        };

        // One sweep: v_i = e^{T_i - T_t} g + int_{s_i}^t e^{T_i - T_r}(L_r v_r + q_r) dr
        let sweep = |v: &[Vec<f64>], q: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let src: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let mut h = ops[i].l_apply(&v[i]);
                    for (a, b) in h.iter_mut().zip(&q[i]) {
                        *a += b;
                    }
                    h
                })
                .collect();
            let mut out = vec![vec![0.0; n]; k];
            out[k - 1] = g.to_vec();
            let mut head = g.to_vec();
            let mut integral = vec![0.0; n];
            for i in (0..k - 1).rev() {
                let dt = nodes[i + 1] - nodes[i];
                let e = &decay[i];
                for x in 0..n {
                    head[x] *= e[x];
                    integral[x] = e[x] * integral[x] + 0.5 * dt * (src[i][x] + e[x] * src[i + 1][x]);
                    out[i][x] = head[x] + integral[x];
                }
            }
            out
        };

        let mut u = vec![vec![0.0; n]; k];
        let mut v = u.clone();
        let mut inner_total = 0;
        let mut last = (f64::INFINITY, f64::INFINITY);
        for outer in 1..=opts.max_iters {
            let q: Vec<Vec<f64>> = (0..k)
                .map(|i| ops[i].m_apply(&u[i]).into_iter().map(|x| -x).collect())
                .collect();
            let mut inner_last = (f64::INFINITY, f64::INFINITY);
            let mut converged = false;
            for _ in 0..opts.max_iters {
                inner_total += 1;
                let next = sweep(&v, &q);
                let d = dist(&next, &v);
                v = next;
                inner_last = (inner_last.1, d);
                if d < 0.01 * opts.series_tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::SeriesDivergence {
                    iterations: opts.max_iters,
                    previous: inner_last.0,
                    last: inner_last.1,
                });
            }
            let d = dist(&v, &u);
            u.clone_from(&v);
            last = (last.1, d);
            if d < opts.series_tol {
                return Ok((u, outer, inner_total));
            }
        }
        Err(Error::SeriesDivergence {
            iterations: opts.max_iters,
            previous: last.0,
            last: last.1,
        })
    }

    /// `c = max(0, sup_s max_x (J_s h)(x)/h(x))` and `sup_s ||M_s||_h` over
    /// the nodes of `[s_lo, t]`.
    pub fn series_bound(&self, h: &[f64], s_lo: f64, t: f64) -> Result<SeriesBound> {
        if h.len() != self.n_max() || h.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("h must be positive on the grid"));
        }
        let mut c: f64 = 0.0;
        let mut m_norm: f64 = 0.0;
        for s in self.nodes(s_lo, t)? {
            let mu = self.path.weights_at(s);
            let ops = SplitOperators::from_raw(&self.kmat, &mu);
            c = c.max(ops.j_growth(h));
            m_norm = m_norm.max(ops.m_norm(h));
        }
        Ok(SeriesBound { c, m_norm })
    }

    /// `(f, sigma^(m)_t)` for every component `m`, via one backward pass and
    /// trapezoid quadrature of `1/2 (Lambda^d_s f_s, mu_s)`.
    pub fn representation(&self, f: &TestFunction, t: f64) -> Result<Vec<f64>> {
        let p = self.partials.len();
        if t <= self.traj.t0 {
            self.check_f(f)?;
            return Ok(vec![0.0; p]);
        }
        let n = self.n_max();
        let mut integrand = Vec::new();
        let mut scratch = vec![0.0; n];
        let path = self.backward_impl(f, t, self.traj.t0, |_, fs, mu| {
            let row: Vec<f64> = self
                .partials
                .iter()
                .map(|pm| {
                    lambda_raw(pm, mu, fs, &mut scratch);
                    0.5 * dot(&scratch, mu)
                })
                .collect();
            integrand.push(row);
        })?;
        // visited from t backwards
        integrand.reverse();
        let nodes = path.times();
        let mut out = vec![0.0; p];
        for i in 0..nodes.len() - 1 {
            let dt = nodes[i + 1] - nodes[i];
            for m in 0..p {
                out[m] += 0.5 * dt * (integrand[i][m] + integrand[i + 1][m]);
            }
        }
        Ok(out)
    }

    /// `||U_{s,t}(U_{t,r} f) - U_{s,r} f||_0`.
    pub fn cocycle_check(&self, s: f64, t: f64, r: f64, f: &TestFunction) -> Result<f64> {
        if !(s <= t && t <= r) {
            return Err(Error::invalid("need s <= t <= r"));
        }
        let inner = self.solve_backward(f, r, t)?;
        let composed = self.solve_backward(inner.first(), t, s)?;
        let direct = self.solve_backward(f, r, s)?;
        Ok(composed
            .first()
            .sub(direct.first())?
            .sup_norm())
    }
}

/// Backward solve against `traj` from `t` down to `s_lo`.
pub fn solve_backward(
    f_t: &TestFunction,
    traj: &Trajectory,
    k: &dyn Kernel,
    t: f64,
    s_lo: f64,
) -> Result<DualPath> {
    DualContext::new(traj, k)?.solve_backward(f_t, t, s_lo)
}

pub fn solve_backward_duhamel(
    f_t: &TestFunction,
    traj: &Trajectory,
    k: &dyn Kernel,
    t: f64,
    s_lo: f64,
    opts: &DuhamelOptions,
) -> Result<DualPath> {
    DualContext::new(traj, k)?.solve_backward_duhamel(f_t, t, s_lo, opts)
}

/// `(f, sigma^(m)_t)` by the representation formula.
pub fn representation_sensitivity(
    f: &TestFunction,
    traj: &Trajectory,
    k: &dyn Kernel,
    m: usize,
    t: f64,
) -> Result<f64> {
    if m >= k.param_dim() {
        return Err(Error::invalid(format!("parameter index {m} out of range")));
    }
    Ok(DualContext::new(traj, k)?.representation(f, t)?[m])
}

pub fn propagator_cocycle_check(
    traj: &Trajectory,
    k: &dyn Kernel,
    s: f64,
    t: f64,
    r: f64,
    f: &TestFunction,
) -> Result<f64> {
    DualContext::new(traj, k)?.cocycle_check(s, t, r, f)
}
