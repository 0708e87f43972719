//! Explicit one-step integrators shared by the forward, coupled and oracle solves.
//!
//! [`integrate`] runs the Dormand–Prince 5(4) pair with a mixed abs/rel local
//! error test, landing exactly on every requested output time. A fixed step may
//! be forced for convergence studies. [`rk4_step`] is the classical fourth-order
//! step used where the caller controls the time grid.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on accepted steps.
    pub max_step: Option<f64>,
    /// Disable adaptivity and take steps of exactly this size (shortened to
    /// land on output times).
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
            fixed_step: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Largest scaled local error estimate among accepted steps.
    pub max_local_error: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const ORDER: f64 = 5.0;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

/// Integrate `y' = f(t, y)` from `times[0]` through each of `times`, returning
/// the state at every output time (the first entry is `y0`).
///
/// `after_step` runs on every accepted state and may modify it (clamping) or
/// abort the solve by returning an error.
pub fn integrate<F, G>(
    y0: &[f64],
    times: &[f64],
    mut rhs: F,
    opts: &IntegratorOptions,
    mut after_step: G,
) -> Result<(Vec<Vec<f64>>, IntegratorStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: FnMut(f64, &mut [f64]) -> Result<()>,
{
    if times.is_empty() {
        return Err(Error::invalid("no output times"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("output times must be strictly increasing"));
    }
    if !(opts.rel_tol > 0.0 && opts.abs_tol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    let n = y0.len();
    let mut ws = Workspace::new(n);
    let mut stats = IntegratorStats::default();
    let mut y = y0.to_vec();
    let mut t = times[0];
    let mut out = Vec::with_capacity(times.len());
    out.push(y.clone());

    let span = times[times.len() - 1] - times[0];
    let mut h = match opts.fixed_step {
        Some(hf) => {
            if !(hf > 0.0) {
                return Err(Error::invalid("fixed step must be positive"));
            }
            hf
        }
        None if span > 0.0 => {
            rhs(t, &y, &mut ws.k[0]);
            stats.rhs_evals += 1;
            initial_step(&y, &ws.k[0], opts, span)
        }
        None => 0.0,
    };
    if let Some(hm) = opts.max_step {
        h = h.min(hm);
    }

    for &target in &times[1..] {
        while t < target {
            if stats.steps + stats.rejected >= opts.max_steps {
                return Err(Error::StepUnderflow { time: t });
            }
            let remaining = target - t;
            // land exactly on the output time; absorb slivers into this step
            let (step, lands) = if h >= remaining * (1.0 - 1e-12) {
                (remaining, true)
            } else {
                (h, false)
            };
            if step <= f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { time: t });
            }
            rhs(t, &y, &mut ws.k[0]);
            dopri_step(&mut rhs, t, &y, step, &mut ws);
            stats.rhs_evals += 7;
            let err = if opts.fixed_step.is_some() {
                0.0
            } else {
                error_norm(&y, &ws.y_new, &ws.tmp, opts)
            };
            if err <= 1.0 {
                t = if lands { target } else { t + step };
                std::mem::swap(&mut y, &mut ws.y_new);
                after_step(t, &mut y)?;
                stats.steps += 1;
                stats.max_local_error = stats.max_local_error.max(err);
                if opts.fixed_step.is_none() {
                    let fac = if err == 0.0 {
                        FAC_MAX
                    } else {
                        (SAFETY * err.powf(-1.0 / ORDER)).clamp(FAC_MIN, FAC_MAX)
                    };
                    // keep the pre-landing step so short landings don't shrink h
                    h = h.max(step) * fac;
                    if let Some(hm) = opts.max_step {
                        h = h.min(hm);
                    }
                }
            } else {
                stats.rejected += 1;
                let fac = if err.is_finite() {
                    (SAFETY * err.powf(-1.0 / ORDER)).clamp(FAC_MIN, 1.0)
                } else {
                    FAC_MIN
                };
                h = step * fac;
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` precomputed.
/// Leaves the fifth-order solution in `ws.y_new` and the error vector in `ws.tmp`.
fn dopri_step<F>(rhs: &mut F, t: f64, y: &[f64], h: f64, ws: &mut Workspace)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Workspace { k, tmp, y_new } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    rhs(t + C2 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    rhs(t + C3 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    rhs(t + C4 * h, tmp, k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    rhs(t + C5 * h, tmp, k5);
    for i in 0..n {
        tmp[i] =
            y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    rhs(t + h, tmp, k6);
    for i in 0..n {
        y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    rhs(t + h, y_new, k7);
    for i in 0..n {
        tmp[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|i| {
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            let e = err[i] / sc;
            e * e
        })
        .sum();
    (sum / n as f64).sqrt()
}

/// Starting step heuristic of Hairer, Nørsett & Wanner (single extra-free variant).
fn initial_step(y: &[f64], f0: &[f64], opts: &IntegratorOptions, span: f64) -> f64 {
    let n = y.len().max(1) as f64;
    let (mut d0, mut d1) = (0.0, 0.0);
    for (yi, fi) in y.iter().zip(f0) {
        let sc = opts.abs_tol + opts.rel_tol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span)
}

/// Classical RK4 step for `y' = f(t, y)`; returns `y(t + h)`.
pub fn rk4_step<F>(mut rhs: F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    rhs(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    rhs(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    rhs(t + h, &tmp, &mut k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_hook(_: f64, _: &mut [f64]) -> Result<()> {
        Ok(())
    }

    #[test]
    fn zero_field_leaves_state() {
        let (out, _) = integrate(
            &[1.0, -2.0, 3.5],
            &[0.0, 0.5, 1.0],
            |_, _, dy| dy.fill(0.0),
            &IntegratorOptions::default(),
            no_hook,
        )
        .unwrap();
        for y in out {
            assert_eq!(y, vec![1.0, -2.0, 3.5]);
        }
    }

    #[test]
    fn exponential_growth() {
        let opts = IntegratorOptions::default();
        let (out, stats) =
            integrate(&[1.0], &[0.0, 1.0], |_, y, dy| dy[0] = y[0], &opts, no_hook).unwrap();
        let e = std::f64::consts::E;
        assert!((out[1][0] - e).abs() / e <= opts.rel_tol * 10.0);
        assert!(stats.steps > 0);
    }

    #[test]
    fn linear_system_closed_form() {
        // y1' = -y1 + y2, y2' = -y2  =>  y2 = e^{-t}, y1 = (1 + t) e^{-t} for y(0) = (1, 1)
        let opts = IntegratorOptions::default();
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let (out, _) = integrate(
            &[1.0, 1.0],
            &times,
            |_, y, dy| {
                dy[0] = -y[0] + y[1];
                dy[1] = -y[1];
            },
            &opts,
            no_hook,
        )
        .unwrap();
        for (t, y) in times.iter().zip(&out) {
            let y1 = (1.0 + t) * (-t).exp();
            let y2 = (-t).exp();
            assert!((y[0] - y1).abs() <= opts.rel_tol * 10.0 * y1.abs());
            assert!((y[1] - y2).abs() <= opts.rel_tol * 10.0 * y2.abs());
        }
    }

    #[test]
    fn lands_on_output_times() {
        let times = [0.0, 0.1, 0.30000000000000004, 0.7];
        let mut seen = Vec::new();
        integrate(
            &[0.0],
            &times,
            |_, _, dy| dy[0] = 1.0,
            &IntegratorOptions::default(),
            |t, _| {
                seen.push(t);
                Ok(())
            },
        )
        .unwrap();
        for t in &times[1..] {
            assert!(seen.contains(t), "missing {t}");
        }
    }

    #[test]
    fn fixed_step_order_five() {
        let run = |h: f64| {
            let opts = IntegratorOptions {
                fixed_step: Some(h),
                ..Default::default()
            };
            integrate(&[1.0], &[0.0, 2.0], |t, y, dy| dy[0] = -t * y[0], &opts, no_hook).unwrap().0
                [1][0]
        };
        let exact = (-2.0f64).exp();
        let e1 = (run(0.2) - exact).abs();
        let e2 = (run(0.1) - exact).abs();
        let ratio = (e1 / e2).log2();
        assert!((4.5..=5.5).contains(&ratio), "observed order {ratio}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let solve = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = vec![1.0];
            for i in 0..n {
                y = rk4_step(|t, y, dy| dy[0] = t.cos() * y[0], i as f64 * h, &y, h);
            }
            y[0]
        };
        let exact = 1.0f64.sin().exp();
        let ratio = ((solve(10) - exact).abs() / (solve(20) - exact).abs()).log2();
        assert!((3.5..=4.5).contains(&ratio), "observed order {ratio}");
    }

    #[test]
    fn hook_error_aborts() {
        let res = integrate(
            &[1.0],
            &[0.0, 1.0],
            |_, y, dy| dy[0] = y[0],
            &IntegratorOptions::default(),
            |t, y| {
                if y[0] > 2.0 {
                    Err(Error::BlowUp {
                        time: t,
                        reason: "ceiling".into(),
                    })
                } else {
                    Ok(())
                }
            },
        );
        assert!(matches!(res, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn rejects_bad_times() {
        let r = integrate(
            &[1.0],
            &[0.0, 0.0],
            |_, _, dy: &mut [f64]| dy[0] = 0.0,
            &IntegratorOptions::default(),
            no_hook,
        );
        assert!(r.is_err());
    }
}
