//! Marcus–Lushnikov coalescence by the direct method, and a coupled
//! finite-difference sensitivity estimator driven by common random numbers.
//!
//! Particles are grouped by mass. Each jump consumes exactly two uniforms from
//! the replica's stream, first the waiting time and then the pair, so two runs
//! sharing `(seed, replica)` see identical random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{AtParams, Kernel};
use crate::measures::{GridMeasure, TestFunction};

/// Normal quantile used for confidence intervals (two-sided 99%).
pub const CI_Z: f64 = 2.576;

/// Integer particle census built from `mu_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Census {
    /// `(mass, count)` pairs, increasing in mass, counts > 0.
    pub classes: Vec<(u64, u64)>,
    /// Scale such that the empirical measure is `(1/n_eff) sum delta_{x_i}`
    /// and `(1, .)` matches `(1, mu_0)`.
    pub n_eff: f64,
    /// `||empirical_0 - mu_0||_0` after rounding.
    pub residual: f64,
}

/// Round `n w_k` to integers and rescale `n` to the resulting census.
pub fn census(mu0: &GridMeasure, n: u64) -> Result<Census> {
    if n < 2 {
        return Err(Error::invalid("particle count n must be >= 2"));
    }
    if !mu0.is_nonnegative() || !mu0.is_finite() {
        return Err(Error::invalid("initial measure must be finite and non-negative"));
    }
    let number = mu0.number();
    if !(number > 0.0) {
        return Err(Error::invalid("initial measure has zero total number"));
    }
    let classes: Vec<(u64, u64)> = mu0
        .weights()
        .iter()
        .enumerate()
        .map(|(k, &w)| ((k + 1) as u64, (n as f64 * w).round() as u64))
        .filter(|&(_, c)| c > 0)
        .collect();
    let total: u64 = classes.iter().map(|c| c.1).sum();
    if total < 2 {
        return Err(Error::invalid(format!(
            "census of n = {n} particles rounds to {total} particle(s)"
        )));
    }
    let n_eff = total as f64 / number;
    let mut residual = 0.0;
    let mut it = classes.iter().peekable();
    for (k, &w) in mu0.weights().iter().enumerate() {
        let c = match it.peek() {
            Some(&&(m, c)) if m == (k + 1) as u64 => {
                it.next();
                c
            }
            _ => 0,
        };
        residual += (c as f64 / n_eff - w).abs();
    }
    Ok(Census {
        classes,
        n_eff,
        residual,
    })
}

/// Marcus–Lushnikov state: particle masses grouped into classes.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    classes: Vec<(u64, u64)>,
    n_eff: f64,
    t: f64,
    particles: u64,
    jumps: u64,
    rng: ChaCha8Rng,
    pending: Option<(f64, f64)>,
    frozen: bool,
}

impl ParticleSystem {
    /// Fresh system on stream `replica` of `seed`.
    pub fn new(census: &Census, seed: u64, replica: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        ParticleSystem {
            classes: census.classes.clone(),
            n_eff: census.n_eff,
            t: 0.0,
            particles: census.classes.iter().map(|c| c.1).sum(),
            jumps: 0,
            rng,
            pending: None,
            frozen: false,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn particles(&self) -> u64 {
        self.particles
    }

    pub fn jumps(&self) -> u64 {
        self.jumps
    }

    pub fn classes(&self) -> &[(u64, u64)] {
        &self.classes
    }

    pub fn total_mass(&self) -> u64 {
        self.classes.iter().map(|(m, c)| m * c).sum()
    }

    /// Unnormalized pair weights `K c_a c_b` (`a < b`) and `K c_a (c_a - 1)/2`.
    fn pair_weights(&self, k: &dyn Kernel, out: &mut Vec<(usize, usize, f64)>) -> f64 {
        out.clear();
        let mut total = 0.0;
        for (a, &(ma, ca)) in self.classes.iter().enumerate() {
            for (b, &(mb, cb)) in self.classes.iter().enumerate().skip(a) {
                let pairs = if a == b {
                    (ca * ca.saturating_sub(1)) as f64 / 2.0
                } else {
                    (ca * cb) as f64
                };
                let w = k.eval(ma, mb) * pairs;
                if w > 0.0 {
                    total += w;
                    out.push((a, b, w));
                }
            }
        }
        total
    }

    fn add(&mut self, mass: u64) {
        match self.classes.binary_search_by_key(&mass, |c| c.0) {
            Ok(i) => self.classes[i].1 += 1,
            Err(i) => self.classes.insert(i, (mass, 1)),
        }
    }

    fn remove_one(&mut self, i: usize) {
        self.classes[i].1 -= 1;
    }

    /// Advance to `t_end`; jumps at times `<= t_end` are applied.
    pub fn advance(&mut self, k: &dyn Kernel, t_end: f64) {
        let mut pairs = Vec::new();
        while !self.frozen {
            let (t_jump, u_pair) = match self.pending {
                Some(p) => p,
                None => {
                    let total = self.pair_weights(k, &mut pairs);
                    if !(total > 0.0) {
                        self.frozen = true;
                        break;
                    }
                    let rate = total / self.n_eff;
                    let u_time: f64 = self.rng.gen();
                    let u_pair: f64 = self.rng.gen();
                    let p = (self.t - (1.0 - u_time).ln() / rate, u_pair);
                    self.pending = Some(p);
                    p
                }
            };
            if t_jump > t_end {
                break;
            }
            let total = self.pair_weights(k, &mut pairs);
            let target = u_pair * total;
            let mut acc = 0.0;
            let mut chosen = pairs[pairs.len() - 1];
            for &p in &pairs {
                acc += p.2;
                if target < acc {
                    chosen = p;
                    break;
                }
            }
            let (a, b, _) = chosen;
            let merged = self.classes[a].0 + self.classes[b].0;
            self.remove_one(a);
            self.remove_one(b);
            self.classes.retain(|c| c.1 > 0);
            self.add(merged);
            self.particles -= 1;
            self.jumps += 1;
            self.t = t_jump;
            self.pending = None;
        }
    }

    /// `(1/n_eff) sum delta_{x_i}` on the grid; masses above `n_max` go to overflow.
    pub fn empirical(&self, n_max: usize) -> GridMeasure {
        let mut w = vec![0.0; n_max];
        let (mut om, mut on) = (0.0, 0.0);
        for &(m, c) in &self.classes {
            let v = c as f64 / self.n_eff;
            if (m as usize) <= n_max {
                w[m as usize - 1] = v;
            } else {
                on += v;
                om += m as f64 * v;
            }
        }
        GridMeasure::from_parts(w, om, on)
    }
}

/// One replica observed at the requested times.
#[derive(Clone, Debug)]
pub struct MlRun {
    pub n_eff: f64,
    pub census_residual: f64,
    pub times: Vec<f64>,
    pub measures: Vec<GridMeasure>,
    pub jumps: u64,
    /// Time of the last jump when the total rate reached zero.
    pub frozen_at: Option<f64>,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("observation times must be non-negative and increasing"));
    }
    Ok(())
}

/// Simulate one replica (stream `replica` of `seed`) and record the empirical
/// measure at each of `times`.
pub fn ml_run(
    mu0: &GridMeasure,
    n: u64,
    kernel: &dyn Kernel,
    times: &[f64],
    seed: u64,
    replica: u64,
) -> Result<MlRun> {
    check_times(times)?;
    let c = census(mu0, n)?;
    Ok(run_census(&c, mu0.n_max(), kernel, times, seed, replica))
}

fn run_census(c: &Census, n_max: usize, kernel: &dyn Kernel, times: &[f64], seed: u64, replica: u64) -> MlRun {
    let mut sys = ParticleSystem::new(c, seed, replica);
    let measures = times
        .iter()
        .map(|&t| {
            sys.advance(kernel, t);
            sys.empirical(n_max)
        })
        .collect();
    MlRun {
        n_eff: c.n_eff,
        census_residual: c.residual,
        times: times.to_vec(),
        measures,
        jumps: sys.jumps,
        frozen_at: sys.frozen.then_some(sys.t),
    }
}

/// Mean and standard error over replicas, per time and mass.
#[derive(Clone, Debug)]
pub struct ReplicaSummary {
    pub times: Vec<f64>,
    pub replicas: usize,
    pub mean: Vec<GridMeasure>,
    /// `stderr[i][k]` for mass `k + 1` at `times[i]`; NaN with one replica.
    pub stderr: Vec<Vec<f64>>,
}

fn summarize(times: &[f64], samples: &[&[GridMeasure]]) -> ReplicaSummary {
    let r = samples.len();
    let n = samples[0][0].n_max();
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let mut m = GridMeasure::zeros(n);
        for s in samples {
            m.axpy(1.0 / r as f64, &s[i]).expect("same grid");
        }
        let se = (0..n)
            .map(|k| {
                if r < 2 {
                    return f64::NAN;
                }
                let mk = m.weights()[k];
                let var = samples
                    .iter()
                    .map(|s| (s[i].weights()[k] - mk).powi(2))
                    .sum::<f64>()
                    / (r - 1) as f64;
                (var / r as f64).sqrt()
            })
            .collect();
        mean.push(m);
        stderr.push(se);
    }
    ReplicaSummary {
        times: times.to_vec(),
        replicas: r,
        mean,
        stderr,
    }
}

/// Independent replicas `0..replicas` in parallel.
pub fn ml_ensemble(
    mu0: &GridMeasure,
    n: u64,
    kernel: &dyn Kernel,
    times: &[f64],
    seed: u64,
    replicas: usize,
) -> Result<(Vec<MlRun>, ReplicaSummary)> {
    check_times(times)?;
    if replicas == 0 {
        return Err(Error::invalid("need at least one replica"));
    }
    let c = census(mu0, n)?;
    let runs: Vec<MlRun> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_census(&c, mu0.n_max(), kernel, times, seed, r))
        .collect();
    let samples: Vec<&[GridMeasure]> = runs.iter().map(|r| r.measures.as_slice()).collect();
    let summary = summarize(times, &samples);
    Ok((runs, summary))
}

/// Mean, standard error and normal-approximation interval of a scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn from_samples(xs: &[f64], z: f64) -> Self {
        let r = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / r;
        let stderr = if xs.len() < 2 {
            f64::NAN
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
        };
        Interval {
            mean,
            stderr,
            lo: mean - z * stderr,
            hi: mean + z * stderr,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn covers(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Coupled central-difference estimate of `sigma^(m)` at each time.
#[derive(Clone, Debug)]
pub struct FdEstimate {
    pub m: usize,
    pub h: f64,
    pub z: f64,
    pub summary: ReplicaSummary,
    /// `(X^{+h} - X^{-h}) / 2h` per replica and time.
    pub per_replica: Vec<Vec<GridMeasure>>,
}

impl FdEstimate {
    /// Interval for `(f, sigma_t)` at each time, from per-replica pairings.
    pub fn functional(&self, f: &TestFunction) -> Result<Vec<Interval>> {
        (0..self.summary.times.len())
            .map(|i| {
                let xs = self
                    .per_replica
                    .iter()
                    .map(|r| r[i].pair(f))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Interval::from_samples(&xs, self.z))
            })
            .collect()
    }
}

/// Paired runs at `lambda +- h e_m` sharing one random stream per replica.
#[allow(clippy::too_many_arguments)]
pub fn coupled_fd_sensitivity(
    mu0: &GridMeasure,
    n: u64,
    kernel: &dyn Kernel,
    m: usize,
    h: f64,
    times: &[f64],
    seed: u64,
    replicas: usize,
) -> Result<FdEstimate> {
    check_times(times)?;
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step h must be > 0"));
    }
    if replicas == 0 {
        return Err(Error::invalid("need at least one replica"));
    }
    if m >= kernel.param_dim() {
        return Err(Error::invalid(format!("parameter index {m} out of range")));
    }
    let plus = AtParams::shifted(kernel, m, h)?;
    let minus = AtParams::shifted(kernel, m, -h)?;
    let c = census(mu0, n)?;
    let n_max = mu0.n_max();
    let per_replica: Vec<Vec<GridMeasure>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let a = run_census(&c, n_max, &plus, times, seed, r);
            let b = run_census(&c, n_max, &minus, times, seed, r);
            a.measures
                .iter()
                .zip(&b.measures)
                .map(|(x, y)| x.sub(y).expect("same grid").scaled(0.5 / h))
                .collect()
        })
        .collect();
    let samples: Vec<&[GridMeasure]> = per_replica.iter().map(|r| r.as_slice()).collect();
    Ok(FdEstimate {
        m,
        h,
        z: CI_Z,
        summary: summarize(times, &samples),
        per_replica,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_kernel, KernelFamily, ParametricKernel};
    use crate::measures::BoundFunction;

    fn constant(l: f64) -> ParametricKernel {
        make_kernel(
            KernelFamily::Constant,
            vec![l],
            vec![(0.0, 2.0)],
            BoundFunction::linear(1.0),
            64,
        )
        .unwrap()
    }

    #[test]
    fn census_rounds_and_rescales() {
        let mu0 = GridMeasure::from_atoms(8, &[(1, 0.5), (2, 0.25), (3, 0.004)]);
        let c = census(&mu0, 100).unwrap();
        assert_eq!(c.classes, vec![(1, 50), (2, 25)]);
        assert!((c.n_eff - 75.0 / 0.754).abs() < 1e-12);
        assert!(c.residual > 0.0);
        assert!(census(&mu0, 1).is_err());
        let c = census(&GridMeasure::delta(8, 1, 1.0), 1000).unwrap();
        assert_eq!(c.n_eff, 1000.0);
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn two_particles_merge_once() {
        let mu0 = GridMeasure::delta(4, 1, 1.0);
        let run = ml_run(&mu0, 2, &constant(1.0), &[0.0, 1e3], 7, 0).unwrap();
        assert_eq!(run.measures[0].weights(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(run.measures[1].weights(), &[0.0, 0.5, 0.0, 0.0]);
        assert_eq!(run.jumps, 1);
        assert!(run.frozen_at.is_some());
    }

    #[test]
    fn two_particle_waiting_time_has_rate_one_half() {
        let mu0 = GridMeasure::delta(4, 1, 1.0);
        let k = constant(1.0);
        let reps = 4000;
        let mean: f64 = (0..reps)
            .map(|r| {
                let c = census(&mu0, 2).unwrap();
                let mut s = ParticleSystem::new(&c, 11, r);
                s.advance(&k, f64::INFINITY);
                s.time()
            })
            .sum::<f64>()
            / reps as f64;
        // exponential(1/2): mean 2, standard error 2/sqrt(4000) ~ 0.032
        assert!((mean - 2.0).abs() < 0.13, "{mean}");
    }

    #[test]
    fn zero_kernel_freezes() {
        let mu0 = GridMeasure::from_atoms(8, &[(1, 0.6), (2, 0.4)]);
        let run = ml_run(&mu0, 100, &constant(0.0), &[0.0, 1.0, 2.0], 3, 0).unwrap();
        assert!(run.measures.iter().all(|m| m == &run.measures[0]));
        assert_eq!(run.jumps, 0);
    }

    #[test]
    fn mass_conserved_and_count_monotone() {
        let k = make_kernel(
            KernelFamily::Additive,
            vec![1.0],
            vec![(0.0, 1.0)],
            BoundFunction::linear(1.0),
            32,
        )
        .unwrap();
        let c = census(&GridMeasure::delta(32, 1, 1.0), 500).unwrap();
        let mut s = ParticleSystem::new(&c, 5, 2);
        let m0 = s.total_mass();
        let mut last = s.particles();
        for i in 1..=20 {
            s.advance(&k, 0.1 * i as f64);
            assert_eq!(s.total_mass(), m0);
            assert!(s.particles() <= last);
            assert_eq!(s.particles() + s.jumps(), 500);
            last = s.particles();
        }
        let e = s.empirical(32);
        assert!(((e.mass() + e.overflow_mass) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_seed_is_bitwise_reproducible() {
        let mu0 = GridMeasure::delta(16, 1, 1.0);
        let t = [0.5, 1.0];
        let a = ml_run(&mu0, 300, &constant(1.0), &t, 42, 3).unwrap();
        let b = ml_run(&mu0, 300, &constant(1.0), &t, 42, 3).unwrap();
        assert_eq!(a.measures, b.measures);
        let c = ml_run(&mu0, 300, &constant(1.0), &t, 42, 4).unwrap();
        assert_ne!(a.measures, c.measures);
    }

    /// `lambda` enters nowhere: paired runs coincide.
    struct Flat(Vec<f64>, Vec<(f64, f64)>, BoundFunction);

    impl Kernel for Flat {
        fn param_dim(&self) -> usize {
            1
        }
        fn params(&self) -> &[f64] {
            &self.0
        }
        fn param_box(&self) -> &[(f64, f64)] {
            &self.1
        }
        fn phi(&self) -> &BoundFunction {
            &self.2
        }
        fn eval_at(&self, _x: u64, _y: u64, _l: &[f64]) -> f64 {
            1.0
        }
        fn partial_at(&self, _m: usize, _x: u64, _y: u64, _l: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn parameter_free_kernel_gives_exact_zero() {
        let k = Flat(vec![0.5], vec![(0.0, 1.0)], BoundFunction::linear(1.0));
        let est = coupled_fd_sensitivity(&GridMeasure::delta(16, 1, 1.0), 200, &k, 0, 0.1, &[0.5, 1.0], 9, 4)
            .unwrap();
        for r in &est.per_replica {
            for m in r {
                assert!(m.weights().iter().all(|&w| w == 0.0));
            }
        }
    }

    #[test]
    fn interval_shrinks_with_replicas() {
        let mu0 = GridMeasure::delta(64, 1, 1.0);
        let k = constant(1.0);
        let one = TestFunction::constant(64, 1.0);
        let hw = |r| {
            coupled_fd_sensitivity(&mu0, 1000, &k, 0, 0.05, &[1.0], 17, r)
                .unwrap()
                .functional(&one)
                .unwrap()[0]
                .half_width()
        };
        let ratio = hw(16) / hw(1024);
        assert!((5.0..13.0).contains(&ratio), "{ratio}");
    }
}
