//! Coupled forward/sensitivity solve: `mu' = K(mu, mu)/2` together with
//! `sigma_m' = K(mu, sigma_m) + dK_m(mu, mu)/2` for every parameter component.

use crate::error::{Error, Result};
use crate::forward::{
    block_len, check_initial, checkpoint_times, coag_block, from_block, to_block, ForwardGuard,
    SolveOptions, Trajectory,
};
use crate::kernels::{partial_matrix, value_matrix, Kernel};
use crate::measures::{coag_accumulate, GridMeasure, KernelMatrix};
use crate::ode::integrate;

/// `sigma^(m)` for every parameter component at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityBlock {
    pub components: Vec<GridMeasure>,
}

impl SensitivityBlock {
    pub fn zeros(param_dim: usize, n_max: usize) -> Self {
        SensitivityBlock {
            components: vec![GridMeasure::zeros(n_max); param_dim],
        }
    }

    pub fn param_dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, m: usize) -> &GridMeasure {
        &self.components[m]
    }

    /// `||sigma^(m)||_1` per component.
    pub fn norms(&self, p: f64, phi: &crate::measures::BoundFunction) -> Vec<f64> {
        self.components.iter().map(|c| c.norm_p(p, phi)).collect()
    }
}

/// Sensitivity blocks on the checkpoints of the matching [`Trajectory`].
#[derive(Clone, Debug)]
pub struct SensitivityPath {
    times: Vec<f64>,
    blocks: Vec<SensitivityBlock>,
}

impl SensitivityPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn blocks(&self) -> &[SensitivityBlock] {
        &self.blocks
    }

    pub fn param_dim(&self) -> usize {
        self.blocks[0].param_dim()
    }

    pub fn last(&self) -> &SensitivityBlock {
        self.blocks.last().unwrap()
    }

    /// `sigma^(m)` along the checkpoints.
    pub fn component_path(&self, m: usize) -> Vec<GridMeasure> {
        self.blocks.iter().map(|b| b.components[m].clone()).collect()
    }

    pub fn at_checkpoint(&self, t: f64, traj: &Trajectory) -> Option<&SensitivityBlock> {
        traj.index_of(t).map(|i| &self.blocks[i])
    }
}

/// `K(mu, sigma) + dK_m(mu, mu) / 2`.
pub fn sensitivity_rhs(
    mu: &GridMeasure,
    sigma: &GridMeasure,
    kernel: &dyn Kernel,
    m: usize,
) -> Result<GridMeasure> {
    if m >= kernel.param_dim() {
        return Err(Error::invalid(format!(
            "parameter index {m} out of range (p = {})",
            kernel.param_dim()
        )));
    }
    let n = mu.n_max();
    sigma.check_same_grid(n)?;
    let mut out = GridMeasure::zeros(n);
    coag_accumulate(&value_matrix(kernel, n), mu, sigma, 1.0, &mut out)?;
    coag_accumulate(&partial_matrix(kernel, m, n), mu, mu, 0.5, &mut out)?;
    Ok(out)
}

/// Solve the joint system from `sigma(0) = 0`.
pub fn solve_coupled(
    mu0: &GridMeasure,
    kernel: &dyn Kernel,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<(Trajectory, SensitivityPath)> {
    let sigma0 = SensitivityBlock::zeros(kernel.param_dim(), mu0.n_max());
    solve_coupled_from(mu0, &sigma0, kernel, horizon, opts)
}

/// Solve the joint system from an arbitrary `sigma(0)`.
pub fn solve_coupled_from(
    mu0: &GridMeasure,
    sigma0: &SensitivityBlock,
    kernel: &dyn Kernel,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<(Trajectory, SensitivityPath)> {
    opts.validate()?;
    check_initial(mu0)?;
    let n = mu0.n_max();
    let p = kernel.param_dim();
    if sigma0.param_dim() != p {
        return Err(Error::Dimension {
            expected: p,
            found: sigma0.param_dim(),
        });
    }
    for c in &sigma0.components {
        c.check_same_grid(n)?;
    }
    let times = checkpoint_times(0.0, horizon, opts.dt_checkpoint)?;
    let kmat = value_matrix(kernel, n);
    let partials: Vec<KernelMatrix> = (0..p).map(|m| partial_matrix(kernel, m, n)).collect();
    let guard = ForwardGuard::new(mu0, kernel.phi(), opts);
    let b = block_len(n);

    let mut y0 = vec![0.0; b * (p + 1)];
    to_block(mu0, &mut y0[..b]);
    for (m, c) in sigma0.components.iter().enumerate() {
        to_block(c, &mut y0[b * (m + 1)..b * (m + 2)]);
    }

    let (states, stats) = integrate(
        &y0,
        &times,
        |_, y, dy| {
            dy.fill(0.0);
            let (mu, sig) = y.split_at(b);
            let (dmu, dsig) = dy.split_at_mut(b);
            coag_block(&kmat, mu, mu, 0.5, dmu);
            for m in 0..p {
                let s = &sig[b * m..b * (m + 1)];
                let ds = &mut dsig[b * m..b * (m + 1)];
                coag_block(&kmat, mu, s, 1.0, ds);
                coag_block(&partials[m], mu, mu, 0.5, ds);
            }
        },
        &opts.integrator(),
        |t, y| guard.check(t, &mut y[..b]),
    )?;

    let mut measures = Vec::with_capacity(states.len());
    let mut blocks = Vec::with_capacity(states.len());
    for s in &states {
        measures.push(from_block(&s[..b]));
        blocks.push(SensitivityBlock {
            components: (0..p)
                .map(|m| from_block(&s[b * (m + 1)..b * (m + 2)]))
                .collect(),
        });
    }
    let traj = Trajectory::new(times.clone(), measures, stats)?;
    Ok((traj, SensitivityPath { times, blocks }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{make_kernel, KernelFamily, ParametricKernel};
    use crate::measures::BoundFunction;

    fn constant() -> ParametricKernel {
        make_kernel(
            KernelFamily::Constant,
            vec![1.0],
            vec![(0.0, 1.0)],
            BoundFunction::linear(1.0),
            64,
        )
        .unwrap()
    }

    #[test]
    fn rhs_examples() {
        let k = constant();
        let mu = GridMeasure::delta(8, 1, 1.0);
        let r = sensitivity_rhs(&mu, &GridMeasure::zeros(8), &k, 0).unwrap();
        assert_eq!(&r.weights()[..3], &[-1.0, 0.5, 0.0]);
        let sigma = GridMeasure::from_atoms(8, &[(2, 0.3), (7, -0.2)]);
        let r = sensitivity_rhs(&mu, &sigma, &k, 0).unwrap();
        assert!((r.mass() + r.overflow_mass).abs() < 1e-15);
        assert!(sensitivity_rhs(&mu, &sigma, &k, 1).is_err());
    }

    #[test]
    fn constant_kernel_scaling_identity() {
        let (_, sens) = solve_coupled(
            &GridMeasure::delta(64, 1, 1.0),
            &constant(),
            2.0,
            &SolveOptions::default(),
        )
        .unwrap();
        let s = sens.last().component(0);
        assert!((s.weight(1) + 0.25).abs() < 1e-8);
        assert!((s.number() + 0.25).abs() < 1e-8);
    }

    #[test]
    fn zero_source_gives_zero_sensitivity() {
        // empty initial measure: both the source and the transport term vanish
        let k = make_kernel(
            KernelFamily::AffineMix,
            vec![0.0, 0.0, 0.0],
            vec![(0.0, 1.0); 3],
            BoundFunction::linear(2.0),
            16,
        )
        .unwrap();
        let mu0 = GridMeasure::zeros(16);
        let (_, sens) = solve_coupled(&mu0, &k, 1.0, &SolveOptions::default()).unwrap();
        for b in sens.blocks() {
            for c in &b.components {
                assert_eq!(c, &GridMeasure::zeros(16));
            }
        }
    }

    #[test]
    fn sensitivity_carries_no_mass() {
        let k = make_kernel(
            KernelFamily::AffineMix,
            vec![1.0, 0.1, 0.05],
            vec![(0.0, 2.0), (0.0, 0.5), (0.0, 0.25)],
            BoundFunction::linear(2.0),
            32,
        )
        .unwrap();
        let opts = SolveOptions {
            overflow_fraction_max: 1e-3,
            ..Default::default()
        };
        let (_, sens) = solve_coupled(&GridMeasure::delta(32, 1, 1.0), &k, 1.0, &opts).unwrap();
        for b in sens.blocks() {
            for c in &b.components {
                assert!((c.mass() + c.overflow_mass).abs() < 1e-10);
            }
        }
    }
}
