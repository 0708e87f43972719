//! Smoluchowski coagulation on an integer mass grid with parametric kernels,
//! and three routes to the parameter sensitivity `d mu_t / d lambda`: the
//! coupled sensitivity ODE, the backward-propagator representation formula,
//! and a coupled Marcus–Lushnikov finite-difference estimator.

pub mod error;
pub mod forward;
pub mod io;
pub mod kernels;
pub mod measures;
pub mod ode;
pub mod propagator;
pub mod sensitivity;
pub mod stochastic;
pub mod validation;

pub use error::{Error, Result};
pub use forward::{solve_forward, SolveOptions, Trajectory};
pub use kernels::{make_kernel, Kernel, KernelFamily, ParametricKernel};
pub use measures::{BoundFunction, GridMeasure, KernelMatrix, TestFunction};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
