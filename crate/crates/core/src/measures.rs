//! Signed measures on the integer mass grid `1..=n_max`.
//!
//! A [`GridMeasure`] stores one weight per mass plus two overflow meters that
//! collect whatever coagulation pushes above `n_max`. Test functions live in
//! [`TestFunction`]; weighted norms are taken against a [`BoundFunction`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Signed measure on masses `1..=n_max` with overflow accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    weights: Vec<f64>,
    /// Total mass that left the grid.
    pub overflow_mass: f64,
    /// Total weight (particle number) that left the grid.
    pub overflow_number: f64,
}

impl GridMeasure {
    pub fn zeros(n_max: usize) -> Self {
        assert!(n_max >= 1, "grid needs at least one mass");
        GridMeasure {
            weights: vec![0.0; n_max],
            overflow_mass: 0.0,
            overflow_number: 0.0,
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("grid measure needs n_max >= 1"));
        }
        if let Some(k) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight at mass {}", k + 1)));
        }
        Ok(GridMeasure {
            weights,
            overflow_mass: 0.0,
            overflow_number: 0.0,
        })
    }

    /// `w * delta_mass`.
    pub fn delta(n_max: usize, mass: usize, w: f64) -> Self {
        Self::from_atoms(n_max, &[(mass, w)])
    }

    /// Sum of weighted Dirac masses; panics if a mass is off the grid.
    pub fn from_atoms(n_max: usize, atoms: &[(usize, f64)]) -> Self {
        let mut m = Self::zeros(n_max);
        for &(k, w) in atoms {
            assert!(k >= 1 && k <= n_max, "mass {k} outside 1..={n_max}");
            m.weights[k - 1] += w;
        }
        m
    }

    pub(crate) fn from_parts(weights: Vec<f64>, overflow_mass: f64, overflow_number: f64) -> Self {
        GridMeasure {
            weights,
            overflow_mass,
            overflow_number,
        }
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.weights.len()
    }

    /// Weight at mass `k` (1-based).
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k - 1]
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn check_same_grid(&self, other_n_max: usize) -> Result<()> {
        if self.n_max() != other_n_max {
            return Err(Error::Dimension {
                expected: self.n_max(),
                found: other_n_max,
            });
        }
        Ok(())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.overflow_mass.is_finite()
            && self.overflow_number.is_finite()
    }

    /// `(f, mu)`; overflow buckets are not included.
    pub fn pair(&self, f: &TestFunction) -> Result<f64> {
        self.check_same_grid(f.n_max())?;
        Ok(dot(f.values(), &self.weights))
    }

    /// `(1, mu)` on the grid.
    pub fn number(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(x, mu)` on the grid.
    pub fn mass(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 * w)
            .sum()
    }

    /// `sum_k phi(k)^p |w_k|`, overflow excluded.
    pub fn norm_p(&self, p: f64, phi: &BoundFunction) -> f64 {
        if p == 0.0 {
            return self.total_variation();
        }
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| phi.eval((i + 1) as u64).powf(p) * w.abs())
            .sum()
    }

    /// Weighted norm against a precomputed weight table (`table[k-1] = h(k)`).
    pub fn norm_weighted(&self, table: &[f64]) -> f64 {
        debug_assert_eq!(table.len(), self.n_max());
        self.weights
            .iter()
            .zip(table)
            .map(|(w, h)| h * w.abs())
            .sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// `|mu|`, with overflow meters replaced by their absolute values.
    pub fn abs(&self) -> GridMeasure {
        GridMeasure {
            weights: self.weights.iter().map(|w| w.abs()).collect(),
            overflow_mass: self.overflow_mass.abs(),
            overflow_number: self.overflow_number.abs(),
        }
    }

    pub fn scaled(&self, c: f64) -> GridMeasure {
        GridMeasure {
            weights: self.weights.iter().map(|w| c * w).collect(),
            overflow_mass: c * self.overflow_mass,
            overflow_number: c * self.overflow_number,
        }
    }

    /// `self += c * other`, overflow meters included.
    pub fn axpy(&mut self, c: f64, other: &GridMeasure) -> Result<()> {
        self.check_same_grid(other.n_max())?;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += c * b;
        }
        self.overflow_mass += c * other.overflow_mass;
        self.overflow_number += c * other.overflow_number;
        Ok(())
    }

    pub fn sub(&self, other: &GridMeasure) -> Result<GridMeasure> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &GridMeasure) -> Result<GridMeasure> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    /// Largest absolute weight difference, overflow excluded.
    pub fn max_abs_diff(&self, other: &GridMeasure) -> Result<f64> {
        self.check_same_grid(other.n_max())?;
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Real function sampled on the grid masses.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    values: Vec<f64>,
}

impl TestFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("test function needs n_max >= 1"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at mass {}", k + 1)));
        }
        Ok(TestFunction { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        TestFunction { values }
    }

    pub fn from_fn(n_max: usize, f: impl Fn(u64) -> f64) -> Self {
        TestFunction {
            values: (1..=n_max as u64).map(f).collect(),
        }
    }

    pub fn zeros(n_max: usize) -> Self {
        Self::constant(n_max, 0.0)
    }

    pub fn constant(n_max: usize, c: f64) -> Self {
        TestFunction {
            values: vec![c; n_max],
        }
    }

    pub fn indicator(n_max: usize, mass: usize) -> Self {
        Self::from_fn(n_max, |k| if k as usize == mass { 1.0 } else { 0.0 })
    }

    /// `f(x) = x`.
    pub fn identity(n_max: usize) -> Self {
        Self::from_fn(n_max, |k| k as f64)
    }

    pub fn phi_power(n_max: usize, phi: &BoundFunction, p: f64) -> Self {
        Self::from_fn(n_max, |k| phi.eval(k).powf(p))
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `f(k)`, with `f := 0` above the grid.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        if k > self.values.len() {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// `{f}(x, y) = f(x+y) - f(x) - f(y)`.
    pub fn curly(&self, x: usize, y: usize) -> f64 {
        assert!(x >= 1 && y >= 1, "masses are positive");
        self.at(x + y) - self.at(x) - self.at(y)
    }

    /// `max_k |f(k)| / phi(k)^p`.
    pub fn norm_p(&self, p: f64, phi: &BoundFunction) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() / phi.eval((i + 1) as u64).powf(p))
            .fold(0.0, f64::max)
    }

    /// `max_k |f(k)| / h(k)` for a precomputed weight table.
    pub fn norm_weighted(&self, table: &[f64]) -> f64 {
        debug_assert_eq!(table.len(), self.n_max());
        self.values
            .iter()
            .zip(table)
            .map(|(v, h)| v.abs() / h)
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &TestFunction) -> Result<TestFunction> {
        if self.n_max() != other.n_max() {
            return Err(Error::Dimension {
                expected: self.n_max(),
                found: other.n_max(),
            });
        }
        Ok(TestFunction {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &TestFunction) -> Result<TestFunction> {
        if self.n_max() != other.n_max() {
            return Err(Error::Dimension {
                expected: self.n_max(),
                found: other.n_max(),
            });
        }
        Ok(TestFunction {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// Weight function `phi >= 1` used by the bounds `K <= phi(x) phi(y)` and the
/// weighted norms.
#[derive(Clone)]
pub struct BoundFunction {
    name: String,
    eval: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
}

impl fmt::Debug for BoundFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundFunction")
            .field("name", &self.name)
            .finish()
    }
}

/// A grid point where `phi` fails to be `>= 1` or sub-additive.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundViolation {
    BelowOne { x: u64, value: f64 },
    NotSubadditive { x: u64, y: u64 },
}

impl BoundFunction {
    /// `phi(x) = scale * (1 + x)`.
    pub fn linear(scale: f64) -> Self {
        BoundFunction {
            name: format!("{scale}*(1+x)"),
            eval: Arc::new(move |x| scale * (1.0 + x as f64)),
        }
    }

    pub fn constant(c: f64) -> Self {
        BoundFunction {
            name: format!("{c}"),
            eval: Arc::new(move |_| c),
        }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        BoundFunction {
            name: name.into(),
            eval: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: u64) -> f64 {
        (self.eval)(x)
    }

    /// `[phi(1)^p, ..., phi(n_max)^p]`.
    pub fn table(&self, n_max: usize, p: f64) -> Vec<f64> {
        (1..=n_max as u64).map(|k| self.eval(k).powf(p)).collect()
    }

    /// Exhaustive scan of `phi >= 1` and `phi(x+y) <= phi(x) + phi(y)` for `x + y <= n_max`.
    pub fn violations_on_grid(&self, n_max: usize) -> Vec<BoundViolation> {
        let n = n_max as u64;
        let mut out = Vec::new();
        for x in 1..=n {
            let v = self.eval(x);
            if !(v >= 1.0) {
                out.push(BoundViolation::BelowOne { x, value: v });
            }
        }
        for x in 1..n {
            for y in x..=(n - x) {
                if self.eval(x + y) > (self.eval(x) + self.eval(y)) * (1.0 + 1e-14) {
                    out.push(BoundViolation::NotSubadditive { x, y });
                }
            }
        }
        out
    }
}

/// Symmetric kernel values on the grid, `K(i, j)` for `1 <= i, j <= n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_fn(n_max: usize, f: impl Fn(u64, u64) -> f64) -> Self {
        let mut data = vec![0.0; n_max * n_max];
        for i in 0..n_max {
            for j in 0..n_max {
                data[i * n_max + j] = f(i as u64 + 1, j as u64 + 1);
            }
        }
        KernelMatrix { n: n_max, data }
    }

    pub fn zeros(n_max: usize) -> Self {
        KernelMatrix {
            n: n_max,
            data: vec![0.0; n_max * n_max],
        }
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n
    }

    /// `K(x, y)` with 1-based masses.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[(x - 1) * self.n + (y - 1)]
    }

    /// Row of masses `x` (1-based), indexed by `y - 1`.
    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[(x - 1) * self.n..x * self.n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> KernelMatrix {
        KernelMatrix {
            n: self.n,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }
}

/// `{f}(x, y)` with the grid truncation `f(x+y) := 0` above `n_max`.
pub fn curly(f: &TestFunction, x: usize, y: usize) -> f64 {
    f.curly(x, y)
}

/// The bilinear coagulation measure
/// `F(mu, nu) = sum_{i,j} (delta_{i+j} - delta_i - delta_j) F(i,j) mu_i nu_j`.
///
/// Gains landing above `n_max` are metered into the overflow fields of the
/// result: `overflow_mass += (i+j) F mu_i nu_j` and `overflow_number += F mu_i nu_j`.
pub fn coag_apply(kernel: &KernelMatrix, mu: &GridMeasure, nu: &GridMeasure) -> Result<GridMeasure> {
    let mut out = GridMeasure::zeros(mu.n_max());
    coag_accumulate(kernel, mu, nu, 1.0, &mut out)?;
    Ok(out)
}

/// `out += scale * F(mu, nu)`, overflow meters included.
pub fn coag_accumulate(
    kernel: &KernelMatrix,
    mu: &GridMeasure,
    nu: &GridMeasure,
    scale: f64,
    out: &mut GridMeasure,
) -> Result<()> {
    let n = mu.n_max();
    mu.check_same_grid(nu.n_max())?;
    mu.check_same_grid(kernel.n_max())?;
    mu.check_same_grid(out.n_max())?;
    let (w, om, on) = coag_raw(kernel, mu.weights(), nu.weights(), scale, out.weights_mut());
    debug_assert_eq!(w, n);
    out.overflow_mass += om;
    out.overflow_number += on;
    Ok(())
}

/// Slice-level kernel of [`coag_accumulate`]. Adds `scale * F(mu, nu)` into
/// `out` and returns `(n, overflow_mass_increment, overflow_number_increment)`.
pub(crate) fn coag_raw(
    kernel: &KernelMatrix,
    mu: &[f64],
    nu: &[f64],
    scale: f64,
    out: &mut [f64],
) -> (usize, f64, f64) {
    let n = mu.len();
    let mut of_mass = 0.0;
    let mut of_number = 0.0;
    for i in 1..=n {
        let mi = mu[i - 1];
        if mi == 0.0 {
            continue;
        }
        let row = kernel.row(i);
        let mut loss_i = 0.0;
        for j in 1..=n {
            let nj = nu[j - 1];
            if nj == 0.0 {
                continue;
            }
            let w = scale * row[j - 1] * mi * nj;
            loss_i += w;
            out[j - 1] -= w;
            let k = i + j;
            if k <= n {
                out[k - 1] += w;
            } else {
                of_mass += k as f64 * w;
                of_number += w;
            }
        }
        out[i - 1] -= loss_i;
    }
    (n, of_mass, of_number)
}

/// `sign(rho_k)` per mass, with `sign(0) = 0`.
pub fn sign_density(rho: &GridMeasure) -> TestFunction {
    TestFunction::from_vec_unchecked(
        rho.weights()
            .iter()
            .map(|&w| {
                if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
