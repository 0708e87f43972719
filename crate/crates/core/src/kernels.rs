//! Parametric coagulation kernels `K^lambda(x, y)` with analytic
//! `lambda`-partials, the bound function `phi` they are validated against, and
//! the indicator truncation `K^N = K * 1{phi(x) phi(y) < N}`.

use std::fmt;

use crate::error::{Error, Result};
use crate::measures::{BoundFunction, KernelMatrix};

/// Relative slack applied when comparing kernel values to `phi(x) phi(y)`.
const BOUND_SLACK: f64 = 1e-12;

/// A symmetric non-negative kernel depending on a real parameter vector.
///
/// Implementors provide the value and gradient at an arbitrary parameter; the
/// convenience methods evaluate at the kernel's own [`Kernel::params`].
pub trait Kernel: Send + Sync {
    fn param_dim(&self) -> usize;

    fn params(&self) -> &[f64];

    /// Closed box `[lo, hi]` per component.
    fn param_box(&self) -> &[(f64, f64)];

    fn phi(&self) -> &BoundFunction;

    fn eval_at(&self, x: u64, y: u64, lambda: &[f64]) -> f64;

    /// `d K / d lambda_m` at `lambda`.
    fn partial_at(&self, m: usize, x: u64, y: u64, lambda: &[f64]) -> f64;

    /// Uniform bound on second `lambda`-derivatives, when known.
    fn hess_bound(&self) -> Option<f64> {
        None
    }

    fn eval(&self, x: u64, y: u64) -> f64 {
        self.eval_at(x, y, self.params())
    }

    fn partial(&self, m: usize, x: u64, y: u64) -> f64 {
        self.partial_at(m, x, y, self.params())
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn params(&self) -> &[f64] {
        (**self).params()
    }
    fn param_box(&self) -> &[(f64, f64)] {
        (**self).param_box()
    }
    fn phi(&self) -> &BoundFunction {
        (**self).phi()
    }
    fn eval_at(&self, x: u64, y: u64, lambda: &[f64]) -> f64 {
        (**self).eval_at(x, y, lambda)
    }
    fn partial_at(&self, m: usize, x: u64, y: u64, lambda: &[f64]) -> f64 {
        (**self).partial_at(m, x, y, lambda)
    }
    fn hess_bound(&self) -> Option<f64> {
        (**self).hess_bound()
    }
}

/// Grid values `K(i, j)` at the kernel's parameter.
pub fn value_matrix(k: &dyn Kernel, n_max: usize) -> KernelMatrix {
    let lambda = k.params();
    KernelMatrix::from_fn(n_max, |x, y| k.eval_at(x, y, lambda))
}

/// Grid values of `d K / d lambda_m`.
pub fn partial_matrix(k: &dyn Kernel, m: usize, n_max: usize) -> KernelMatrix {
    let lambda = k.params();
    KernelMatrix::from_fn(n_max, |x, y| k.partial_at(m, x, y, lambda))
}

/// Catalog of kernel shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFamily {
    /// `lambda_1`
    Constant,
    /// `lambda_1 (x + y)`
    Additive,
    /// `lambda_1 x y`
    Multiplicative,
    /// `lambda_1 + lambda_2 (x + y) + lambda_3 x y`
    AffineMix,
    /// `lambda_1 (x^a y^b + x^b y^a)` with `a, b >= 0`, `a + b <= 1`
    Power { a: f64, b: f64 },
}

impl KernelFamily {
    pub fn param_dim(&self) -> usize {
        match self {
            KernelFamily::AffineMix => 3,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Constant => "constant",
            KernelFamily::Additive => "additive",
            KernelFamily::Multiplicative => "multiplicative",
            KernelFamily::AffineMix => "affine-mix",
            KernelFamily::Power { .. } => "power",
        }
    }

    /// Parse a family name; `power` takes its exponents from `exponents`.
    pub fn parse(name: &str, exponents: Option<(f64, f64)>) -> Result<Self> {
        let fam = match name {
            "constant" => KernelFamily::Constant,
            "additive" => KernelFamily::Additive,
            "multiplicative" => KernelFamily::Multiplicative,
            "affine-mix" => KernelFamily::AffineMix,
            "power" => {
                let (a, b) = exponents
                    .ok_or_else(|| Error::Spec("power family needs exponents [a, b]".into()))?;
                KernelFamily::Power { a, b }
            }
            other => return Err(Error::Spec(format!("unknown kernel family `{other}`"))),
        };
        if name != "power" && exponents.is_some() {
            return Err(Error::Spec(format!("family `{name}` takes no exponents")));
        }
        Ok(fam)
    }

    fn validate(&self) -> Result<()> {
        if let KernelFamily::Power { a, b } = *self {
            if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
                return Err(Error::Spec(format!(
                    "power exponents must satisfy a, b >= 0 and a + b <= 1 (got a = {a}, b = {b})"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    fn eval(&self, x: f64, y: f64, l: &[f64]) -> f64 {
        match *self {
            KernelFamily::Constant => l[0],
            KernelFamily::Additive => l[0] * (x + y),
            KernelFamily::Multiplicative => l[0] * x * y,
            KernelFamily::AffineMix => l[0] + l[1] * (x + y) + l[2] * x * y,
            KernelFamily::Power { a, b } => l[0] * power_shape(x, y, a, b),
        }
    }

    #[inline]
    fn partial(&self, m: usize, x: f64, y: f64) -> f64 {
        match (*self, m) {
            (KernelFamily::Constant, 0) => 1.0,
            (KernelFamily::Additive, 0) => x + y,
            (KernelFamily::Multiplicative, 0) => x * y,
            (KernelFamily::AffineMix, 0) => 1.0,
            (KernelFamily::AffineMix, 1) => x + y,
            (KernelFamily::AffineMix, 2) => x * y,
            (KernelFamily::Power { a, b }, 0) => power_shape(x, y, a, b),
            _ => panic!("parameter index {m} out of range for {}", self.name()),
        }
    }
}

#[inline]
fn power_shape(x: f64, y: f64, a: f64, b: f64) -> f64 {
    x.powf(a) * y.powf(b) + x.powf(b) * y.powf(a)
}

/// A catalog kernel at a parameter point inside its box.
#[derive(Clone, Debug)]
pub struct ParametricKernel {
    family: KernelFamily,
    lambda: Vec<f64>,
    param_box: Vec<(f64, f64)>,
    phi: BoundFunction,
}

impl ParametricKernel {
    /// Build a catalog kernel without checking the `phi` bounds.
    ///
    /// Shape checks (parameter count, box, exponents) still apply. Use
    /// [`make_kernel`] for the validated constructor.
    pub fn unchecked(
        family: KernelFamily,
        lambda: Vec<f64>,
        param_box: Vec<(f64, f64)>,
        phi: BoundFunction,
    ) -> Result<Self> {
        family.validate()?;
        let p = family.param_dim();
        if lambda.len() != p {
            return Err(Error::Spec(format!(
                "family `{}` has {p} parameter(s), got {}",
                family.name(),
                lambda.len()
            )));
        }
        if param_box.len() != p {
            return Err(Error::Spec(format!(
                "parameter box has {} interval(s), family `{}` needs {p}",
                param_box.len(),
                family.name()
            )));
        }
        for (m, &(lo, hi)) in param_box.iter().enumerate() {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Spec(format!(
                    "parameter box component {m} must satisfy 0 <= lo <= hi < inf (got [{lo}, {hi}])"
                )));
            }
        }
        check_in_box(&lambda, &param_box)?;
        Ok(ParametricKernel {
            family,
            lambda,
            param_box,
            phi,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Same kernel at another parameter point in the box.
    pub fn with_params(&self, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != self.lambda.len() {
            return Err(Error::invalid("parameter dimension changed"));
        }
        check_in_box(&lambda, &self.param_box)?;
        Ok(ParametricKernel {
            lambda,
            ..self.clone()
        })
    }
}

impl Kernel for ParametricKernel {
    fn param_dim(&self) -> usize {
        self.lambda.len()
    }

    fn params(&self) -> &[f64] {
        &self.lambda
    }

    fn param_box(&self) -> &[(f64, f64)] {
        &self.param_box
    }

    fn phi(&self) -> &BoundFunction {
        &self.phi
    }

    fn eval_at(&self, x: u64, y: u64, lambda: &[f64]) -> f64 {
        self.family.eval(x as f64, y as f64, lambda)
    }

    fn partial_at(&self, m: usize, x: u64, y: u64, _lambda: &[f64]) -> f64 {
        self.family.partial(m, x as f64, y as f64)
    }

    fn hess_bound(&self) -> Option<f64> {
        // every catalog family is linear in lambda
        Some(0.0)
    }
}

fn check_in_box(lambda: &[f64], param_box: &[(f64, f64)]) -> Result<()> {
    for (m, (&l, &(lo, hi))) in lambda.iter().zip(param_box).enumerate() {
        if !(l >= lo && l <= hi) {
            return Err(Error::ParamBox {
                lambda: lambda.to_vec(),
                detail: format!("component {m} = {l} not in [{lo}, {hi}]"),
            });
        }
    }
    Ok(())
}

/// Corners of a parameter box (`2^p` points).
pub fn box_corners(param_box: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let p = param_box.len();
    (0..1usize << p)
        .map(|mask| {
            param_box
                .iter()
                .enumerate()
                .map(|(m, &(lo, hi))| if mask >> m & 1 == 1 { hi } else { lo })
                .collect()
        })
        .collect()
}

/// First asymmetric grid pair, if any.
pub fn find_asymmetry(k: &dyn Kernel, n_max: usize) -> Option<(u64, u64)> {
    let lambda = k.params();
    let n = n_max as u64;
    for x in 1..=n {
        for y in (x + 1)..=n {
            let a = k.eval_at(x, y, lambda);
            let b = k.eval_at(y, x, lambda);
            if (a - b).abs() > BOUND_SLACK * a.abs().max(b.abs()) {
                return Some((x, y));
            }
        }
    }
    None
}

/// Which bound a [`BoundBreach`] refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// `K(x, y) <= phi(x) phi(y)`
    Value,
    /// `|d K / d lambda_m| <= phi(x) phi(y)`
    Partial(usize),
    /// `K(x, y) >= 0`
    Negative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundBreach {
    pub kind: BoundKind,
    pub x: u64,
    pub y: u64,
    pub corner: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

impl fmt::Display for BoundBreach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            BoundKind::Value => "K".to_string(),
            BoundKind::Partial(m) => format!("|dK/dlambda_{}|", m + 1),
            BoundKind::Negative => "-K".to_string(),
        };
        write!(
            f,
            "{what}({}, {}) = {} exceeds {} at lambda = {:?}",
            self.x, self.y, self.value, self.bound, self.corner
        )
    }
}

/// Exhaustive scan of `K >= 0`, `K <= phi phi` and `|dK| <= phi phi` over the
/// grid and all corners of the parameter box.
///
/// Catalog kernels are linear in `lambda`, so corner checks cover the box.
pub fn bound_breaches(k: &dyn Kernel, n_max: usize) -> Vec<BoundBreach> {
    let phi = k.phi();
    let n = n_max as u64;
    let phis: Vec<f64> = (1..=n).map(|x| phi.eval(x)).collect();
    let mut out = Vec::new();
    for corner in box_corners(k.param_box()) {
        for x in 1..=n {
            for y in x..=n {
                let bound = phis[x as usize - 1] * phis[y as usize - 1];
                let slack = bound * (1.0 + BOUND_SLACK);
                let v = k.eval_at(x, y, &corner);
                if v < 0.0 {
                    out.push(BoundBreach {
                        kind: BoundKind::Negative,
                        x,
                        y,
                        corner: corner.clone(),
                        value: v,
                        bound: 0.0,
                    });
                }
                if v > slack {
                    out.push(BoundBreach {
                        kind: BoundKind::Value,
                        x,
                        y,
                        corner: corner.clone(),
                        value: v,
                        bound,
                    });
                }
                for m in 0..k.param_dim() {
                    let g = k.partial_at(m, x, y, &corner);
                    if g.abs() > slack {
                        out.push(BoundBreach {
                            kind: BoundKind::Partial(m),
                            x,
                            y,
                            corner: corner.clone(),
                            value: g,
                            bound,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Validated kernel constructor.
///
/// Rejects asymmetric kernels and any violation of `K <= phi phi` or
/// `|dK| <= phi phi` on `1..=n_max` across the parameter box.
pub fn make_kernel(
    family: KernelFamily,
    lambda: Vec<f64>,
    param_box: Vec<(f64, f64)>,
    phi: BoundFunction,
    n_max: usize,
) -> Result<ParametricKernel> {
    let k = ParametricKernel::unchecked(family, lambda, param_box, phi)?;
    validate_kernel(&k, n_max)?;
    Ok(k)
}

/// Symmetry and bound checks shared by [`make_kernel`] and custom kernels.
pub fn validate_kernel(k: &dyn Kernel, n_max: usize) -> Result<()> {
    if let Some((x, y)) = find_asymmetry(k, n_max) {
        return Err(Error::Spec(format!("kernel is not symmetric at ({x}, {y})")));
    }
    if let Some(b) = bound_breaches(k, n_max).into_iter().next() {
        return Err(Error::Hypothesis(b.to_string()));
    }
    Ok(())
}

/// `K * 1{phi(x) phi(y) < N}`; the gradient carries the same indicator.
#[derive(Clone, Debug)]
pub struct TruncatedKernel<K> {
    base: K,
    level: f64,
}

pub fn truncate<K: Kernel>(base: K, level: f64) -> Result<TruncatedKernel<K>> {
    if !(level > 0.0) {
        return Err(Error::invalid(format!("truncation level must be > 0 (got {level})")));
    }
    Ok(TruncatedKernel { base, level })
}

impl<K: Kernel> TruncatedKernel<K> {
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn base(&self) -> &K {
        &self.base
    }

    #[inline]
    fn active(&self, x: u64, y: u64) -> bool {
        let phi = self.base.phi();
        phi.eval(x) * phi.eval(y) < self.level
    }
}

impl<K: Kernel> Kernel for TruncatedKernel<K> {
    fn param_dim(&self) -> usize {
        self.base.param_dim()
    }
    fn params(&self) -> &[f64] {
        self.base.params()
    }
    fn param_box(&self) -> &[(f64, f64)] {
        self.base.param_box()
    }
    fn phi(&self) -> &BoundFunction {
        self.base.phi()
    }
    fn eval_at(&self, x: u64, y: u64, lambda: &[f64]) -> f64 {
        if self.active(x, y) {
            self.base.eval_at(x, y, lambda)
        } else {
            0.0
        }
    }
    fn partial_at(&self, m: usize, x: u64, y: u64, lambda: &[f64]) -> f64 {
        if self.active(x, y) {
            self.base.partial_at(m, x, y, lambda)
        } else {
            0.0
        }
    }
    fn hess_bound(&self) -> Option<f64> {
        self.base.hess_bound()
    }
}

/// A kernel re-evaluated at a different parameter point.
///
/// Used by finite-difference legs; the box check happens at construction.
#[derive(Clone, Debug)]
pub struct AtParams<K> {
    base: K,
    lambda: Vec<f64>,
}

impl<K: Kernel> AtParams<K> {
    pub fn new(base: K, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != base.param_dim() {
            return Err(Error::invalid("parameter dimension mismatch"));
        }
        check_in_box(&lambda, base.param_box())?;
        Ok(AtParams { base, lambda })
    }

    /// `lambda + delta * e_m`.
    pub fn shifted(base: K, m: usize, delta: f64) -> Result<Self> {
        if m >= base.param_dim() {
            return Err(Error::invalid(format!("parameter index {m} out of range")));
        }
        let mut lambda = base.params().to_vec();
        lambda[m] += delta;
        Self::new(base, lambda)
    }
}

impl<K: Kernel> Kernel for AtParams<K> {
    fn param_dim(&self) -> usize {
        self.lambda.len()
    }
    fn params(&self) -> &[f64] {
        &self.lambda
    }
    fn param_box(&self) -> &[(f64, f64)] {
        self.base.param_box()
    }
    fn phi(&self) -> &BoundFunction {
        self.base.phi()
    }
    fn eval_at(&self, x: u64, y: u64, lambda: &[f64]) -> f64 {
        self.base.eval_at(x, y, lambda)
    }
    fn partial_at(&self, m: usize, x: u64, y: u64, lambda: &[f64]) -> f64 {
        self.base.partial_at(m, x, y, lambda)
    }
    fn hess_bound(&self) -> Option<f64> {
        self.base.hess_bound()
    }
}

/// Max over grid pairs and components of
/// `|dK/dlambda_m - (K(lambda + h e_m) - K(lambda - h e_m)) / 2h|`.
pub fn grad_check(k: &dyn Kernel, lambda: &[f64], h: f64, n_max: usize) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    if lambda.len() != k.param_dim() {
        return Err(Error::invalid("parameter dimension mismatch"));
    }
    let mut plus = lambda.to_vec();
    let mut minus = lambda.to_vec();
    let n = n_max as u64;
    let mut worst: f64 = 0.0;
    for m in 0..k.param_dim() {
        plus[m] = lambda[m] + h;
        minus[m] = lambda[m] - h;
        check_in_box(&plus, k.param_box())?;
        check_in_box(&minus, k.param_box())?;
        for x in 1..=n {
            for y in 1..=n {
                let fd = (k.eval_at(x, y, &plus) - k.eval_at(x, y, &minus)) / (2.0 * h);
                worst = worst.max((k.partial_at(m, x, y, lambda) - fd).abs());
            }
        }
        plus[m] = lambda[m];
        minus[m] = lambda[m];
    }
    Ok(worst)
}

/// Grid summary of a kernel: `M = max K`, and `max |dK|` over components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBounds {
    pub max_value: f64,
    pub max_partial: f64,
}

pub fn grid_bounds(k: &dyn Kernel, n_max: usize) -> KernelBounds {
    let vm = value_matrix(k, n_max);
    let max_partial = (0..k.param_dim())
        .map(|m| partial_matrix(k, m, n_max).max_abs())
        .fold(0.0, f64::max);
    KernelBounds {
        max_value: vm.max_abs(),
        max_partial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi() -> BoundFunction {
        BoundFunction::linear(1.0)
    }

    fn catalog(n_max: usize) -> Vec<ParametricKernel> {
        vec![
            make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 1.0)], phi(), n_max).unwrap(),
            make_kernel(KernelFamily::Additive, vec![0.5], vec![(0.0, 1.0)], phi(), n_max).unwrap(),
            make_kernel(KernelFamily::Multiplicative, vec![1.0], vec![(0.0, 1.0)], phi(), n_max)
                .unwrap(),
            make_kernel(
                KernelFamily::AffineMix,
                vec![1.0, 1.0, 1.0],
                vec![(0.0, 2.0); 3],
                BoundFunction::linear(2.0),
                n_max,
            )
            .unwrap(),
            make_kernel(
                KernelFamily::Power { a: 0.5, b: 0.5 },
                vec![1.0],
                vec![(0.0, 1.0)],
                phi(),
                n_max,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn catalog_examples() {
        let c = make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 1.0)], phi(), 8).unwrap();
        assert_eq!(c.eval(3, 5), 1.0);
        let m =
            make_kernel(KernelFamily::Multiplicative, vec![1.0], vec![(0.0, 1.0)], phi(), 8).unwrap();
        assert_eq!(m.eval(2, 3), 6.0);
        let a = make_kernel(
            KernelFamily::AffineMix,
            vec![1.0, 1.0, 1.0],
            vec![(0.0, 1.0); 3],
            BoundFunction::linear(2.0),
            8,
        )
        .unwrap();
        assert_eq!(a.eval(1, 1), 4.0);
    }

    #[test]
    fn catalog_symmetric_and_bounded() {
        for k in catalog(64) {
            assert_eq!(find_asymmetry(&k, 64), None, "{:?}", k.family());
            assert!(bound_breaches(&k, 64).is_empty(), "{:?}", k.family());
        }
    }

    #[test]
    fn rejects_bound_violation() {
        let err = make_kernel(
            KernelFamily::Multiplicative,
            vec![1.0],
            vec![(0.0, 1.0)],
            BoundFunction::constant(1.0),
            8,
        )
        .unwrap_err();
        match err {
            Error::Hypothesis(msg) => assert!(msg.contains("(1, 2)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        // constant family breaks its bound only at the upper box corner
        let err =
            make_kernel(KernelFamily::Constant, vec![1.0], vec![(0.0, 5.0)], phi(), 8).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            make_kernel(KernelFamily::AffineMix, vec![1.0], vec![(0.0, 1.0)], phi(), 4),
            Err(Error::Spec(_))
        ));
        assert!(matches!(
            make_kernel(
                KernelFamily::Power { a: 0.8, b: 0.5 },
                vec![1.0],
                vec![(0.0, 1.0)],
                phi(),
                4
            ),
            Err(Error::Spec(_))
        ));
        assert!(matches!(
            make_kernel(KernelFamily::Constant, vec![2.0], vec![(0.0, 1.0)], phi(), 4),
            Err(Error::ParamBox { .. })
        ));
    }

    struct Lopsided(Vec<f64>, Vec<(f64, f64)>, BoundFunction);

    impl Kernel for Lopsided {
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
        fn eval_at(&self, x: u64, _y: u64, l: &[f64]) -> f64 {
            l[0] * x as f64
        }
        fn partial_at(&self, _m: usize, x: u64, _y: u64, _l: &[f64]) -> f64 {
            x as f64
        }
    }

    #[test]
    fn rejects_asymmetric_kernel() {
        let k = Lopsided(vec![0.1], vec![(0.0, 0.2)], phi());
        assert!(matches!(validate_kernel(&k, 6), Err(Error::Spec(_))));
    }

    #[test]
    fn grad_check_affine_families_exact() {
        let c = &catalog(16)[0];
        assert!(grad_check(c, &[0.5], 1e-3, 16).unwrap() <= 1e-12);
        let a = &catalog(16)[3];
        // linear in lambda: only roundoff of size |K| eps / h remains
        assert!(grad_check(a, &[1.0, 1.0, 1.0], 0.5, 16).unwrap() <= 1e-11);
        let p = &catalog(16)[4];
        assert!(grad_check(p, &[0.5], 0.25, 16).unwrap() <= 1e-11);
    }

    #[test]
    fn grad_check_needs_interior_point() {
        let c = &catalog(8)[0];
        assert!(matches!(grad_check(c, &[1.0], 1e-3, 8), Err(Error::ParamBox { .. })));
        assert!(grad_check(c, &[0.5], 0.0, 8).is_err());
    }

    /// `K = exp(lambda) * (1 + xy) / 4`, nonlinear in lambda.
    struct Exponential(Vec<f64>, Vec<(f64, f64)>, BoundFunction);

    impl Kernel for Exponential {
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
        fn eval_at(&self, x: u64, y: u64, l: &[f64]) -> f64 {
            l[0].exp() * (1.0 + (x * y) as f64) / 4.0
        }
        fn partial_at(&self, _m: usize, x: u64, y: u64, l: &[f64]) -> f64 {
            self.eval_at(x, y, l)
        }
    }

    #[test]
    fn grad_check_smooth_family_is_second_order() {
        let k = Exponential(vec![0.5], vec![(0.0, 1.0)], phi());
        let e1 = grad_check(&k, &[0.5], 1e-2, 8).unwrap();
        let e2 = grad_check(&k, &[0.5], 5e-3, 8).unwrap();
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn truncation_examples() {
        let m = catalog(8)[2].clone();
        let t = truncate(&m, 6.0).unwrap();
        assert_eq!(t.eval(1, 1), 1.0);
        assert_eq!(t.eval(1, 2), 0.0);
        assert_eq!(t.partial(0, 1, 2), 0.0);
        let big = truncate(&m, 1e9).unwrap();
        for x in 1..=8 {
            for y in 1..=8 {
                assert_eq!(big.eval(x, y), m.eval(x, y));
            }
        }
        assert!(truncate(&m, 0.0).is_err());
    }

    #[test]
    fn truncation_monotone_in_level() {
        let m = catalog(32)[2].clone();
        let levels = [4.0, 16.0, 64.0, 256.0, 1024.0];
        for w in levels.windows(2) {
            let lo = truncate(&m, w[0]).unwrap();
            let hi = truncate(&m, w[1]).unwrap();
            for x in 1..=32 {
                for y in 1..=32 {
                    assert!(lo.eval(x, y) <= hi.eval(x, y));
                    assert!(lo.eval(x, y) <= m.eval(x, y));
                    assert!(lo.eval(x, y) <= w[0]);
                }
            }
        }
    }

    #[test]
    fn corners_enumerate_box() {
        let c = box_corners(&[(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(c.len(), 4);
        assert!(c.contains(&vec![0.0, 3.0]));
        assert!(c.contains(&vec![1.0, 2.0]));
    }

    #[test]
    fn family_parse() {
        assert_eq!(KernelFamily::parse("additive", None).unwrap(), KernelFamily::Additive);
        assert_eq!(
            KernelFamily::parse("power", Some((0.5, 0.25))).unwrap(),
            KernelFamily::Power { a: 0.5, b: 0.25 }
        );
        assert!(KernelFamily::parse("power", None).is_err());
        assert!(KernelFamily::parse("brownian", None).is_err());
        assert!(KernelFamily::parse("constant", Some((0.1, 0.1))).is_err());
    }
}
