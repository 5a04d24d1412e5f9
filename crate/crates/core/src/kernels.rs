//! Compactly supported smoothing kernels, their norms and moment order, and
//! the product kernel `H (x) K` with the optional cohort skew
//! `phi(t, a) = (t, t - a)`.
//!
//! Order is counted as in the moment definition
//! `int k^(l-1) K(k) dk = 1{l = 1}` for `l = 1, .., l0 - 1`: the largest such
//! `l0` is reported, so a symmetric second-order kernel (Epanechnikov) has
//! `l0 = 3`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::midpoint_split;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("kernel integrates to {0}, not 1")]
    Normalization(f64),
    #[error("detected order {detected} is below the declared order {declared}")]
    OrderMismatch { declared: u32, detected: u32 },
    #[error("unknown kernel '{0}'")]
    UnknownName(String),
    #[error("invalid kernel table: {0}")]
    Table(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Box,
    Triangular,
    Epanechnikov,
    /// `15/32 (3 - 10 x^2 + 7 x^4)`: integrates to one, vanishing moments of
    /// order one to three.
    FourthOrder,
    /// Piecewise-linear interpolation of `(x, value)` nodes, zero outside.
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

impl Shape {
    #[inline]
    fn eval(&self, x: f64) -> f64 {
        match self {
            Shape::Box => {
                if x.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            Shape::Triangular => (1.0 - x.abs()).max(0.0),
            Shape::Epanechnikov => {
                if x.abs() <= 1.0 {
                    0.75 * (1.0 - x * x)
                } else {
                    0.0
                }
            }
            Shape::FourthOrder => {
                if x.abs() <= 1.0 {
                    let x2 = x * x;
                    15.0 / 32.0 * (3.0 - 10.0 * x2 + 7.0 * x2 * x2)
                } else {
                    0.0
                }
            }
            Shape::Tabulated { xs, values } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let i = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
                let (x0, x1) = (xs[i - 1], xs[i]);
                let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
                values[i - 1] * (1.0 - w) + values[i] * w
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Shape::Tabulated { xs, .. } => xs.clone(),
            Shape::FourthOrder => {
                let r = (3.0f64 / 7.0).sqrt();
                vec![-1.0, -r, 0.0, r, 1.0]
            }
            _ => vec![-1.0, 0.0, 1.0],
        }
    }
}

/// A bounded kernel with compact support `[offset - r, offset + r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D {
    name: String,
    shape: Shape,
    offset: f64,
    support_radius: f64,
    declared_order: u32,
    norm_1: f64,
    norm_inf: f64,
}

fn fourth_order_norm_1() -> f64 {
    // Antiderivative of 15/32 (3 - 10x^2 + 7x^4); K < 0 on sqrt(3/7) < |x| < 1.
    let f = |x: f64| 15.0 / 32.0 * (3.0 * x - 10.0 / 3.0 * x.powi(3) + 1.4 * x.powi(5));
    let r = (3.0f64 / 7.0).sqrt();
    2.0 * (f(r) - f(0.0)) - 2.0 * (f(1.0) - f(r))
}

impl Kernel1D {
    fn builtin(name: &str, shape: Shape, order: u32, norm_1: f64, norm_inf: f64) -> Self {
        Kernel1D {
            name: name.to_string(),
            shape,
            offset: 0.0,
            support_radius: 1.0,
            declared_order: order,
            norm_1,
            norm_inf,
        }
    }

    pub fn uniform() -> Self {
        Self::builtin("box", Shape::Box, 3, 1.0, 0.5)
    }

    pub fn triangular() -> Self {
        Self::builtin("triangular", Shape::Triangular, 3, 1.0, 1.0)
    }

    pub fn epanechnikov() -> Self {
        Self::builtin("epanechnikov", Shape::Epanechnikov, 3, 1.0, 0.75)
    }

    pub fn fourth_order() -> Self {
        Self::builtin("fourth_order", Shape::FourthOrder, 5, fourth_order_norm_1(), 45.0 / 32.0)
    }

    pub fn by_name(name: &str) -> Result<Self, KernelError> {
        match name {
            "box" | "uniform" => Ok(Self::uniform()),
            "triangular" => Ok(Self::triangular()),
            "epanechnikov" => Ok(Self::epanechnikov()),
            "fourth_order" => Ok(Self::fourth_order()),
            other => Err(KernelError::UnknownName(other.to_string())),
        }
    }

    /// Kernel from `(x, value)` nodes, linearly interpolated and zero outside
    /// the outermost nodes. Must integrate to one; its order is detected.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self, KernelError> {
        if points.len() < 2 {
            return Err(KernelError::Table("need at least two nodes".into()));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(KernelError::Table("non-finite node".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(KernelError::Table("abscissae must be strictly increasing".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let values: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut norm_1 = 0.0;
        for w in points.windows(2) {
            let ((x0, v0), (x1, v1)) = (w[0], w[1]);
            let h = x1 - x0;
            norm_1 += if v0 * v1 >= 0.0 {
                0.5 * h * (v0.abs() + v1.abs())
            } else {
                // the segment crosses zero at fraction v0 / (v0 - v1)
                0.5 * h * (v0 * v0 + v1 * v1) / (v0.abs() + v1.abs())
            };
        }
        let norm_inf = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let support_radius = xs[0].abs().max(xs[xs.len() - 1].abs());
        let mut k = Kernel1D {
            name: "tabulated".into(),
            shape: Shape::Tabulated { xs, values },
            offset: 0.0,
            support_radius,
            declared_order: 1,
            norm_1,
            norm_inf,
        };
        k.declared_order = check_order(&k)?;
        Ok(k)
    }

    /// Reads a kernel table: one `x,value` pair per line, `#` comments and an
    /// optional `x,value` header allowed.
    pub fn from_table_file(path: &Path) -> Result<Self, KernelError> {
        let text = fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let (x, v) = line
                .split_once(',')
                .ok_or_else(|| KernelError::Table(format!("line {}: expected 'x,value'", i + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| KernelError::Table(format!("line {}: {e}", i + 1)))
            };
            points.push((parse(x)?, parse(v)?));
        }
        Self::tabulated(&points)
    }

    /// The same kernel translated so its support is `[0, 2r]`. Only the
    /// normalization moment survives the shift, so the declared order drops
    /// to 2.
    pub fn one_sided(&self) -> Self {
        let mut k = self.clone();
        k.offset = self.support_radius;
        k.support_radius = 2.0 * self.support_radius;
        k.declared_order = 2;
        k.name = format!("{}_one_sided", self.name);
        k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.shape.eval(x - self.offset)
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Interval outside which the kernel vanishes.
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            Shape::Tabulated { xs, .. } => (xs[0] + self.offset, xs[xs.len() - 1] + self.offset),
            _ => (self.offset - 1.0, self.offset + 1.0),
        }
    }

    pub fn declared_order(&self) -> u32 {
        self.declared_order
    }

    pub fn norm_1(&self) -> f64 {
        self.norm_1
    }

    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    /// Nodes where the kernel or its derivative may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.shape.breakpoints().into_iter().map(|x| x + self.offset).collect()
    }

    /// Validated `K_h`.
    pub fn scaled(&self, h: f64) -> Result<ScaledKernel<'_>, KernelError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(KernelError::Bandwidth(h));
        }
        Ok(ScaledKernel {
            kernel: self,
            h,
            inv_h: 1.0 / h,
        })
    }
}

/// `K_h(x) = K(x / h) / h`.
#[derive(Clone, Copy, Debug)]
pub struct ScaledKernel<'a> {
    kernel: &'a Kernel1D,
    h: f64,
    inv_h: f64,
}

impl ScaledKernel<'_> {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.kernel.eval(x * self.inv_h) * self.inv_h
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Interval outside which `K_h` vanishes.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.kernel.support();
        (lo * self.h, hi * self.h)
    }
}

pub fn eval_scaled(k: &Kernel1D, h: f64, x: f64) -> Result<f64, KernelError> {
    Ok(k.scaled(h)?.eval(x))
}

/// `|K_h|_{1,inf} = (|K_h|_1 |K_h|_inf)^{1/2} = (|K|_1 |K|_inf / h)^{1/2}`.
pub fn interp_norm(k: &Kernel1D, h: f64) -> f64 {
    (k.norm_1() * k.norm_inf() / h).sqrt()
}

const MOMENT_TOL: f64 = 1e-8;
const MAX_ORDER: u32 = 12;

/// Moment `int x^p K(x) dx` by the split midpoint rule on the support.
pub fn moment(k: &Kernel1D, p: i32) -> f64 {
    let (lo, hi) = k.support();
    midpoint_split(|x| x.powi(p) * k.eval(x), lo, hi, &k.breakpoints(), 2e-5)
}

/// Largest `l0` such that the moment conditions hold for all `l <= l0 - 1`.
/// Fails if the kernel does not integrate to one or the detected order is
/// below the declared one.
pub fn check_order(k: &Kernel1D) -> Result<u32, KernelError> {
    let mass = moment(k, 0);
    if (mass - 1.0).abs() > MOMENT_TOL {
        return Err(KernelError::Normalization(mass));
    }
    let mut order = 2;
    while order < MAX_ORDER && moment(k, order as i32 - 1).abs() <= MOMENT_TOL {
        order += 1;
    }
    if order < k.declared_order {
        return Err(KernelError::OrderMismatch {
            declared: k.declared_order,
            detected: order,
        });
    }
    Ok(order)
}

/// Kernel selection in configuration files: a built-in name or a table file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Named(String),
    Table {
        #[serde(rename = "table")]
        table: String,
    },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Named("epanechnikov".into())
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel1D, KernelError> {
        match self {
            KernelSpec::Named(name) => Kernel1D::by_name(name),
            KernelSpec::Table { table } => Kernel1D::from_table_file(Path::new(table)),
        }
    }
}

/// `H (x) K`, optionally composed with the cohort skew.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewedProductKernel {
    pub time_kernel: Kernel1D,
    pub age_kernel: Kernel1D,
    pub skew: bool,
}

impl SkewedProductKernel {
    pub fn new(time_kernel: Kernel1D, age_kernel: Kernel1D, skew: bool) -> Self {
        SkewedProductKernel {
            time_kernel,
            age_kernel,
            skew,
        }
    }
}

/// With skew: `H_h1(ds) K_h2(ds - du)`; without: `H_h1(ds) K_h2(du)`.
pub fn eval_skewed(
    pk: &SkewedProductKernel,
    h1: f64,
    h2: f64,
    ds: f64,
    du: f64,
) -> Result<f64, KernelError> {
    let time = pk.time_kernel.scaled(h1)?;
    let age = pk.age_kernel.scaled(h2)?;
    let second = if pk.skew { ds - du } else { du };
    Ok(time.eval(ds) * age.eval(second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all() -> Vec<Kernel1D> {
        vec![
            Kernel1D::uniform(),
            Kernel1D::triangular(),
            Kernel1D::epanechnikov(),
            Kernel1D::fourth_order(),
        ]
    }

    #[test]
    fn scaled_values() {
        let k = Kernel1D::epanechnikov();
        assert_eq!(eval_scaled(&k, 0.5, 0.0).unwrap(), 0.75 / 0.5);
        assert_eq!(eval_scaled(&k, 0.5, 0.6).unwrap(), 0.0);
        assert!((eval_scaled(&k, 0.5, 0.25).unwrap() - 1.125).abs() < 1e-15);
        assert!(eval_scaled(&k, 0.0, 0.1).is_err());
        assert!(eval_scaled(&k, -1.0, 0.1).is_err());
    }

    #[test]
    fn interp_norm_values() {
        let k = Kernel1D::epanechnikov();
        assert!((interp_norm(&k, 1.0) - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((interp_norm(&k, 0.01) - 75f64.sqrt()).abs() < 1e-12);
        for h in [1.0, 0.3, 0.01] {
            let ratio = interp_norm(&k, h / 2.0) / interp_norm(&k, h);
            assert!((ratio - 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn orders() {
        assert_eq!(check_order(&Kernel1D::epanechnikov()).unwrap(), 3);
        assert_eq!(check_order(&Kernel1D::uniform()).unwrap(), 3);
        assert_eq!(check_order(&Kernel1D::triangular()).unwrap(), 3);
        assert_eq!(check_order(&Kernel1D::fourth_order()).unwrap(), 5);
        assert_eq!(check_order(&Kernel1D::epanechnikov().one_sided()).unwrap(), 2);
        let half = Kernel1D::tabulated(&[(-1.0, 0.25), (1.0, 0.25)]);
        assert!(matches!(half, Err(KernelError::Normalization(_))));
    }

    #[test]
    fn norms_match_quadrature() {
        for k in all().into_iter().chain([Kernel1D::epanechnikov().one_sided()]) {
            let (lo, hi) = k.support();
            let l1 = midpoint_split(|x| k.eval(x).abs(), lo, hi, &k.breakpoints(), 1e-5);
            assert!((l1 - k.norm_1()).abs() < 1e-8, "{} |K|_1 {} vs {}", k.name(), l1, k.norm_1());
            let sup = (0..=200_000)
                .map(|i| k.eval(lo + (hi - lo) * i as f64 / 200_000.0).abs())
                .fold(0.0, f64::max);
            assert!((sup - k.norm_inf()).abs() < 1e-6, "{}", k.name());
            assert_eq!(k.eval(hi + 1e-9), 0.0);
            assert_eq!(k.eval(lo - 1e-9), 0.0);
            assert!(k.eval(k.support_radius() + 1e-9) == 0.0);
        }
    }

    #[test]
    fn scaling_identities() {
        let k = Kernel1D::epanechnikov();
        for h in [1.0, 0.1, 0.01] {
            let kh = k.scaled(h).unwrap();
            let (lo, hi) = kh.support();
            let l1 = midpoint_split(|x| kh.eval(x).abs(), lo, hi, &[0.0], h * 1e-4);
            assert!((l1 - k.norm_1()).abs() < 1e-8);
            assert!((kh.eval(0.0) - k.norm_inf() / h).abs() < 1e-12);
            let n = interp_norm(&k, h);
            assert!((n * n - k.norm_1() * (k.norm_inf() / h)).abs() < 1e-9 * n * n);
        }
    }

    #[test]
    fn tabulated_matches_triangle() {
        let k = Kernel1D::tabulated(&[(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]).unwrap();
        let tri = Kernel1D::triangular();
        for x in [-0.7, -0.2, 0.0, 0.33, 0.9] {
            assert!((k.eval(x) - tri.eval(x)).abs() < 1e-15);
        }
        assert_eq!(k.declared_order(), 3);
        assert!((k.norm_1() - 1.0).abs() < 1e-15);
        assert_eq!(k.norm_inf(), 1.0);
        assert!(Kernel1D::tabulated(&[(0.0, 1.0)]).is_err());
        assert!(Kernel1D::tabulated(&[(1.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn table_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        std::fs::write(&p, "x,value\n-1,0\n# peak\n0,1\n1,0\n").unwrap();
        let k = KernelSpec::Table { table: p.to_string_lossy().into() }.build().unwrap();
        assert_eq!(k.eval(0.5), 0.5);
        assert!(KernelSpec::Named("gauss".into()).build().is_err());
    }

    #[test]
    fn skewed_special_cases() {
        let pk = SkewedProductKernel::new(Kernel1D::epanechnikov(), Kernel1D::triangular(), true);
        let v = eval_skewed(&pk, 0.5, 0.25, 0.0, 0.0).unwrap();
        assert!((v - 0.75 * 1.0 / (0.5 * 0.25)).abs() < 1e-12);
        let v = eval_skewed(&pk, 0.5, 0.25, 0.2, 0.2).unwrap();
        let h = Kernel1D::epanechnikov().scaled(0.5).unwrap().eval(0.2);
        assert!((v - h * 1.0 / 0.25).abs() < 1e-12);
        assert!(eval_skewed(&pk, 0.0, 0.25, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn skew_consistency(ds in -2.0..2.0f64, du in -2.0..2.0f64, h1 in 0.05..2.0f64, h2 in 0.05..2.0f64) {
            let on = SkewedProductKernel::new(Kernel1D::epanechnikov(), Kernel1D::fourth_order(), true);
            let off = SkewedProductKernel { skew: false, ..on.clone() };
            let a = eval_skewed(&on, h1, h2, ds, du).unwrap();
            let b = eval_skewed(&off, h1, h2, ds, ds - du).unwrap();
            prop_assert_eq!(a, b);
            // brute-force re-evaluation of the closed forms
            let hval = if (ds / h1).abs() <= 1.0 { 0.75 * (1.0 - (ds / h1).powi(2)) / h1 } else { 0.0 };
            let x = (ds - du) / h2;
            let kval = if x.abs() <= 1.0 { 15.0 / 32.0 * (3.0 - 10.0 * x * x + 7.0 * x.powi(4)) / h2 } else { 0.0 };
            prop_assert!((a - hval * kval).abs() <= 1e-12 * (1.0 + (hval * kval).abs()));
        }
    }
}
