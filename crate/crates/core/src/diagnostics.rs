//! Weighted discrepancies between a particle system and its limit, and
//! empirical tails of their normalized samples.

use std::fmt;
use std::sync::Arc;

use log::warn;

use crate::kernels::{Kernel1D, KernelError};
use crate::model::RateField;
use crate::quadrature::midpoint_split;
use crate::sim::{PopulationState, Trajectory};
use crate::solver::RenewalSolution;

type Eval2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Eval1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bounded test function `f(t, a)`.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    eval: Eval2,
    sup: f64,
    age_breaks: Vec<f64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("sup", &self.sup)
            .finish()
    }
}

impl TestFunction {
    /// `sup` is the declared bound of `|f|`; `age_breaks` lists ages where
    /// `f` may jump.
    pub fn new<F>(label: impl Into<String>, sup: f64, age_breaks: Vec<f64>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction {
            label: label.into(),
            eval: Arc::new(f),
            sup,
            age_breaks,
        }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(format!("const_{c}"), c.abs(), vec![], move |_, _| c)
    }

    /// Tent of height 1 centered at age `center` with half-width `width`.
    pub fn bump(center: f64, width: f64) -> Self {
        TestFunction::new(
            format!("bump_{center}"),
            1.0,
            vec![center - width, center, center + width],
            move |_, a| (1.0 - (a - center).abs() / width).max(0.0),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn eval(&self, t: f64, a: f64) -> f64 {
        (self.eval)(t, a)
    }
}

/// Finite family of test functions. Closure under negation is implied: the
/// discrepancy takes the absolute value of each member's bracket.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily {
    members: Vec<TestFunction>,
}

impl TestFunctionFamily {
    pub fn new(members: Vec<TestFunction>) -> Self {
        TestFunctionFamily { members }
    }

    /// `{0, c0, c0 b, c0 mu}` plus tents at ages 20, 50 and 80, with
    /// `c0 = 1 / (2 max(|b|_inf, |mu|_inf, 1))`.
    pub fn standard(rates: &RateField) -> Self {
        let c0 = 0.5 / rates.birth_sup().max(rates.death_sup()).max(1.0);
        let (rb, rd) = (rates.clone(), rates.clone());
        let breaks = rate_breaks(rates);
        let mut members = vec![
            TestFunction::constant(0.0),
            TestFunction::constant(c0),
            TestFunction::new("c0_b", c0 * rates.birth_sup(), breaks.clone(), move |t, a| c0 * rb.birth(t, a)),
            TestFunction::new("c0_mu", c0 * rates.death_sup(), breaks, move |t, a| c0 * rd.death(t, a)),
        ];
        members.extend([20.0, 50.0, 80.0].iter().map(|&c| TestFunction::bump(c, 10.0)));
        TestFunctionFamily { members }
    }

    pub fn members(&self) -> &[TestFunction] {
        &self.members
    }

    /// Checks `|f| <= sup` on a lattice of the domain; returns the label of
    /// the first offending member.
    pub fn spot_check_bounds(&self, horizon: f64, max_age: f64, points: usize) -> Result<(), String> {
        let points = points.max(2);
        for m in &self.members {
            for i in 0..points {
                for j in 0..points {
                    let t = horizon * i as f64 / (points - 1) as f64;
                    let a = max_age * j as f64 / (points - 1) as f64;
                    if m.eval(t, a).abs() > m.sup * (1.0 + 1e-12) {
                        return Err(m.label.clone());
                    }
                }
            }
        }
        Ok(())
    }
}

fn rate_breaks(rates: &RateField) -> Vec<f64> {
    use crate::model::Rate;
    let mut out = Vec::new();
    for r in [rates.birth_rate(), rates.death_rate()] {
        if let Rate::AgeWindow { lo, hi, .. } = r {
            out.extend([*lo, *hi]);
        }
    }
    out
}

/// Bounded weight with compact support and its norms.
#[derive(Clone)]
pub struct Weight {
    label: String,
    eval: Eval1,
    support: (f64, f64),
    breaks: Vec<f64>,
    norm_1: f64,
    norm_inf: f64,
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Weight")
            .field("label", &self.label)
            .field("support", &self.support)
            .field("norm_1", &self.norm_1)
            .field("norm_inf", &self.norm_inf)
            .finish()
    }
}

impl Weight {
    /// Weight vanishing outside `support`; norms by quadrature on a lattice
    /// fine enough for piecewise smooth weights with kinks at `breaks`.
    pub fn new<F>(label: impl Into<String>, support: (f64, f64), breaks: Vec<f64>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let (lo, hi) = support;
        let step = ((hi - lo) / 20_000.0).max(f64::MIN_POSITIVE);
        let norm_1 = midpoint_split(|x| f(x).abs(), lo, hi, &breaks, step);
        let probes = breaks
            .iter()
            .copied()
            .chain((0..=20_000).map(|i| lo + (hi - lo) * i as f64 / 20_000.0));
        let norm_inf = probes.map(|x| f(x).abs()).fold(0.0, f64::max);
        Weight {
            label: label.into(),
            eval: Arc::new(move |x| if x < lo || x > hi { 0.0 } else { f(x) }),
            support,
            breaks,
            norm_1,
            norm_inf,
        }
    }

    pub fn constant(c: f64, support: (f64, f64)) -> Self {
        Weight::new(format!("const_{c}"), support, vec![], move |_| c)
    }

    /// `x -> K_h(x - center)`.
    pub fn kernel(k: &Kernel1D, h: f64, center: f64) -> Result<Self, KernelError> {
        k.scaled(h)?;
        let (lo, hi) = k.support();
        let breaks = k.breakpoints().into_iter().map(|x| center + x * h).collect();
        let owned = k.clone();
        Ok(Weight::new(
            format!("{}_{h}", k.name()),
            (center + lo * h, center + hi * h),
            breaks,
            move |x| owned.eval((x - center) / h) / h,
        ))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn support_length(&self) -> f64 {
        self.support.1 - self.support.0
    }

    pub fn norm_1(&self) -> f64 {
        self.norm_1
    }

    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    /// `sqrt(|w|_1 |w|_inf)`.
    pub fn interp_norm(&self) -> f64 {
        (self.norm_1 * self.norm_inf).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct WeightPair {
    pub w1: Weight,
    pub w2: Weight,
}

/// Signed bracket `N^{-1} sum_i w2(t - a_i) f(t, a_i) - int w2(t - a) f(t, a) g(t, a) da`.
fn bracket(snapshot: &PopulationState, sol: &RenewalSolution, w2: &Weight, f: &TestFunction, t: f64) -> f64 {
    let (lo, hi) = w2.support();
    let empirical: f64 = snapshot
        .ages
        .iter()
        .filter(|&&a| t - a >= lo && t - a <= hi)
        .map(|&a| w2.eval(t - a) * f.eval(t, a))
        .sum::<f64>()
        / snapshot.scale as f64;
    let mut cuts: Vec<f64> = w2.breaks.iter().map(|x| t - x).collect();
    cuts.extend(f.age_breaks.iter().copied());
    let limit = sol.integrate_in_age(t, |a| w2.eval(t - a) * f.eval(t, a), t - hi, t - lo, &cuts, w2.support_length() / 2.0);
    empirical - limit
}

/// `max_f |<w2(t - .) f_t, Z_t - g(t, .)>|` over the family.
pub fn weighted_discrepancy_at(
    snapshot: &PopulationState,
    sol: &RenewalSolution,
    w2: &Weight,
    family: &TestFunctionFamily,
    t: f64,
) -> f64 {
    family
        .members
        .iter()
        .map(|f| bracket(snapshot, sol, w2, f, t).abs())
        .fold(0.0, f64::max)
}

/// `max_f |int w1(s) <w2(s - .) f_s, Z_s - g(s, .)> ds|`, the time integral
/// taken by the trapezoid rule over the snapshot times.
pub fn integrated_discrepancy(
    traj: &Trajectory,
    sol: &RenewalSolution,
    w1: &Weight,
    w2: &Weight,
    family: &TestFunctionFamily,
) -> f64 {
    let snaps = &traj.snapshots;
    let spacing = snaps
        .windows(2)
        .map(|w| w[1].time - w[0].time)
        .fold(0.0, f64::max);
    if spacing > w2.support_length() {
        warn!(
            "snapshot spacing {spacing} exceeds the support length {} of w2",
            w2.support_length()
        );
    }
    family
        .members
        .iter()
        .map(|f| {
            let values: Vec<f64> = snaps
                .iter()
                .map(|s| w1.eval(s.time) * bracket(s, sol, w2, f, s.time))
                .collect();
            snaps
                .windows(2)
                .zip(values.windows(2))
                .map(|(s, v)| 0.5 * (s[1].time - s[0].time) * (v[0] + v[1]))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// `1 / (e^u - 1)`, infinite at `u = 0`.
pub fn mild_envelope(u: f64) -> f64 {
    if u <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / u.exp_m1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailRow {
    pub u: f64,
    pub empirical: f64,
    pub envelope: f64,
}

/// Empirical frequency of `{x >= (1 + u) r}` for each `u`, beside the
/// envelope `1 / (e^u - 1)`.
pub fn concentration_tail(samples: &[f64], rate: f64, u_grid: &[f64]) -> Vec<TailRow> {
    let m = samples.len().max(1) as f64;
    u_grid
        .iter()
        .map(|&u| {
            let level = (1.0 + u) * rate;
            TailRow {
                u,
                empirical: samples.iter().filter(|&&x| x >= level).count() as f64 / m,
                envelope: mild_envelope(u),
            }
        })
        .collect()
}

/// Smallest `r` such that the empirical tail of `samples` lies under the
/// envelope at every `u >= 0`: `max_k x_(k) / (1 + ln(1 + 1/p_k))` with `p_k`
/// the fraction of samples at least `x_(k)`.
pub fn fitted_rate(samples: &[f64]) -> f64 {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let mut best = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        // first index of the run of values equal to x gives the tail count
        let first = xs.partition_point(|&y| y < x);
        if first != i {
            continue;
        }
        let p = (xs.len() - first) as f64 / m;
        best = best.max(x / (1.0 + (1.0 + 1.0 / p).ln()));
    }
    best
}

/// Decay rate `lambda` of a fit `tail(u) ~ C exp(-lambda u)`: least squares
/// of `ln tail` on `u` over the grid points where at least `min_count`
/// samples exceed the level. `None` when fewer than two such points exist.
pub fn tail_decay_rate(samples: &[f64], rate: f64, u_grid: &[f64], min_count: usize) -> Option<f64> {
    let m = samples.len() as f64;
    let pts: Vec<(f64, f64)> = concentration_tail(samples, rate, u_grid)
        .into_iter()
        .filter(|row| row.empirical * m >= min_count.max(1) as f64)
        .map(|row| (row.u, row.empirical.ln()))
        .collect();
    let (slope, _) = least_squares(&pts)?;
    Some(-slope)
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{estimate_density, smoothed_density};
    use crate::model::{builtin_demography, InitialDensity, Rate, RateField};
    use crate::sim::{sample_initial, simulate};
    use crate::solver::solve_renewal;
    use crate::model::Domain;

    fn builtin_solution() -> RenewalSolution {
        let (rates, g0, domain) = builtin_demography();
        solve_renewal(&rates, &g0, &domain, 0.05).unwrap()
    }

    fn transport_solution() -> RenewalSolution {
        let domain = Domain::new(5.0, 20.0).unwrap();
        let rates = RateField::new(Rate::zero(), Rate::zero(), &domain).unwrap();
        let g0 = InitialDensity::uniform(2.0, 12.0).unwrap();
        solve_renewal(&rates, &g0, &domain, 0.01).unwrap()
    }

    #[test]
    fn zero_family_and_weights() {
        let sol = builtin_solution();
        let snap = PopulationState { time: 10.0, ages: vec![5.0, 30.0, 41.0], scale: 3 };
        let w2 = Weight::kernel(&Kernel1D::epanechnikov(), 2.0, -20.0).unwrap();
        let zero = TestFunctionFamily::new(vec![TestFunction::constant(0.0)]);
        assert_eq!(weighted_discrepancy_at(&snap, &sol, &w2, &zero, 10.0), 0.0);
        let fam = TestFunctionFamily::standard(sol.rates());
        let w0 = Weight::constant(0.0, (-200.0, 200.0));
        assert_eq!(weighted_discrepancy_at(&snap, &sol, &w0, &fam, 10.0), 0.0);
        let empty = PopulationState { time: 1.0, ages: vec![], scale: 10 };
        // birth dates in [2, 4] at t = 1 fall in no age of the support
        let w = Weight::kernel(&Kernel1D::epanechnikov(), 1.0, 3.0).unwrap();
        assert_eq!(weighted_discrepancy_at(&empty, &sol, &w, &fam, 1.0), 0.0);
    }

    #[test]
    fn three_atoms_against_transport_limit() {
        // g(t, a) = 0.1 on [2 + t, 12 + t]; box weight of height 1/2 on
        // birth dates [-9, -5], i.e. ages [t + 5, t + 9]; f = 1.
        let sol = transport_solution();
        let w2 = Weight::new("box", (-9.0, -5.0), vec![], |_| 0.5);
        let fam = TestFunctionFamily::new(vec![TestFunction::constant(1.0)]);
        let t = 2.0;
        let snap = PopulationState { time: t, ages: vec![6.0, 8.0, 10.5], scale: 4 };
        // empirical: ages 8 and 10.5 lie in [7, 11]: 2 * 0.5 / 4 = 0.25
        // limit: 0.5 * 0.1 * 4 = 0.2
        let d = weighted_discrepancy_at(&snap, &sol, &w2, &fam, t);
        assert!((d - 0.05).abs() < 1e-9, "{d}");
        assert!((w2.norm_1() - 2.0).abs() < 1e-9 && w2.norm_inf() == 0.5);
    }

    #[test]
    fn two_snapshot_integral() {
        let sol = transport_solution();
        let w2 = Weight::new("box", (-9.0, -5.0), vec![], |_| 0.5);
        let fam = TestFunctionFamily::new(vec![TestFunction::constant(1.0)]);
        let snaps = vec![
            PopulationState { time: 1.0, ages: vec![7.0], scale: 4 },
            PopulationState { time: 2.0, ages: vec![8.0, 10.5], scale: 4 },
        ];
        let traj = Trajectory {
            scale: 4,
            seed: 0,
            horizon: 5.0,
            initial_count: 2,
            snapshots: snaps.clone(),
            events: vec![],
            final_state: snaps[1].clone(),
        };
        let w1 = Weight::constant(2.0, (0.0, 5.0));
        // brackets: s = 1: 0.125 - 0.2; s = 2: 0.25 - 0.2
        let expect: f64 = (0.5f64 * 1.0 * (2.0 * -0.075 + 2.0 * 0.05)).abs();
        let d = integrated_discrepancy(&traj, &sol, &w1, &w2, &fam);
        assert!((d - expect).abs() < 1e-9, "{d} vs {expect}");
        let wz = Weight::constant(0.0, (0.0, 5.0));
        assert_eq!(integrated_discrepancy(&traj, &sol, &wz, &w2, &fam), 0.0);
    }

    #[test]
    fn kernel_weight_reproduces_density_estimator() {
        let (rates, g0, domain) = builtin_demography();
        let sol = solve_renewal(&rates, &g0, &domain, 0.05).unwrap();
        let init = sample_initial(&g0, 300, 11).unwrap();
        let traj = simulate(&init, &rates, &domain, &[10.0], 12).unwrap();
        let snap = traj.snapshot_at(10.0).unwrap();
        let k = Kernel1D::epanechnikov();
        let fam = TestFunctionFamily::new(vec![TestFunction::constant(1.0)]);
        for &(a, h) in &[(5.0, 0.5), (30.0, 2.0), (52.5, 4.0)] {
            let w2 = Weight::kernel(&k, h, 10.0 - a).unwrap();
            let d = weighted_discrepancy_at(snap, &sol, &w2, &fam, 10.0);
            let est = estimate_density(snap, &k, h, a).unwrap();
            let smooth = smoothed_density(&sol, &k, h, 10.0, a).unwrap();
            assert!((d - (est - smooth).abs()).abs() < 1e-10, "{d} vs {}", (est - smooth).abs());
        }
    }

    #[test]
    fn standard_family_is_bounded() {
        let (rates, _, domain) = builtin_demography();
        let fam = TestFunctionFamily::standard(&rates);
        assert_eq!(fam.members().len(), 7);
        fam.spot_check_bounds(domain.horizon, domain.max_age, 41).unwrap();
    }

    #[test]
    fn kernel_weight_norms() {
        let w = Weight::kernel(&Kernel1D::epanechnikov(), 0.1, 3.0).unwrap();
        assert!((w.norm_1() - 1.0).abs() < 1e-8);
        assert!((w.norm_inf() - 7.5).abs() < 1e-12);
        assert!((w.interp_norm() - 7.5f64.sqrt()).abs() < 1e-8);
        assert!((w.support_length() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tails() {
        let rows = concentration_tail(&[0.0; 10], 1.0, &[0.0, 0.5, 1.0]);
        assert!(rows.iter().all(|r| r.empirical == 0.0 && r.empirical <= r.envelope));
        assert!(rows[0].envelope.is_infinite());
        assert_eq!(fitted_rate(&[0.0; 5]), 0.0);
        // single value x: p = 1, r = x / (1 + ln 2)
        let r = fitted_rate(&[2.0, 2.0]);
        assert!((r - 2.0 / (1.0 + 2f64.ln())).abs() < 1e-15);
        let xs = [0.3, 1.1, 0.7, 2.5, 0.1];
        let r = fitted_rate(&xs);
        for row in concentration_tail(&xs, r, &(0..200).map(|i| i as f64 * 0.05).collect::<Vec<_>>()) {
            assert!(row.empirical <= row.envelope + 1e-12, "{row:?}");
        }
        // a slightly smaller rate violates the envelope somewhere
        let fine: Vec<f64> = (0..20_000).map(|i| i as f64 * 1e-3).collect();
        assert!(concentration_tail(&xs, r * 0.999, &fine).iter().any(|row| row.empirical > row.envelope));
    }

    #[test]
    fn least_squares_exact() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let (s, c) = least_squares(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (c - 3.0).abs() < 1e-14);
        assert!(least_squares(&pts[..1]).is_none());
    }
}
