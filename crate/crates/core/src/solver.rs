//! Deterministic large-population limit: the McKendrick-Von Foerster density
//! through its characteristics representation.
//!
//! The boundary birth density `B` solves the renewal equation
//! `B(t) = M(t) + int_0^t B(c) L(t, t - c) dc`, where `M(t)` collects births
//! from the initial cohorts and `L(t, a)` is fertility times survival of the
//! cohort born at `t - a`. Both are discretized with the composite trapezoid
//! rule on the grid `k * dt`; the unknown `B(t_k)` enters its own trapezoid
//! sum with weight `dt / 2`, and the resulting scalar equation is solved
//! exactly at each step.
//!
//! Above the diagonal (`a > t`) the density is the transported initial
//! density; below it (`a < t`) it is `B` at the birth date times survival.
//! On `a = t` the density is set to 0.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Domain, InitialDensity, RateField};
use crate::quadrature::{midpoint_split, panels_for};
use crate::sim::fmt_f64;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("time step {dt} does not divide the horizon {horizon}")]
    StepDoesNotDivide { dt: f64, horizon: f64 },
    #[error(
        "implicit diagonal coefficient {coefficient} <= 0 at t={t}; the step is too large for this birth rate, halve dt"
    )]
    DiagonalCoefficient { t: f64, coefficient: f64 },
    #[error("point (t={t}, a={a}) lies outside the domain")]
    OutOfDomain { t: f64, a: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// `int_{t0}^{t1} mu(s, s + cohort_offset) ds` by the composite trapezoid
/// rule with panels no wider than `max_step`. Ages along the characteristic
/// are clamped to `[0, max_age]`.
pub fn survival_exponent(rates: &RateField, t0: f64, t1: f64, cohort_offset: f64, max_step: f64) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let panels = panels_for(t1 - t0, max_step);
    let h = (t1 - t0) / panels as f64;
    let mu = |s: f64| rates.death(s, (s + cohort_offset).max(0.0));
    let mut sum = 0.5 * (mu(t0) + mu(t1));
    for i in 1..panels {
        sum += mu(t0 + i as f64 * h);
    }
    sum * h
}

/// Discretized birth density together with the model it was computed for.
#[derive(Clone, Debug)]
pub struct RenewalSolution {
    dt: f64,
    birth_density: Vec<f64>,
    rates: RateField,
    initial: InitialDensity,
    domain: Domain,
}

impl RenewalSolution {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `B(k * dt)` for `k = 0..=horizon/dt`.
    pub fn birth_density(&self) -> &[f64] {
        &self.birth_density
    }

    pub fn rates(&self) -> &RateField {
        &self.rates
    }

    pub fn initial(&self) -> &InitialDensity {
        &self.initial
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// `B(c)` by linear interpolation between grid nodes.
    pub fn birth_at(&self, c: f64) -> f64 {
        let last = self.birth_density.len() - 1;
        let x = (c / self.dt).clamp(0.0, last as f64);
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.birth_density[0];
        }
        let frac = x - k as f64;
        self.birth_density[k] * (1.0 - frac) + self.birth_density[k + 1] * frac
    }

    fn check(&self, t: f64, a: f64) -> Result<(), SolverError> {
        let tol = 1e-9;
        if t < -tol || t > self.domain.horizon + tol || a < -tol || a > self.domain.max_age + tol {
            Err(SolverError::OutOfDomain { t, a })
        } else {
            Ok(())
        }
    }

    /// Limit density `g(t, a)`.
    pub fn density(&self, t: f64, a: f64) -> Result<f64, SolverError> {
        self.check(t, a)?;
        let t = t.clamp(0.0, self.domain.horizon);
        let a = a.clamp(0.0, self.domain.max_age);
        Ok(if a > t {
            let u = a - t;
            self.initial.eval(u) * (-survival_exponent(&self.rates, 0.0, t, u, self.dt)).exp()
        } else if a < t {
            let c = t - a;
            self.birth_at(c) * (-survival_exponent(&self.rates, c, t, -c, self.dt)).exp()
        } else {
            0.0
        })
    }

    /// `int_lo^hi f(a) g(t, a) da` by split midpoint quadrature. The range is
    /// clipped to the age domain and cut at `a = t` (where `g` jumps) and at
    /// `breaks`; `scale` is the length over which `f` varies.
    pub fn integrate_in_age<F: Fn(f64) -> f64>(&self, t: f64, f: F, lo: f64, hi: f64, breaks: &[f64], scale: f64) -> f64 {
        let (from, to) = (lo.max(0.0), hi.min(self.domain.max_age));
        let mut cuts = breaks.to_vec();
        cuts.push(t);
        let step = (scale / 100.0).min(self.dt / 2.0);
        midpoint_split(|a| f(a) * self.density(t, a).unwrap_or(0.0), from, to, &cuts, step)
    }

    /// Limit death intensity `pi(t, a) = mu(t, a) g(t, a)`.
    pub fn death_intensity(&self, t: f64, a: f64) -> Result<f64, SolverError> {
        let g = self.density(t, a)?;
        Ok(self.rates.death(t, a) * g)
    }

    /// `mu(t, a)` from the model, for truth columns.
    pub fn death_rate(&self, t: f64, a: f64) -> Result<f64, SolverError> {
        self.check(t, a)?;
        Ok(self.rates.death(t, a))
    }

    /// Writes `birth_density.csv` (`t,B`).
    pub fn write_birth_density(&self, path: &Path) -> Result<(), SolverError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "t,B")?;
        for (k, b) in self.birth_density.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(k as f64 * self.dt), fmt_f64(*b))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes a `t,a,g,pi` lattice.
    pub fn write_lattice(&self, path: &Path, times: &[f64], ages: &[f64]) -> Result<(), SolverError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "t,a,g,pi")?;
        for &t in times {
            for &a in ages {
                let g = self.density(t, a)?;
                let pi = self.rates.death(t, a) * g;
                writeln!(w, "{},{},{},{}", fmt_f64(t), fmt_f64(a), fmt_f64(g), fmt_f64(pi))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Default step for the reference demography: `horizon / 2000`.
pub fn default_dt(domain: &Domain) -> f64 {
    domain.horizon / 2000.0
}

pub fn solve_renewal(
    rates: &RateField,
    g0: &InitialDensity,
    domain: &Domain,
    dt: f64,
) -> Result<RenewalSolution, SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::InvalidStep(dt));
    }
    let horizon = domain.horizon;
    let steps_f = (horizon / dt).round();
    if steps_f < 1.0 || (steps_f * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(SolverError::StepDoesNotDivide { dt, horizon });
    }
    let steps = steps_f as usize;
    let dt = horizon / steps_f;

    // Nodes landing on a jump of b take the mean of its one-sided limits,
    // which keeps the trapezoid sums second order.
    let tol = 1e-6 * dt;

    // Initial cohorts: trapezoid nodes over the support of g0, each carrying
    // its running survival exponent and last mortality value.
    let (lo, hi) = g0.support();
    let age_panels = panels_for(hi - lo, dt);
    let du = (hi - lo) / age_panels as f64;
    let nodes: Vec<f64> = (0..=age_panels).map(|i| lo + i as f64 * du).collect();
    let weighted_g0: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let w = if i == 0 || i == age_panels { 0.5 * du } else { du };
            w * g0.eval(u)
        })
        .collect();
    let mut initial_exponent = vec![0.0; nodes.len()];
    let mut initial_mu: Vec<f64> = nodes.iter().map(|&u| rates.death(0.0, u)).collect();

    // Birth cohorts born at grid times t_j.
    let mut cohort_exponent = vec![0.0; steps + 1];
    let mut cohort_mu = vec![0.0; steps + 1];

    let births_from_initial = |t: f64, exponent: &[f64]| -> f64 {
        nodes
            .iter()
            .zip(&weighted_g0)
            .zip(exponent)
            .enumerate()
            .map(|(i, ((&u, &wg), &e))| {
                let side = if i == 0 { 1 } else if i == age_panels { -1 } else { 0 };
                let b = rates.birth_at_node(t, t + u, tol, side);
                if b == 0.0 || wg == 0.0 {
                    0.0
                } else {
                    b * wg * (-e).exp()
                }
            })
            .sum()
    };

    let mut birth_density = Vec::with_capacity(steps + 1);
    birth_density.push(births_from_initial(0.0, &initial_exponent));
    cohort_mu[0] = rates.death(0.0, 0.0);

    for k in 1..=steps {
        let t = k as f64 * dt;
        for ((e, m), &u) in initial_exponent.iter_mut().zip(initial_mu.iter_mut()).zip(&nodes) {
            let next = rates.death(t, t + u);
            *e += 0.5 * dt * (*m + next);
            *m = next;
        }
        let from_initial = births_from_initial(t, &initial_exponent);

        for j in 0..k {
            let age = (k - j) as f64 * dt;
            let next = rates.death(t, age);
            cohort_exponent[j] += 0.5 * dt * (cohort_mu[j] + next);
            cohort_mu[j] = next;
        }
        cohort_mu[k] = rates.death(t, 0.0);

        let kernel = |j: usize| -> f64 {
            let b = rates.birth_at_node(t, (k - j) as f64 * dt, tol, if j == 0 { -1 } else { 0 });
            if b == 0.0 {
                0.0
            } else {
                b * (-cohort_exponent[j]).exp()
            }
        };
        let mut integral = 0.5 * birth_density[0] * kernel(0);
        for (j, &bj) in birth_density.iter().enumerate().take(k).skip(1) {
            integral += bj * kernel(j);
        }
        integral *= dt;

        let coefficient = 1.0 - 0.5 * dt * rates.birth(t, 0.0);
        if coefficient <= 0.0 {
            return Err(SolverError::DiagonalCoefficient { t, coefficient });
        }
        birth_density.push((from_initial + integral) / coefficient);
    }

    Ok(RenewalSolution {
        dt,
        birth_density,
        rates: rates.clone(),
        initial: g0.clone(),
        domain: *domain,
    })
}
