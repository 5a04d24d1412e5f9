//! Replicated estimation runs against the limit solution.

use log::info;
use rayon::prelude::*;

use crate::diagnostics::{
    concentration_tail, fitted_rate, tail_decay_rate, weighted_discrepancy_at, TailRow, TestFunctionFamily, Weight,
};
use crate::estimation::{
    density_table, gl_select_density, gl_select_pi, oracle_bandwidth, quotient, variance_term_1d, variance_term_2d,
    BandwidthGrid, BandwidthGrid2, EstimateReport, GlConfig,
};
use crate::kernels::{check_order, Kernel1D, SkewedProductKernel};
use crate::model::Model;
use crate::rng::{derive_seed, tags};
use crate::sim::{death_measure, sample_initial, simulate, Death, PopulationState, Trajectory};
use crate::solver::{default_dt, solve_renewal, RenewalSolution};

use super::config::{RunConfig, Target, TrackedPoint};
use super::{log_log_fit, median, rmse, theoretical_exponent, Exponent, ExperimentError, Region, Summary};

/// Stream tags separating the replications of each study.
pub mod streams {
    pub const SIMULATE: u64 = 10;
    pub const BANDS: u64 = 11;
    pub const CONVERGENCE: u64 = 12;
    pub const SURFACE: u64 = 13;
    pub const DIAGNOSTICS: u64 = 14;
    pub const CALIBRATION: u64 = 15;
}

/// Seeds of the initial sample and of the dynamics for replication `index`
/// at scale `n` on `stream`.
pub fn replicate_seeds(root: u64, stream: u64, n: usize, index: usize) -> (u64, u64) {
    let path = [stream, n as u64, index as u64];
    (
        derive_seed(root, &[&[tags::INITIAL][..], &path[..]].concat()),
        derive_seed(root, &[&[tags::DYNAMICS][..], &path[..]].concat()),
    )
}

/// Model, limit solution and kernels shared by every replication.
#[derive(Clone, Debug)]
pub struct StudyContext {
    pub config: RunConfig,
    pub seed: u64,
    pub model: Model,
    pub solution: RenewalSolution,
    pub age_kernel: Kernel1D,
    pub product_kernel: SkewedProductKernel,
    pub gl_density: GlConfig,
    pub gl_pi: GlConfig,
}

impl StudyContext {
    pub fn new(config: RunConfig, seed: u64) -> Result<Self, ExperimentError> {
        config.validate()?;
        let model = config.model.build()?;
        let dt = config.solver.dt.unwrap_or_else(|| default_dt(&model.domain));
        let solution = solve_renewal(&model.rates, &model.initial, &model.domain, dt)?;
        let age_kernel = config.estimation.age_kernel()?;
        let product_kernel = config.estimation.product_kernel()?;
        Ok(StudyContext {
            gl_density: config.estimation.gl_density(),
            gl_pi: config.estimation.gl_pi(),
            config,
            seed,
            model,
            solution,
            age_kernel,
            product_kernel,
        })
    }

    /// One trajectory of replication `index` at scale `n` on stream `stream`.
    pub fn replicate(&self, stream: u64, n: usize, index: usize, snapshot_times: &[f64]) -> Result<Trajectory, ExperimentError> {
        let (init_seed, dyn_seed) = replicate_seeds(self.seed, stream, n, index);
        let run = || -> Result<Trajectory, ExperimentError> {
            let init = sample_initial(&self.model.initial, n, init_seed)?;
            Ok(simulate(&init, &self.model.rates, &self.model.domain, snapshot_times, dyn_seed)?)
        };
        run().map_err(|e| ExperimentError::Replication {
            scale: n,
            index,
            source: Box::new(e),
        })
    }

    pub fn age_grid(&self, n: usize) -> Result<BandwidthGrid, ExperimentError> {
        Ok(self.config.estimation.age_grid(n, &self.model.domain)?)
    }

    pub fn pair_grid(&self, n: usize) -> Result<BandwidthGrid2, ExperimentError> {
        Ok(self.config.estimation.pair_grid(n, &self.model.domain)?)
    }

    pub fn truth(&self, target: Target, t: f64, a: f64) -> Result<f64, ExperimentError> {
        let sol = &self.solution;
        Ok(match target {
            Target::Density => sol.density(t, a)?,
            Target::DeathIntensity => sol.death_intensity(t, a)?,
            Target::DeathRate => sol.death_rate(t, a)?,
        })
    }

    /// Kernel order capping the attainable smoothness for `target`.
    pub fn kernel_order(&self, target: Target) -> f64 {
        let order = |k: &Kernel1D| check_order(k).unwrap_or(k.declared_order()) as f64;
        match target {
            Target::Density => order(&self.age_kernel),
            _ => order(&self.product_kernel.time_kernel).min(order(&self.product_kernel.age_kernel)),
        }
    }

    fn pool(&self, threads: Option<usize>) -> Result<rayon::ThreadPool, ExperimentError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            builder = builder.num_threads(t.max(1));
        }
        builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))
    }
}

/// Adaptive and oracle estimates at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEstimate {
    pub adaptive: f64,
    pub oracle: f64,
}

fn oracle_value(truth: f64, report: &EstimateReport) -> f64 {
    let table: Vec<_> = report.table.iter().map(|e| (e.bandwidth, e.estimate)).collect();
    let bw = oracle_bandwidth(truth, &table).expect("nonempty table");
    report
        .table
        .iter()
        .find(|e| e.bandwidth == bw)
        .map(|e| e.estimate)
        .expect("oracle bandwidth is in the table")
}

fn dominance(target: Target, t: f64, a: f64, truth: f64, p: PointEstimate) -> Result<PointEstimate, ExperimentError> {
    let (oracle, adaptive) = ((p.oracle - truth).abs(), (p.adaptive - truth).abs());
    if oracle > adaptive {
        return Err(ExperimentError::OracleDominance {
            target: target.to_string(),
            t,
            a,
            oracle,
            adaptive,
        });
    }
    Ok(p)
}

/// Evaluation data of one replication: snapshots and the sorted deaths.
pub struct Sample<'a> {
    pub trajectory: &'a Trajectory,
    pub deaths: Vec<Death>,
}

impl<'a> Sample<'a> {
    pub fn new(trajectory: &'a Trajectory) -> Self {
        Sample {
            trajectory,
            deaths: death_measure(trajectory),
        }
    }

    pub fn snapshot(&self, t: f64) -> Result<&PopulationState, ExperimentError> {
        self.trajectory
            .snapshot_at(t)
            .or_else(|| self.trajectory.snapshots.iter().find(|s| (s.time - t).abs() < 1e-9))
            .ok_or_else(|| ExperimentError::Config(format!("trajectory has no snapshot at t = {t}")))
    }
}

/// Selection reports for `g` and `pi` at one point.
pub struct PointReports {
    pub density: EstimateReport,
    pub intensity: EstimateReport,
}

pub fn density_report(ctx: &StudyContext, sample: &Sample, grid: &BandwidthGrid, t: f64, a: f64) -> Result<EstimateReport, ExperimentError> {
    let snap = sample.snapshot(t)?;
    Ok(gl_select_density(snap, grid, &ctx.age_kernel, &ctx.gl_density, a)?)
}

pub fn intensity_report(ctx: &StudyContext, sample: &Sample, grid: &BandwidthGrid2, t: f64, a: f64) -> Result<EstimateReport, ExperimentError> {
    let n = sample.trajectory.scale;
    Ok(gl_select_pi(&sample.deaths, grid, &ctx.product_kernel, &ctx.gl_pi, t, a, n)?)
}

/// Adaptive and oracle quotient estimates; the oracle ranges over every
/// pair of grid bandwidths.
pub fn rate_estimate(g: &EstimateReport, pi: &EstimateReport, varpi: f64, truth: f64) -> PointEstimate {
    let adaptive = quotient(pi.value, g.value, varpi);
    let mut oracle = adaptive;
    for ge in &g.table {
        for pe in &pi.table {
            let v = quotient(pe.estimate, ge.estimate, varpi);
            if (v - truth).abs() < (oracle - truth).abs() {
                oracle = v;
            }
        }
    }
    PointEstimate { adaptive, oracle }
}

/// Estimates of `target` at a point; `varpi` is used for the death rate.
pub fn point_estimate(
    ctx: &StudyContext,
    sample: &Sample,
    grids: &(BandwidthGrid, BandwidthGrid2),
    target: Target,
    t: f64,
    a: f64,
    varpi: f64,
) -> Result<PointEstimate, ExperimentError> {
    let truth = ctx.truth(target, t, a)?;
    let p = match target {
        Target::Density => {
            let r = density_report(ctx, sample, &grids.0, t, a)?;
            PointEstimate { adaptive: r.value, oracle: oracle_value(truth, &r) }
        }
        Target::DeathIntensity => {
            let r = intensity_report(ctx, sample, &grids.1, t, a)?;
            PointEstimate { adaptive: r.value, oracle: oracle_value(truth, &r) }
        }
        Target::DeathRate => {
            let g = density_report(ctx, sample, &grids.0, t, a)?;
            let pi = intensity_report(ctx, sample, &grids.1, t, a)?;
            rate_estimate(&g, &pi, varpi, truth)
        }
    };
    dominance(target, t, a, truth, p)
}

/// One row of a confidence-band table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandRow {
    pub t: f64,
    pub a: f64,
    pub truth: f64,
    pub adaptive: Summary,
    pub oracle: Summary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bands {
    pub scale: usize,
    pub replications: usize,
    pub density: Vec<BandRow>,
    pub intensity: Vec<BandRow>,
    /// One table per threshold, in configuration order.
    pub rate: Vec<(f64, Vec<BandRow>)>,
}

struct BandReplication {
    density: Vec<PointEstimate>,
    intensity: Vec<PointEstimate>,
    rate: Vec<Vec<PointEstimate>>,
}

fn off_diagonal(t: f64, ages: Vec<f64>) -> Vec<f64> {
    ages.into_iter().filter(|a| (a - t).abs() >= 1e-9).collect()
}

fn band_rows(t: f64, ages: &[f64], truths: &[f64], reps: &[Vec<PointEstimate>]) -> Vec<BandRow> {
    ages.iter()
        .enumerate()
        .map(|(i, &a)| {
            let adaptive: Vec<f64> = reps.iter().map(|r| r[i].adaptive).collect();
            let oracle: Vec<f64> = reps.iter().map(|r| r[i].oracle).collect();
            BandRow {
                t,
                a,
                truth: truths[i],
                adaptive: Summary::of(&adaptive),
                oracle: Summary::of(&oracle),
            }
        })
        .collect()
}

/// Pointwise 95% bands of the adaptive and oracle estimators of `g`, `pi`
/// and `mu` at the band time, over the configured replications.
pub fn run_pointwise_ci(ctx: &StudyContext, threads: Option<usize>) -> Result<Bands, ExperimentError> {
    let exp = &ctx.config.experiment;
    let domain = ctx.model.domain;
    let (t, n, m) = (exp.band_time, exp.band_scale, exp.replications);
    let g_ages = off_diagonal(t, exp.density_ages.nodes(domain.max_age));
    let r_ages = off_diagonal(t, exp.rate_ages.nodes(domain.max_age));
    let varpis = ctx.config.estimation.varpi.clone();
    let grids = (ctx.age_grid(n)?, ctx.pair_grid(n)?);
    let g_truth: Vec<f64> = g_ages.iter().map(|&a| ctx.truth(Target::Density, t, a)).collect::<Result<_, _>>()?;
    let pi_truth: Vec<f64> = r_ages.iter().map(|&a| ctx.truth(Target::DeathIntensity, t, a)).collect::<Result<_, _>>()?;
    let mu_truth: Vec<f64> = r_ages.iter().map(|&a| ctx.truth(Target::DeathRate, t, a)).collect::<Result<_, _>>()?;
    info!("bands: N = {n}, {m} replications, {} + {} ages", g_ages.len(), r_ages.len());
    let one = |r: usize| -> Result<BandReplication, ExperimentError> {
        let traj = ctx.replicate(streams::BANDS, n, r, &[t])?;
        let sample = Sample::new(&traj);
        let density = g_ages
            .iter()
            .zip(&g_truth)
            .map(|(&a, &truth)| {
                let rep = density_report(ctx, &sample, &grids.0, t, a)?;
                dominance(Target::Density, t, a, truth, PointEstimate { adaptive: rep.value, oracle: oracle_value(truth, &rep) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut intensity = Vec::with_capacity(r_ages.len());
        let mut rate = vec![Vec::with_capacity(r_ages.len()); varpis.len()];
        for (i, &a) in r_ages.iter().enumerate() {
            let pi = intensity_report(ctx, &sample, &grids.1, t, a)?;
            let p = PointEstimate { adaptive: pi.value, oracle: oracle_value(pi_truth[i], &pi) };
            intensity.push(dominance(Target::DeathIntensity, t, a, pi_truth[i], p)?);
            let g = density_report(ctx, &sample, &grids.0, t, a)?;
            for (k, &varpi) in varpis.iter().enumerate() {
                let p = rate_estimate(&g, &pi, varpi, mu_truth[i]);
                rate[k].push(dominance(Target::DeathRate, t, a, mu_truth[i], p)?);
            }
        }
        Ok(BandReplication { density, intensity, rate })
    };
    let reps: Vec<BandReplication> = ctx
        .pool(threads)?
        .install(|| (0..m).into_par_iter().map(one).collect::<Result<Vec<_>, _>>())?;
    let dens: Vec<Vec<PointEstimate>> = reps.iter().map(|r| r.density.clone()).collect();
    let ints: Vec<Vec<PointEstimate>> = reps.iter().map(|r| r.intensity.clone()).collect();
    let rate = varpis
        .iter()
        .enumerate()
        .map(|(k, &varpi)| {
            let per: Vec<Vec<PointEstimate>> = reps.iter().map(|r| r.rate[k].clone()).collect();
            (varpi, band_rows(t, &r_ages, &mu_truth, &per))
        })
        .collect();
    Ok(Bands {
        scale: n,
        replications: m,
        density: band_rows(t, &g_ages, &g_truth, &dens),
        intensity: band_rows(t, &r_ages, &pi_truth, &ints),
        rate,
    })
}

/// Error of one tracked point at one scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRow {
    pub point: TrackedPoint,
    pub scale: usize,
    pub rmse_adaptive: f64,
    pub rmse_oracle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRegressionResult {
    pub point: TrackedPoint,
    pub region: Region,
    pub slope: f64,
    pub intercept: f64,
    pub oracle_slope: f64,
    pub oracle_intercept: f64,
    pub theory: Exponent,
    /// `(N, adaptive RMSE, oracle RMSE)`.
    pub per_n_rmse: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub errors: Vec<ErrorRow>,
    pub fits: Vec<RateRegressionResult>,
}

/// Squared-error study at the tracked points over the scale list, with
/// least-squares fits of `ln RMSE` on `ln N`.
pub fn run_convergence_study(ctx: &StudyContext, threads: Option<usize>) -> Result<ConvergenceStudy, ExperimentError> {
    let exp = &ctx.config.experiment;
    if exp.n_list.len() < 3 {
        return Err(ExperimentError::Config("the convergence study needs at least 3 scales".into()));
    }
    let points = exp.tracked_points.clone();
    let varpi = ctx.config.estimation.varpi[0];
    let mut times: Vec<f64> = points.iter().map(|p| p.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let truths: Vec<f64> = points.iter().map(|p| ctx.truth(p.target, p.t, p.a)).collect::<Result<_, _>>()?;
    let grids: Vec<(BandwidthGrid, BandwidthGrid2)> = exp
        .n_list
        .iter()
        .map(|&n| Ok((ctx.age_grid(n)?, ctx.pair_grid(n)?)))
        .collect::<Result<_, ExperimentError>>()?;
    let jobs: Vec<(usize, usize)> = (0..exp.n_list.len())
        .flat_map(|i| (0..exp.replications).map(move |r| (i, r)))
        .collect();
    info!("convergence: scales {:?}, {} replications", exp.n_list, exp.replications);
    let one = |&(i, r): &(usize, usize)| -> Result<Vec<(f64, f64)>, ExperimentError> {
        let n = exp.n_list[i];
        let traj = ctx.replicate(streams::CONVERGENCE, n, r, &times)?;
        let sample = Sample::new(&traj);
        points
            .iter()
            .zip(&truths)
            .map(|(p, &truth)| {
                let e = point_estimate(ctx, &sample, &grids[i], p.target, p.t, p.a, varpi)?;
                Ok((e.adaptive - truth, e.oracle - truth))
            })
            .collect()
    };
    let results: Vec<Vec<(f64, f64)>> = ctx
        .pool(threads)?
        .install(|| jobs.par_iter().map(one).collect::<Result<Vec<_>, _>>())?;
    let m = exp.replications;
    let mut errors = Vec::new();
    let mut fits = Vec::new();
    for (k, &point) in points.iter().enumerate() {
        let mut per_n = Vec::new();
        for (i, &n) in exp.n_list.iter().enumerate() {
            let block = &results[i * m..(i + 1) * m];
            let adaptive: Vec<f64> = block.iter().map(|r| r[k].0).collect();
            let oracle: Vec<f64> = block.iter().map(|r| r[k].1).collect();
            let row = ErrorRow {
                point,
                scale: n,
                rmse_adaptive: rmse(&adaptive),
                rmse_oracle: rmse(&oracle),
            };
            per_n.push((n, row.rmse_adaptive, row.rmse_oracle));
            errors.push(row);
        }
        let region = Region::of(point.t, point.a);
        let mut theory = theoretical_exponent(point.target, region, &exp.smoothness)?;
        let cap = ctx.kernel_order(point.target);
        if theory.s > cap {
            theory.s = cap;
            theory.rate = super::rate_of(cap);
        }
        let fit = |sel: fn(&(usize, f64, f64)) -> f64| {
            let pts: Vec<(usize, f64)> = per_n.iter().map(|r| (r.0, sel(r))).collect();
            log_log_fit(&pts).unwrap_or((f64::NAN, f64::NAN))
        };
        let (slope, intercept) = fit(|r| r.1);
        let (oracle_slope, oracle_intercept) = fit(|r| r.2);
        fits.push(RateRegressionResult {
            point,
            region,
            slope,
            intercept,
            oracle_slope,
            oracle_intercept,
            theory,
            per_n_rmse: per_n,
        });
    }
    Ok(ConvergenceStudy { errors, fits })
}

/// Adaptive estimates over the evaluation lattice from one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceRow {
    pub t: f64,
    pub a: f64,
    pub truth: f64,
    pub estimate: f64,
    pub bandwidth: (f64, Option<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Surfaces {
    pub density: Vec<SurfaceRow>,
    pub intensity: Vec<SurfaceRow>,
}

pub fn run_surfaces(ctx: &StudyContext, threads: Option<usize>) -> Result<Surfaces, ExperimentError> {
    let exp = &ctx.config.experiment;
    let domain = ctx.model.domain;
    let n = exp.band_scale;
    let times = exp.times.nodes(domain.horizon);
    let traj = ctx.replicate(streams::SURFACE, n, 0, &times)?;
    let sample = Sample::new(&traj);
    let grids = (ctx.age_grid(n)?, ctx.pair_grid(n)?);
    let g_ages = exp.density_ages.nodes(domain.max_age);
    let r_ages = exp.rate_ages.nodes(domain.max_age);
    let points = |ages: &[f64]| -> Vec<(f64, f64)> {
        times
            .iter()
            .flat_map(|&t| ages.iter().map(move |&a| (t, a)))
            .filter(|(t, a)| (t - a).abs() >= 1e-9)
            .collect()
    };
    let (gp, rp) = (points(&g_ages), points(&r_ages));
    info!("surfaces: N = {n}, {} + {} points", gp.len(), rp.len());
    let pool = ctx.pool(threads)?;
    let density = pool.install(|| {
        gp.par_iter()
            .map(|&(t, a)| {
                let r = density_report(ctx, &sample, &grids.0, t, a)?;
                Ok(SurfaceRow {
                    t,
                    a,
                    truth: ctx.truth(Target::Density, t, a)?,
                    estimate: r.value,
                    bandwidth: (r.selected.first(), None),
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    let intensity = pool.install(|| {
        rp.par_iter()
            .map(|&(t, a)| {
                let r = intensity_report(ctx, &sample, &grids.1, t, a)?;
                Ok(SurfaceRow {
                    t,
                    a,
                    truth: ctx.truth(Target::DeathIntensity, t, a)?,
                    estimate: r.value,
                    bandwidth: (r.selected.first(), r.selected.second()),
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    Ok(Surfaces { density, intensity })
}

/// Normalized discrepancy samples and their tails at one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TailSummary {
    pub scale: usize,
    pub samples: Vec<f64>,
    pub median: f64,
    pub fitted_rate: f64,
    pub decay_rate: Option<f64>,
    pub tail: Vec<TailRow>,
}

/// The weight `w2` of the diagnostics: an Epanechnikov kernel in birth date.
pub fn diagnostic_weight(ctx: &StudyContext) -> Result<Weight, ExperimentError> {
    let d = &ctx.config.diagnostics;
    Ok(Weight::kernel(&Kernel1D::epanechnikov(), d.weight_bandwidth, d.weight_center)?)
}

/// `|w2|_{1,inf}^{-1} W_{w2}(F)_t` over replications at every configured scale.
pub fn run_tail_study(ctx: &StudyContext, threads: Option<usize>) -> Result<Vec<TailSummary>, ExperimentError> {
    let d = &ctx.config.diagnostics;
    let w2 = diagnostic_weight(ctx)?;
    let family = TestFunctionFamily::standard(&ctx.model.rates);
    let norm = w2.interp_norm();
    let u_grid = d.u_grid();
    let pool = ctx.pool(threads)?;
    let mut out = Vec::new();
    for &n in &d.scales {
        info!("tails: N = {n}, {} replications", d.replications);
        let samples: Vec<f64> = pool.install(|| {
            (0..d.replications)
                .into_par_iter()
                .map(|r| {
                    let traj = ctx.replicate(streams::DIAGNOSTICS, n, r, &[d.time])?;
                    let sample = Sample::new(&traj);
                    let snap = sample.snapshot(d.time)?;
                    Ok(weighted_discrepancy_at(snap, &ctx.solution, &w2, &family, d.time) / norm)
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        })?;
        let rate = fitted_rate(&samples);
        out.push(TailSummary {
            scale: n,
            median: median(&samples),
            fitted_rate: rate,
            decay_rate: tail_decay_rate(&samples, rate, &u_grid, 5),
            tail: concentration_tail(&samples, rate, &u_grid),
            samples,
        });
    }
    Ok(out)
}

/// Halves `C*` for the density and the death intensity on a pilot
/// replication until at most half of the band points select the largest
/// bandwidth; returns the calibrated `(c_star, c_star_pi)`.
pub fn calibrate(ctx: &StudyContext) -> Result<(f64, f64), ExperimentError> {
    let exp = &ctx.config.experiment;
    let domain = ctx.model.domain;
    let (t, n) = (exp.band_time, exp.band_scale);
    let traj = ctx.replicate(streams::CALIBRATION, n, 0, &[t])?;
    let sample = Sample::new(&traj);
    let snap = sample.snapshot(t)?;
    let grid = ctx.age_grid(n)?;
    let grid2 = ctx.pair_grid(n)?;
    let g_ages: Vec<f64> = off_diagonal(t, exp.rate_ages.nodes(domain.max_age));
    let k = &ctx.age_kernel;
    let pk = &ctx.product_kernel;
    let hmax = *grid.values().last().expect("nonempty grid");
    let tables: Vec<Vec<f64>> = g_ages
        .iter()
        .map(|&a| density_table(snap, &grid, k, a))
        .collect::<Result<_, _>>()?;
    let pairs = grid2.pairs();
    let pi_tables: Vec<Vec<f64>> = g_ages
        .iter()
        .map(|&a| crate::estimation::pi_table(&sample.deaths, &grid2, pk, t, a, n))
        .collect::<Result<_, _>>()?;
    let pmax = pairs.iter().map(|p| p.0 * p.1).fold(0.0, f64::max);
    let frac_density = |c: f64| {
        let v: Vec<f64> = grid.values().iter().map(|&h| variance_term_1d(k, h, n, c)).collect();
        let at_max = tables
            .iter()
            .filter(|est| {
                crate::estimation::select_univariate(grid.values(), est, &v)
                    .map(|r| r.selected.first() == hmax)
                    .unwrap_or(false)
            })
            .count();
        at_max as f64 / tables.len().max(1) as f64
    };
    let restrict = ctx.gl_pi.order_restrict_bivariate;
    let frac_pi = |c: f64| {
        let v: Vec<f64> = pairs
            .iter()
            .map(|&(h1, h2)| variance_term_2d(&pk.time_kernel, &pk.age_kernel, h1, h2, n, c))
            .collect();
        let at_max = pi_tables
            .iter()
            .filter(|est| {
                crate::estimation::select_bivariate(&pairs, est, &v, restrict)
                    .map(|r| r.selected.first() * r.selected.second().unwrap_or(1.0) == pmax)
                    .unwrap_or(false)
            })
            .count();
        at_max as f64 / pi_tables.len().max(1) as f64
    };
    let c = crate::estimation::auto_calibrate_c_star(ctx.gl_density.c_star, 0.5, 30, frac_density);
    let c_pi = crate::estimation::auto_calibrate_c_star(ctx.gl_pi.c_star, 0.5, 30, frac_pi);
    Ok((c, c_pi))
}

impl StudyContext {
    /// Replaces the selection constants, e.g. after [`calibrate`].
    pub fn with_c_star(mut self, c_star: f64, c_star_pi: f64) -> Self {
        self.gl_density.c_star = c_star;
        self.gl_pi.c_star = c_star_pi;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::{Lattice, RunConfig};

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::preset("reference").unwrap();
        cfg.solver.dt = Some(0.05);
        let exp = &mut cfg.experiment;
        exp.n_list = vec![50, 100, 200];
        exp.replications = 3;
        exp.band_scale = 100;
        exp.density_ages = Lattice { spacing: 10.0, count: 12 };
        exp.rate_ages = Lattice { spacing: 20.0, count: 6 };
        exp.times = Lattice { spacing: 5.0, count: 3 };
        cfg.estimation.grid.points = 6;
        cfg.estimation.grid.points_2d = 4;
        cfg
    }

    #[test]
    fn single_replication_band_collapses() {
        let mut cfg = small_config();
        cfg.experiment.replications = 1;
        let ctx = StudyContext::new(cfg, 5).unwrap();
        let bands = run_pointwise_ci(&ctx, Some(2)).unwrap();
        for row in bands.density.iter().chain(&bands.intensity) {
            assert_eq!(row.adaptive.lower, row.adaptive.upper);
            assert_eq!(row.adaptive.mean, row.adaptive.lower);
        }
        for row in &bands.density {
            let direct = ctx.solution.density(row.t, row.a).unwrap();
            assert_eq!(row.truth, direct);
        }
    }

    #[test]
    fn zero_death_model_has_zero_intensity_bands() {
        let mut cfg = small_config();
        cfg.model.death = Some(crate::model::Rate::zero());
        cfg.experiment.replications = 2;
        let ctx = StudyContext::new(cfg, 9).unwrap();
        let bands = run_pointwise_ci(&ctx, Some(2)).unwrap();
        for row in &bands.intensity {
            assert_eq!((row.adaptive.lower, row.adaptive.upper, row.truth), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn studies_are_thread_independent() {
        let ctx = StudyContext::new(small_config(), 42).unwrap();
        let a = run_convergence_study(&ctx, Some(1)).unwrap();
        let b = run_convergence_study(&ctx, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fits.len(), 4);
        assert!(a.errors.iter().all(|e| e.rmse_oracle <= e.rmse_adaptive));
        let c = run_pointwise_ci(&ctx, Some(1)).unwrap();
        let d = run_pointwise_ci(&ctx, Some(4)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn calibration_never_raises_c_star() {
        let ctx = StudyContext::new(small_config(), 1).unwrap();
        let (c, c_pi) = calibrate(&ctx).unwrap();
        assert!(c <= ctx.gl_density.c_star && c_pi <= ctx.gl_pi.c_star);
        assert!(c > 0.0 && c_pi > 0.0);
    }
}
