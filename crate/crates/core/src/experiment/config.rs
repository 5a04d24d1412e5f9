//! Run configuration: a strict TOML schema shared by every subcommand.
//!
//! Only the `[model]` table is required; every other table falls back to
//! the built-in study defaults. Unknown keys anywhere are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimation::{BandwidthGrid, BandwidthGrid2, EstimationError, GlConfig, DEFAULT_C_STAR};
use crate::kernels::{Kernel1D, KernelError, KernelSpec, SkewedProductKernel};
use crate::model::{Domain, ModelConfig};

use super::ExperimentError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Time step of the renewal solver; `horizon / 2000` when absent.
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Population scale `N` of the `simulate` subcommand.
    #[serde(default = "default_scale")]
    pub scale: usize,
    /// Snapshot times; the evaluation time lattice when absent.
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
}

fn default_scale() -> usize {
    4000
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            scale: default_scale(),
            snapshot_times: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Geometric,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_kind")]
    pub kind: GridKind,
    /// Points of the univariate grid (geometric kind).
    #[serde(default = "default_points")]
    pub points: usize,
    /// Points per axis of the bivariate grid (geometric kind).
    #[serde(default = "default_points_2d")]
    pub points_2d: usize,
    /// Physical length of one normalized age bandwidth unit; the horizon when absent.
    #[serde(default)]
    pub age_unit: Option<f64>,
    /// Physical length of one normalized time bandwidth unit; `horizon` when absent.
    #[serde(default)]
    pub time_unit: Option<f64>,
}

fn default_grid_kind() -> GridKind {
    GridKind::Geometric
}

fn default_points() -> usize {
    30
}

fn default_points_2d() -> usize {
    12
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            kind: default_grid_kind(),
            points: default_points(),
            points_2d: default_points_2d(),
            age_unit: None,
            time_unit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Age kernel `K`.
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Time kernel `H` of the death-intensity estimator.
    #[serde(default)]
    pub time_kernel: KernelSpec,
    #[serde(default = "yes")]
    pub skew: bool,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_c_star")]
    pub c_star: f64,
    /// Separate `C*` for the death intensity; `c_star` when absent.
    #[serde(default)]
    pub c_star_pi: Option<f64>,
    /// Thresholds of the quotient estimator, in reporting order.
    #[serde(default = "default_varpi")]
    pub varpi: Vec<f64>,
    #[serde(default = "yes")]
    pub order_restrict_bivariate: bool,
    /// Halve `C*` on a pilot replication until the selections leave the
    /// upper end of the grid.
    #[serde(default)]
    pub auto_calibrate: bool,
}

fn yes() -> bool {
    true
}

fn default_c_star() -> f64 {
    DEFAULT_C_STAR
}

fn default_varpi() -> Vec<f64> {
    vec![1e-2, 5e-3]
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            kernel: KernelSpec::default(),
            time_kernel: KernelSpec::default(),
            skew: true,
            grid: GridConfig::default(),
            c_star: default_c_star(),
            c_star_pi: None,
            varpi: default_varpi(),
            order_restrict_bivariate: true,
            auto_calibrate: false,
        }
    }
}

impl EstimationConfig {
    pub fn age_kernel(&self) -> Result<Kernel1D, KernelError> {
        self.kernel.build()
    }

    pub fn product_kernel(&self) -> Result<SkewedProductKernel, KernelError> {
        Ok(SkewedProductKernel::new(self.time_kernel.build()?, self.kernel.build()?, self.skew))
    }

    pub fn gl_density(&self) -> GlConfig {
        GlConfig {
            c_star: self.c_star,
            varpi: self.varpi.first().copied().unwrap_or(1e-2),
            order_restrict_bivariate: self.order_restrict_bivariate,
        }
    }

    pub fn gl_pi(&self) -> GlConfig {
        GlConfig {
            c_star: self.c_star_pi.unwrap_or(self.c_star),
            ..self.gl_density()
        }
    }

    pub fn age_grid(&self, scale: usize, domain: &Domain) -> Result<BandwidthGrid, EstimationError> {
        let unit = self.grid.age_unit.unwrap_or(domain.horizon);
        match self.grid.kind {
            GridKind::Geometric => BandwidthGrid::geometric(scale, self.grid.points, unit),
            GridKind::Dense => BandwidthGrid::dense(scale, unit),
        }
    }

    pub fn pair_grid(&self, scale: usize, domain: &Domain) -> Result<BandwidthGrid2, EstimationError> {
        let age_unit = self.grid.age_unit.unwrap_or(domain.horizon);
        let time_unit = self.grid.time_unit.unwrap_or(domain.horizon);
        let (time, age) = match self.grid.kind {
            GridKind::Geometric => (
                BandwidthGrid::geometric(scale, self.grid.points_2d, time_unit)?,
                BandwidthGrid::geometric(scale, self.grid.points_2d, age_unit)?,
            ),
            GridKind::Dense => (BandwidthGrid::dense(scale, time_unit)?, BandwidthGrid::dense(scale, age_unit)?),
        };
        Ok(BandwidthGrid2 { time, age })
    }
}

/// Arithmetic lattice `{k * spacing, 0 <= k < count}`, clipped to a bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub spacing: f64,
    pub count: usize,
}

impl Lattice {
    pub fn nodes(&self, bound: f64) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.count).map(|k| (k as f64 * self.spacing).min(bound)).collect();
        out.dedup();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Density,
    DeathIntensity,
    DeathRate,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Density => "density",
            Target::DeathIntensity => "death_intensity",
            Target::DeathRate => "death_rate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedPoint {
    pub target: Target,
    pub t: f64,
    pub a: f64,
}

/// Smoothness indices of `b` (`alpha` in time, `beta` in age) and `mu`
/// (`gamma`, `delta`), used for the theoretical rate lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smoothness {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for Smoothness {
    fn default() -> Self {
        Smoothness {
            alpha: 3.0,
            beta: 3.0,
            gamma: 3.0,
            delta: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Population scales of the convergence study, ascending.
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Scale of the confidence bands and of the surface run.
    #[serde(default = "default_scale")]
    pub band_scale: usize,
    /// Time of the confidence bands.
    #[serde(default = "default_band_time")]
    pub band_time: f64,
    #[serde(default = "default_times")]
    pub times: Lattice,
    #[serde(default = "default_density_ages")]
    pub density_ages: Lattice,
    #[serde(default = "default_rate_ages")]
    pub rate_ages: Lattice,
    /// Estimate the full surfaces on one replication.
    #[serde(default = "yes")]
    pub surface: bool,
    #[serde(default = "default_tracked")]
    pub tracked_points: Vec<TrackedPoint>,
    #[serde(default)]
    pub smoothness: Smoothness,
}

fn default_n_list() -> Vec<usize> {
    vec![100, 500, 1000, 2000, 4000, 8000]
}

fn default_replications() -> usize {
    50
}

fn default_band_time() -> f64 {
    10.0
}

fn default_times() -> Lattice {
    Lattice { spacing: 1.005, count: 20 }
}

fn default_density_ages() -> Lattice {
    Lattice { spacing: 0.2002, count: 600 }
}

fn default_rate_ages() -> Lattice {
    Lattice { spacing: 1.0008, count: 120 }
}

fn default_tracked() -> Vec<TrackedPoint> {
    vec![
        TrackedPoint { target: Target::Density, t: 16.08, a: 20.82 },
        TrackedPoint { target: Target::Density, t: 19.10, a: 0.40 },
        TrackedPoint { target: Target::DeathIntensity, t: 14.07, a: 86.07 },
        TrackedPoint { target: Target::DeathIntensity, t: 11.06, a: 0.00 },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_list: default_n_list(),
            replications: default_replications(),
            band_scale: default_scale(),
            band_time: default_band_time(),
            times: default_times(),
            density_ages: default_density_ages(),
            rate_ages: default_rate_ages(),
            surface: true,
            tracked_points: default_tracked(),
            smoothness: Smoothness::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_diag_scales")]
    pub scales: Vec<usize>,
    #[serde(default = "default_diag_replications")]
    pub replications: usize,
    /// Time at which the discrepancy is measured.
    #[serde(default = "default_band_time")]
    pub time: f64,
    /// Bandwidth of the Epanechnikov weight `w2`.
    #[serde(default = "default_weight_bandwidth")]
    pub weight_bandwidth: f64,
    /// Birth date on which `w2` is centered.
    #[serde(default = "default_weight_center")]
    pub weight_center: f64,
    /// Step and length of the `u` grid of the tail tables.
    #[serde(default = "default_u_step")]
    pub u_step: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

fn default_diag_scales() -> Vec<usize> {
    vec![500, 2000, 8000]
}

fn default_diag_replications() -> usize {
    200
}

fn default_weight_bandwidth() -> f64 {
    0.1
}

fn default_weight_center() -> f64 {
    5.0
}

fn default_u_step() -> f64 {
    0.05
}

fn default_u_max() -> f64 {
    5.0
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            scales: default_diag_scales(),
            replications: default_diag_replications(),
            time: default_band_time(),
            weight_bandwidth: default_weight_bandwidth(),
            weight_center: default_weight_center(),
            u_step: default_u_step(),
            u_max: default_u_max(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn u_grid(&self) -> Vec<f64> {
        let n = (self.u_max / self.u_step).round() as usize;
        (0..=n).map(|i| i as f64 * self.u_step).collect()
    }
}

pub const PRESETS: &[&str] = &["reference"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ExperimentError> {
        match name {
            "reference" => Ok(RunConfig {
                seed: None,
                model: ModelConfig::reference(),
                solver: SolverConfig::default(),
                simulation: SimulationConfig::default(),
                estimation: EstimationConfig::default(),
                experiment: ExperimentConfig::default(),
                diagnostics: DiagnosticsConfig::default(),
            }),
            other => Err(ExperimentError::Config(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical serialization, hashed into the run manifest.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        let model = self.model.build()?;
        let domain = model.domain;
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("solver.dt must be positive, got {dt}"));
            }
        }
        if self.simulation.scale == 0 {
            return bad("simulation.scale must be positive".into());
        }
        if let Some(times) = &self.simulation.snapshot_times {
            if times.iter().any(|&t| !(0.0..=domain.horizon).contains(&t)) {
                return bad("simulation.snapshot_times must lie in [0, horizon]".into());
            }
        }
        let est = &self.estimation;
        est.age_kernel()?;
        est.product_kernel()?;
        if est.varpi.is_empty() {
            return bad("estimation.varpi needs at least one threshold".into());
        }
        est.gl_density().validate()?;
        est.gl_pi().validate()?;
        for v in &est.varpi {
            if !(*v > 0.0 && v.is_finite()) {
                return bad(format!("estimation.varpi must be positive, got {v}"));
            }
        }
        if est.grid.points == 0 || est.grid.points_2d == 0 {
            return bad("estimation.grid needs at least one point per axis".into());
        }
        for unit in [est.grid.age_unit, est.grid.time_unit].into_iter().flatten() {
            if !(unit > 0.0 && unit.is_finite()) {
                return bad(format!("bandwidth units must be positive, got {unit}"));
            }
        }
        let exp = &self.experiment;
        if exp.n_list.is_empty() || exp.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad("experiment.n_list must be nonempty and strictly ascending".into());
        }
        if exp.n_list[0] < 2 || exp.band_scale < 2 {
            return bad("population scales must be at least 2".into());
        }
        if exp.replications == 0 {
            return bad("experiment.replications must be positive".into());
        }
        if !(0.0..=domain.horizon).contains(&exp.band_time) {
            return bad("experiment.band_time must lie in [0, horizon]".into());
        }
        for lat in [exp.times, exp.density_ages, exp.rate_ages] {
            if !(lat.spacing > 0.0 && lat.spacing.is_finite()) || lat.count == 0 {
                return bad("lattices need a positive spacing and count".into());
            }
        }
        for p in &exp.tracked_points {
            if !domain.contains(p.t, p.a) {
                return bad(format!("tracked point ({}, {}) lies outside the domain", p.t, p.a));
            }
            if (p.t - p.a).abs() < 1e-9 {
                return bad(format!("tracked point ({}, {}) lies on the diagonal t = a", p.t, p.a));
            }
        }
        let s = exp.smoothness;
        if [s.alpha, s.beta, s.gamma, s.delta].iter().any(|&x| !(x > 0.0)) {
            return bad("smoothness indices must be positive".into());
        }
        let diag = &self.diagnostics;
        if diag.scales.is_empty() || diag.scales.contains(&0) || diag.replications == 0 {
            return bad("diagnostics needs positive scales and replications".into());
        }
        if !(diag.weight_bandwidth > 0.0) || !(diag.u_step > 0.0) || !(diag.u_max >= 0.0) {
            return bad("diagnostics.weight_bandwidth and u_step must be positive".into());
        }
        if !(0.0..=domain.horizon).contains(&diag.time) {
            return bad("diagnostics.time must lie in [0, horizon]".into());
        }
        Ok(())
    }

    /// Snapshot times every subcommand needs from a trajectory: the time
    /// lattice, the band and diagnostic times and the tracked times.
    pub fn snapshot_times(&self, domain: &Domain) -> Vec<f64> {
        if let Some(times) = &self.simulation.snapshot_times {
            let mut t = times.clone();
            t.sort_by(f64::total_cmp);
            t.dedup();
            return t;
        }
        let exp = &self.experiment;
        let mut t = exp.times.nodes(domain.horizon);
        t.push(exp.band_time);
        t.push(self.diagnostics.time);
        t.extend(exp.tracked_points.iter().map(|p| p.t));
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips() {
        let cfg = RunConfig::preset("reference").unwrap();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn minimal_file() {
        let cfg = RunConfig::from_toml("[model]\npreset = \"reference\"\n").unwrap();
        assert_eq!(cfg.experiment.n_list, vec![100, 500, 1000, 2000, 4000, 8000]);
        assert_eq!(cfg.estimation.varpi, vec![0.01, 0.005]);
    }

    #[test]
    fn unknown_keys_fail() {
        for text in [
            "[model]\npreset = \"reference\"\n[experiment]\nreplicatons = 3\n",
            "sed = 1\n[model]\npreset = \"reference\"\n",
            "[model]\npreset = \"reference\"\n[estimation.grid]\npoint = 3\n",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
        assert!(RunConfig::from_toml("").is_err());
    }

    #[test]
    fn invariants_checked() {
        for text in [
            "[model]\npreset = \"reference\"\n[experiment]\nn_list = [500, 100]\n",
            "[model]\npreset = \"reference\"\n[[experiment.tracked_points]]\ntarget = \"density\"\nt = 5.0\na = 5.0\n",
            "[model]\npreset = \"reference\"\n[estimation]\nvarpi = []\n",
            "[model]\npreset = \"reference\"\n[estimation]\nkernel = \"gaussian\"\n",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn lattices() {
        let ages = default_density_ages().nodes(120.0);
        assert_eq!(ages.len(), 600);
        assert!((ages[599] - 599.0 * 0.2002).abs() < 1e-12);
        let clipped = Lattice { spacing: 1.0008, count: 121 }.nodes(120.0);
        assert_eq!(*clipped.last().unwrap(), 120.0);
        let cfg = RunConfig::preset("reference").unwrap();
        let times = cfg.snapshot_times(&Domain::new(20.0, 120.0).unwrap());
        assert!(times.contains(&16.08) && times.contains(&10.0) && times.windows(2).all(|w| w[0] < w[1]));
    }
}
