//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::diagnostics::{weighted_discrepancy_at, TestFunctionFamily};
use crate::estimation::{EstimateReport, GlEntry};
use crate::experiment::config::{RunConfig, Target};
use crate::experiment::output::{self, num, write_csv, CONFIG_ECHO_FILE};
use crate::experiment::study::{
    self, density_report, diagnostic_weight, intensity_report, rate_estimate, streams, Bands, ConvergenceStudy, Sample,
    StudyContext, TailSummary,
};
use crate::experiment::svg::{Plot, Series, Style};
use crate::experiment::ExperimentError;
use crate::sim::{read_trajectory, write_trajectory};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "agepop", version, about = "Age-structured birth-death populations: simulation, limit solver and adaptive estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH", required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_name = "NAME", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Root seed; overrides the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (all cores when absent).
    #[arg(long, value_name = "INT")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    /// Trajectory directory written by `simulate`.
    #[arg(long, value_name = "DIR")]
    pub trajectory: PathBuf,
    /// Evaluation point `t,a`; repeatable. Defaults to the tracked points.
    #[arg(long = "point", value_name = "T,A", value_parser = parse_point)]
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and write its events and snapshots.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Population scale N; overrides the configuration.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Solve the limit equation and tabulate B, g and pi.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Adaptive estimates of g, pi and mu at points of a stored trajectory.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        points: PointArgs,
    },
    /// Full selection tables (estimates, A and V) at points of a stored trajectory.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        points: PointArgs,
    },
    /// Weighted discrepancies: per snapshot of a stored trajectory, or the
    /// replicated tail study when no trajectory is given.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        trajectory: Option<PathBuf>,
    },
    /// Confidence bands, convergence study and surfaces.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (t, a) = s.split_once(',').ok_or_else(|| format!("expected T,A, got '{s}'"))?;
    let t: f64 = t.trim().parse().map_err(|e| format!("bad t in '{s}': {e}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad a in '{s}': {e}"))?;
    Ok((t, a))
}

struct Prepared {
    config: RunConfig,
    seed: u64,
}

fn prepare(common: &Common) -> Result<Prepared, ExperimentError> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(ExperimentError::Config("either --config or --preset is required".into())),
    };
    let seed = common.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    config.seed = Some(seed);
    output::ensure_dir(&common.out)?;
    Ok(Prepared { config, seed })
}

fn finish(out: &Path, command: &str, p: &Prepared) -> Result<(), ExperimentError> {
    let text = p.config.to_toml();
    output::write_text(&out.join(CONFIG_ECHO_FILE), &text)?;
    output::write_manifest(out, command, p.seed, &text)
}

pub fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Simulate { common, scale } => {
            let mut p = prepare(&common)?;
            if let Some(n) = scale {
                p.config.simulation.scale = n;
            }
            let ctx = StudyContext::new(p.config.clone(), p.seed)?;
            let times = p.config.snapshot_times(&ctx.model.domain);
            let traj = ctx.replicate(streams::SIMULATE, p.config.simulation.scale, 0, &times)?;
            info!(
                "simulated N = {}: {} births, {} deaths",
                traj.scale,
                traj.birth_count(),
                traj.death_count()
            );
            write_trajectory(&traj, &common.out)?;
            finish(&common.out, "simulate", &p)
        }
        Command::Solve { common } => {
            let p = prepare(&common)?;
            let ctx = StudyContext::new(p.config.clone(), p.seed)?;
            let exp = &p.config.experiment;
            let d = ctx.model.domain;
            ctx.solution.write_birth_density(&common.out.join("birth_density.csv"))?;
            ctx.solution.write_lattice(
                &common.out.join("lattice.csv"),
                &exp.times.nodes(d.horizon),
                &exp.density_ages.nodes(d.max_age),
            )?;
            finish(&common.out, "solve", &p)
        }
        Command::Estimate { common, points } => {
            let p = prepare(&common)?;
            let (ctx, traj, pts) = load(&p, &points)?;
            let sample = Sample::new(&traj);
            let n = traj.scale;
            let grids = (ctx.age_grid(n)?, ctx.pair_grid(n)?);
            let mut rows = Vec::new();
            for &(t, a) in &pts {
                let g = density_report(&ctx, &sample, &grids.0, t, a)?;
                let pi = intensity_report(&ctx, &sample, &grids.1, t, a)?;
                rows.push(estimate_row(t, a, "density", &g));
                rows.push(estimate_row(t, a, "death_intensity", &pi));
                let mu = ctx.truth(Target::DeathRate, t, a)?;
                for &varpi in &p.config.estimation.varpi {
                    let est = rate_estimate(&g, &pi, varpi, mu);
                    rows.push(vec![
                        num(t),
                        num(a),
                        format!("death_rate_varpi_{varpi}"),
                        num(g.selected.first()),
                        pair_second(&pi),
                        num(est.adaptive),
                    ]);
                }
            }
            write_csv(
                &common.out.join("estimates.csv"),
                &["t", "a", "estimator", "bandwidth_1", "bandwidth_2", "value"],
                rows,
            )?;
            finish(&common.out, "estimate", &p)
        }
        Command::Select { common, points } => {
            let p = prepare(&common)?;
            let (ctx, traj, pts) = load(&p, &points)?;
            let sample = Sample::new(&traj);
            let n = traj.scale;
            let grids = (ctx.age_grid(n)?, ctx.pair_grid(n)?);
            let mut rows = Vec::new();
            for &(t, a) in &pts {
                let g = density_report(&ctx, &sample, &grids.0, t, a)?;
                let pi = intensity_report(&ctx, &sample, &grids.1, t, a)?;
                for (name, rep) in [("density", &g), ("death_intensity", &pi)] {
                    rows.extend(rep.table.iter().map(|e| selection_row(t, a, name, e, rep)));
                }
            }
            write_csv(
                &common.out.join("selection.csv"),
                &["t", "a", "estimator", "bandwidth_1", "bandwidth_2", "estimate", "A", "V", "selected"],
                rows,
            )?;
            finish(&common.out, "select", &p)
        }
        Command::Diagnose { common, trajectory } => {
            let p = prepare(&common)?;
            let ctx = StudyContext::new(p.config.clone(), p.seed)?;
            match trajectory {
                Some(dir) => {
                    let traj = read_trajectory(&dir)?;
                    let w2 = diagnostic_weight(&ctx)?;
                    let family = TestFunctionFamily::standard(&ctx.model.rates);
                    let rows = traj.snapshots.iter().map(|s| {
                        let w = weighted_discrepancy_at(s, &ctx.solution, &w2, &family, s.time);
                        vec![num(s.time), num(w), num(w / w2.interp_norm())]
                    });
                    write_csv(
                        &common.out.join("discrepancy.csv"),
                        &["t", "discrepancy", "normalized_discrepancy"],
                        rows.collect::<Vec<_>>(),
                    )?;
                }
                None => {
                    let tails = study::run_tail_study(&ctx, common.threads)?;
                    output::write_tails(&common.out, &tails)?;
                    write_svg(&common.out.join("tail.svg"), &tail_plot(&tails))?;
                }
            }
            finish(&common.out, "diagnose", &p)
        }
        Command::Experiment { common } => {
            let mut p = prepare(&common)?;
            let mut ctx = StudyContext::new(p.config.clone(), p.seed)?;
            if p.config.estimation.auto_calibrate {
                let (c, c_pi) = study::calibrate(&ctx)?;
                info!("calibrated C* = {c}, C*_pi = {c_pi}");
                ctx = ctx.with_c_star(c, c_pi);
                p.config.estimation.c_star = c;
                p.config.estimation.c_star_pi = Some(c_pi);
                p.config.estimation.auto_calibrate = false;
            }
            if p.config.experiment.surface {
                let s = study::run_surfaces(&ctx, common.threads)?;
                output::write_surfaces(&common.out, &s)?;
            }
            let bands = study::run_pointwise_ci(&ctx, common.threads)?;
            output::write_bands(&common.out, &bands)?;
            for (name, plot) in band_plots(&bands) {
                write_svg(&common.out.join(name), &plot)?;
            }
            let conv = study::run_convergence_study(&ctx, common.threads)?;
            output::write_convergence(&common.out, &conv)?;
            write_svg(&common.out.join("convergence.svg"), &convergence_plot(&conv))?;
            finish(&common.out, "experiment", &p)
        }
    }
}

fn load(p: &Prepared, args: &PointArgs) -> Result<(StudyContext, crate::sim::Trajectory, Vec<(f64, f64)>), ExperimentError> {
    let ctx = StudyContext::new(p.config.clone(), p.seed)?;
    let traj = read_trajectory(&args.trajectory)?;
    let pts = if args.points.is_empty() {
        p.config.experiment.tracked_points.iter().map(|q| (q.t, q.a)).collect()
    } else {
        args.points.clone()
    };
    for &(t, a) in &pts {
        if !ctx.model.domain.contains(t, a) {
            return Err(ExperimentError::Config(format!("point ({t}, {a}) lies outside the domain")));
        }
    }
    Ok((ctx, traj, pts))
}

fn pair_second(r: &EstimateReport) -> String {
    r.selected.second().map(num).unwrap_or_default()
}

fn estimate_row(t: f64, a: f64, name: &str, r: &EstimateReport) -> Vec<String> {
    vec![num(t), num(a), name.into(), num(r.selected.first()), pair_second(r), num(r.value)]
}

fn selection_row(t: f64, a: f64, name: &str, e: &GlEntry, r: &EstimateReport) -> Vec<String> {
    vec![
        num(t),
        num(a),
        name.into(),
        num(e.bandwidth.first()),
        e.bandwidth.second().map(num).unwrap_or_default(),
        num(e.estimate),
        num(e.a),
        num(e.v),
        u8::from(e.bandwidth == r.selected).to_string(),
    ]
}

fn write_svg(path: &Path, plot: &Plot) -> Result<(), ExperimentError> {
    output::write_text(path, &plot.render())
}

fn band_plot(title: &str, rows: &[study::BandRow]) -> Plot {
    let pick = |f: fn(&study::BandRow) -> f64| rows.iter().map(|r| (r.a, f(r))).collect::<Vec<_>>();
    Plot {
        title: title.into(),
        x_label: "age (years)".into(),
        y_label: "value".into(),
        series: vec![
            Series::new("truth", "black", Style::Line, pick(|r| r.truth)),
            Series::new("adaptive 2.5%", "orange", Style::Dashed, pick(|r| r.adaptive.lower)),
            Series::new("adaptive 97.5%", "orange", Style::Dashed, pick(|r| r.adaptive.upper)),
            Series::new("oracle 2.5%", "green", Style::Dashed, pick(|r| r.oracle.lower)),
            Series::new("oracle 97.5%", "green", Style::Dashed, pick(|r| r.oracle.upper)),
        ],
    }
}

fn band_plots(b: &Bands) -> Vec<(String, Plot)> {
    let mut out = vec![
        ("bands_density.svg".to_string(), band_plot("density", &b.density)),
        ("bands_death_intensity.svg".to_string(), band_plot("death intensity", &b.intensity)),
    ];
    for (i, (varpi, rows)) in b.rate.iter().enumerate() {
        out.push((format!("bands_death_rate_{i}.svg"), band_plot(&format!("death rate, varpi = {varpi}"), rows)));
    }
    out
}

fn convergence_plot(c: &ConvergenceStudy) -> Plot {
    const COLORS: [&str; 6] = ["orange", "blue", "purple", "brown", "teal", "gray"];
    let mut series = Vec::new();
    for (i, f) in c.fits.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let label = format!("{} ({}, {})", f.point.target, f.point.t, f.point.a);
        series.push(Series::new(
            label,
            color,
            Style::Markers,
            f.per_n_rmse.iter().map(|&(n, e, _)| ((n as f64).ln(), e.ln())).collect(),
        ));
        series.push(Series::new(
            format!("fit {:.3}", f.slope),
            color,
            Style::Line,
            f.per_n_rmse
                .iter()
                .map(|&(n, _, _)| ((n as f64).ln(), f.intercept + f.slope * (n as f64).ln()))
                .collect(),
        ));
    }
    Plot {
        title: "ln RMSE against ln N".into(),
        x_label: "ln N".into(),
        y_label: "ln RMSE".into(),
        series,
    }
}

fn tail_plot(tails: &[TailSummary]) -> Plot {
    const COLORS: [&str; 4] = ["orange", "blue", "purple", "brown"];
    let mut series: Vec<Series> = tails
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Series::new(
                format!("N = {}", t.scale),
                COLORS[i % COLORS.len()],
                Style::Line,
                t.tail.iter().map(|r| (r.u, r.empirical)).collect(),
            )
        })
        .collect();
    if let Some(t) = tails.first() {
        series.push(Series::new(
            "1/(e^u - 1)",
            "black",
            Style::Dashed,
            t.tail.iter().filter(|r| r.envelope <= 1.0).map(|r| (r.u, r.envelope)).collect(),
        ));
    }
    Plot {
        title: "empirical tail of the normalized discrepancy".into(),
        x_label: "u".into(),
        y_label: "frequency".into(),
        series,
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
