mod common;

use agepop::estimation::{
    estimate_density, estimate_pi, gl_select_density, gl_select_pi, oracle_bandwidth, select_bivariate,
    select_univariate, Bandwidth, BandwidthGrid, BandwidthGrid2, GlConfig,
};
use agepop::experiment::study::{streams, Sample, StudyContext};
use agepop::experiment::RunConfig;
use agepop::kernels::{Kernel1D, SkewedProductKernel};
use agepop::quadrature::midpoint_split;
use agepop::rng::stream_rng;
use agepop::sim::{death_measure, PopulationState};
use common::{brute_force1, brute_force2, random_table1, random_table2};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn univariate_selection_matches_exhaustive_search() {
    for case in 0..200 {
        let t = random_table1(case);
        let report = select_univariate(&t.bandwidths, &t.estimates, &t.variances).unwrap();
        let expected = brute_force1(&t);
        assert_eq!(report.selected, Bandwidth::Single(t.bandwidths[expected]), "case {case}");
        assert_eq!(report.value, t.estimates[expected]);
    }
}

#[test]
fn bivariate_selection_matches_exhaustive_search() {
    for case in 0..200 {
        let t = random_table2(case);
        for restrict in [true, false] {
            let report = select_bivariate(&t.pairs, &t.estimates, &t.variances, restrict).unwrap();
            let (h1, h2) = t.pairs[brute_force2(&t, restrict)];
            assert_eq!(report.selected, Bandwidth::Pair(h1, h2), "case {case}, restrict {restrict}");
        }
    }
}

#[test]
fn oracle_bandwidth_matches_linear_scan() {
    for case in 0..100 {
        let mut rng = stream_rng(77, &[case]);
        let n = rng.random_range(1..20);
        let table: Vec<(Bandwidth, f64)> = (0..n)
            .map(|i| (Bandwidth::Single(0.1 * (i + 1) as f64), rng.random_range(0..6) as f64 / 4.0))
            .collect();
        let truth = rng.random_range(0..6) as f64 / 4.0 + 0.125;
        let mut best = 0;
        for i in 1..n {
            let (e, b) = ((table[i].1 - truth).abs(), (table[best].1 - truth).abs());
            if e < b || (e == b && table[i].0.first() > table[best].0.first()) {
                best = i;
            }
        }
        assert_eq!(oracle_bandwidth(truth, &table), Some(table[best].0), "case {case}");
    }
    assert_eq!(oracle_bandwidth(1.0, &[]), None);
}

fn reference_sample(n: usize, index: usize) -> (StudyContext, agepop::sim::Trajectory) {
    let ctx = StudyContext::new(RunConfig::preset("reference").unwrap(), 5).unwrap();
    let traj = ctx.replicate(streams::SIMULATE, n, index, &[10.0, 14.07]).unwrap();
    (ctx, traj)
}

#[test]
fn selection_on_simulated_data_minimizes_risk() {
    let (ctx, traj) = reference_sample(2000, 0);
    let sample = Sample::new(&traj);
    let grid = ctx.age_grid(2000).unwrap();
    let snap = sample.snapshot(10.0).unwrap();
    for a in [0.5, 5.0, 30.0, 70.0] {
        let r = gl_select_density(snap, &grid, &ctx.age_kernel, &ctx.gl_density, a).unwrap();
        let chosen = r.selected_entry();
        assert!(r.table.iter().all(|e| e.a >= 0.0 && chosen.a + chosen.v <= e.a + e.v));
        assert_eq!(chosen.estimate, estimate_density(snap, &ctx.age_kernel, chosen.bandwidth.first(), a).unwrap());
    }
    let pairs = ctx.pair_grid(2000).unwrap();
    let r = gl_select_pi(&sample.deaths, &pairs, &ctx.product_kernel, &ctx.gl_pi, 14.07, 60.0, 2000).unwrap();
    let chosen = r.selected_entry();
    assert!(r.table.iter().all(|e| chosen.a + chosen.v <= e.a + e.v));
}

#[test]
fn density_estimate_integrates_to_mass() {
    let k = Kernel1D::epanechnikov();
    let h = 1.5;
    let mut rng = stream_rng(3, &[]);
    let mut ages: Vec<f64> = (0..300).map(|_| rng.random_range(h..120.0 - h)).collect();
    ages.sort_by(f64::total_cmp);
    let snap = PopulationState { time: 0.0, ages: ages.clone(), scale: 500 };
    let breaks: Vec<f64> = ages.iter().flat_map(|&x| [x - h, x + h]).collect();
    let total = midpoint_split(|a| estimate_density(&snap, &k, h, a).unwrap(), 0.0, 120.0, &breaks, 0.001);
    assert!((total - snap.mass()).abs() < 1e-6, "{total} vs {}", snap.mass());
}

#[test]
fn zero_deaths_give_zero_intensity() {
    let pk = SkewedProductKernel::new(Kernel1D::epanechnikov(), Kernel1D::epanechnikov(), true);
    let grid = BandwidthGrid2 {
        time: BandwidthGrid::geometric(1000, 5, 20.0).unwrap(),
        age: BandwidthGrid::geometric(1000, 5, 20.0).unwrap(),
    };
    let r = gl_select_pi(&[], &grid, &pk, &GlConfig::default(), 10.0, 40.0, 1000).unwrap();
    assert_eq!(r.value, 0.0);
    assert!(r.table.iter().all(|e| e.estimate == 0.0 && e.a == 0.0));
}

#[test]
fn skewing_does_not_hurt_below_the_diagonal() {
    // Matched bandwidths, 50 replications: the cohort-aligned kernel's mean
    // squared error is at most the plain product kernel's plus two standard
    // errors of the paired difference.
    let ctx = StudyContext::new(RunConfig::preset("reference").unwrap(), 21).unwrap();
    let (t, a, h1, h2) = (14.07, 6.0, 2.0, 2.0);
    let truth = ctx.solution.death_intensity(t, a).unwrap();
    let skewed = SkewedProductKernel::new(Kernel1D::epanechnikov(), Kernel1D::epanechnikov(), true);
    let plain = SkewedProductKernel { skew: false, ..skewed.clone() };
    let n = 2000;
    let diffs: Vec<f64> = (0..50)
        .map(|r| {
            let traj = ctx.replicate(streams::SIMULATE, n, r, &[]).unwrap();
            let deaths = death_measure(&traj);
            let s = estimate_pi(&deaths, &skewed, h1, h2, t, a, n).unwrap() - truth;
            let p = estimate_pi(&deaths, &plain, h1, h2, t, a, n).unwrap() - truth;
            s * s - p * p
        })
        .collect();
    let m = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / m;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    assert!(mean <= 2.0 * sd / m.sqrt(), "mean difference {mean}, sd {sd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn comparison_scale_equivariance(case in 0u64..1000, c in 0.1f64..10.0) {
        // Scaling the estimates by sqrt(c) and the variances by c scales every
        // A + V by c and leaves the argmin alone.
        let t = random_table1(case + 1000);
        let base = select_univariate(&t.bandwidths, &t.estimates, &t.variances).unwrap();
        let est: Vec<f64> = t.estimates.iter().map(|e| e * c.sqrt()).collect();
        let var: Vec<f64> = t.variances.iter().map(|v| v * c).collect();
        let scaled = select_univariate(&t.bandwidths, &est, &var).unwrap();
        let risk = |r: &agepop::estimation::EstimateReport| {
            let e = r.selected_entry();
            e.a + e.v
        };
        prop_assert!((risk(&scaled) - c * risk(&base)).abs() <= 1e-9 * (1.0 + risk(&scaled)));
    }
}
