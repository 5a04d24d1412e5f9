//! Exhaustive reference implementations shared by the integration tests.

#![allow(dead_code)]

use agepop::rng::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;

pub struct Table1 {
    pub bandwidths: Vec<f64>,
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
}

pub struct Table2 {
    pub pairs: Vec<(f64, f64)>,
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Values on a coarse dyadic lattice half of the time so that exact ties in
/// `A + V` actually occur; otherwise continuous.
fn draw_values<R: Rng>(rng: &mut R, n: usize, coarse: bool, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..5) as f64 * scale / 4.0
            } else {
                rng.random::<f64>() * scale
            }
        })
        .collect()
}

pub fn random_table1(case: u64) -> Table1 {
    let mut rng = stream_rng(0x5eed, &[1, case]);
    let n = rng.random_range(1..=30);
    let coarse = case % 2 == 0;
    let mut bandwidths: Vec<f64> = (0..n).map(|i| 0.01 * (i + 1) as f64 * rng.random_range(1.0..1.5)).collect();
    bandwidths.sort_by(f64::total_cmp);
    bandwidths.dedup();
    let m = bandwidths.len();
    Table1 {
        estimates: draw_values(&mut rng, m, coarse, 1.0),
        variances: draw_values(&mut rng, m, coarse, 0.25),
        bandwidths,
    }
}

pub fn random_table2(case: u64) -> Table2 {
    let mut rng = stream_rng(0x5eed, &[2, case]);
    let (p, q) = (rng.random_range(1..=7), rng.random_range(1..=7));
    let coarse = case % 2 == 0;
    // Coarse cases reuse a few dyadic values so bandwidth products tie too.
    let axis = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<f64> {
        (1..=k)
            .map(|i| if coarse { 2f64.powi(i as i32 - 4) } else { 0.05 * i as f64 * rng.random_range(1.0..1.3) })
            .collect()
    };
    let (times, ages) = (axis(&mut rng, p), axis(&mut rng, q));
    let mut pairs: Vec<(f64, f64)> = times.iter().flat_map(|&x| ages.iter().map(move |&y| (x, y))).collect();
    pairs.shuffle(&mut rng);
    let m = pairs.len();
    Table2 {
        estimates: draw_values(&mut rng, m, coarse, 1.0),
        variances: draw_values(&mut rng, m, coarse, 0.25),
        pairs,
    }
}

fn penalized_gap(e_h: f64, e_g: f64, v_h: f64, v_g: f64) -> f64 {
    let gap = (e_h - e_g) * (e_h - e_g) - (v_h + v_g);
    if gap > 0.0 {
        gap
    } else {
        0.0
    }
}

/// Index chosen by an exhaustive double loop over a univariate table.
pub fn brute_force1(t: &Table1) -> usize {
    let n = t.bandwidths.len();
    let mut risks = vec![0.0; n];
    for i in 0..n {
        let mut a: f64 = 0.0;
        for j in 0..n {
            if t.bandwidths[j] <= t.bandwidths[i] {
                let gap = penalized_gap(t.estimates[i], t.estimates[j], t.variances[i], t.variances[j]);
                if gap > a {
                    a = gap;
                }
            }
        }
        risks[i] = a + t.variances[i];
    }
    let best = risks.iter().cloned().fold(f64::INFINITY, f64::min);
    (0..n)
        .filter(|&i| risks[i] == best)
        .max_by(|&i, &j| t.bandwidths[i].total_cmp(&t.bandwidths[j]))
        .unwrap()
}

/// Index chosen by an exhaustive double loop over a bivariate table.
pub fn brute_force2(t: &Table2, restrict: bool) -> usize {
    let n = t.pairs.len();
    let mut risks = vec![0.0; n];
    for i in 0..n {
        let mut a: f64 = 0.0;
        for j in 0..n {
            let below = t.pairs[j].0 <= t.pairs[i].0 && t.pairs[j].1 <= t.pairs[i].1;
            if !restrict || below {
                let gap = penalized_gap(t.estimates[i], t.estimates[j], t.variances[i], t.variances[j]);
                if gap > a {
                    a = gap;
                }
            }
        }
        risks[i] = a + t.variances[i];
    }
    let best = risks.iter().cloned().fold(f64::INFINITY, f64::min);
    let key = |i: usize| (t.pairs[i].0 * t.pairs[i].1, t.pairs[i].0);
    (0..n)
        .filter(|&i| risks[i] == best)
        .max_by(|&i, &j| key(i).partial_cmp(&key(j)).unwrap())
        .unwrap()
}
