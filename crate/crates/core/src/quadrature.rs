//! Composite rules shared by the production integration paths: trapezoid for
//! smooth integrands, midpoint on split intervals for integrands with jumps
//! (the limit density is discontinuous across the line `t = a`).

/// Composite trapezoid of `f` over `[lo, hi]` with `panels` equal panels.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / panels as f64;
    let mut sum = 0.5 * (f(lo) + f(hi));
    for i in 1..panels {
        sum += f(lo + i as f64 * h);
    }
    sum * h
}

/// Number of equal panels of width at most `max_step` covering `len`.
pub fn panels_for(len: f64, max_step: f64) -> usize {
    if len <= 0.0 {
        return 1;
    }
    ((len / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Composite midpoint rule of `f` over `[lo, hi]` with `panels` panels.
pub fn midpoint<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / panels as f64;
    (0..panels).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Midpoint rule over `[lo, hi]` after splitting at every breakpoint strictly
/// inside the interval, with panel width at most `max_step` on each piece.
/// Breakpoints are never evaluated, so jumps located there cost nothing.
pub fn midpoint_split<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    max_step: f64,
) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    let mut left = lo;
    for right in cuts.into_iter().chain(std::iter::once(hi)) {
        total += midpoint(&f, left, right, panels_for(right - left, max_step));
        left = right;
    }
    total
}
