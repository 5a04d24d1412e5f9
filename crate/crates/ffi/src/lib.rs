//! C interface to `agepop`.
//!
//! Objects cross the boundary as opaque handles created by `agepop_*_new`-style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns an [`AgepopStatus`]; on failure a message is kept per thread and can
//! be read with [`agepop_last_error`] until the next failing call on that
//! thread. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use agepop::estimation::{gl_select_density, gl_select_pi};
use agepop::experiment::config::EstimationConfig;
use agepop::experiment::study::{replicate_seeds, streams};
use agepop::experiment::RunConfig;
use agepop::model::{Domain, Model};
use agepop::sim::{death_measure, sample_initial, simulate, Death, Trajectory};
use agepop::solver::{default_dt, solve_renewal, RenewalSolution};

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgepopStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Simulation = 4,
    Solver = 5,
    Estimation = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A model together with the estimation settings read from its configuration.
pub struct AgepopModel {
    model: Model,
    estimation: EstimationConfig,
}

/// One simulated trajectory with its death process.
pub struct AgepopTrajectory {
    trajectory: Trajectory,
    deaths: Vec<Death>,
    domain: Domain,
    estimation: EstimationConfig,
}

/// Solution of the limit equation.
pub struct AgepopSolution {
    solution: RenewalSolution,
}

struct Failure(AgepopStatus, String);

type Res<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn run<F: FnOnce() -> Res<()>>(f: F) -> AgepopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgepopStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            AgepopStatus::Panic
        }
    }
}

fn fail<T>(status: AgepopStatus, err: impl std::fmt::Display) -> Res<T> {
    Err(Failure(status, err.to_string()))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    // SAFETY: the caller promises `p` is null or a live handle of type T.
    match unsafe { p.as_ref() } {
        Some(r) => Ok(r),
        None => fail(AgepopStatus::NullPointer, format!("{name} is null")),
    }
}

fn out_ptr<T>(p: *mut T, name: &str) -> Res<()> {
    if p.is_null() {
        fail(AgepopStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

fn finite(x: f64, name: &str) -> Res<()> {
    if x.is_finite() {
        Ok(())
    } else {
        fail(AgepopStatus::InvalidArgument, format!("{name} must be finite, got {x}"))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn agepop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn agepop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates the built-in reference model.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn agepop_model_reference(out: *mut *mut AgepopModel) -> AgepopStatus {
    run(|| {
        out_ptr(out, "out")?;
        let boxed = Box::new(AgepopModel {
            model: Model::reference(),
            estimation: RunConfig::preset("reference").expect("built-in preset").estimation,
        });
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// Creates a model from a run configuration in TOML (the same format as the
/// command-line `--config` files).
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_model_from_toml(toml: *const c_char, out: *mut *mut AgepopModel) -> AgepopStatus {
    run(|| {
        out_ptr(out, "out")?;
        if toml.is_null() {
            return fail(AgepopStatus::NullPointer, "toml is null");
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let text = unsafe { CStr::from_ptr(toml) }
            .to_str()
            .or_else(|e| fail(AgepopStatus::InvalidArgument, e))?;
        let config = RunConfig::from_toml(text).or_else(|e| fail(AgepopStatus::Config, e))?;
        config.validate().or_else(|e| fail(AgepopStatus::Config, e))?;
        let model = config.model.build().or_else(|e| fail(AgepopStatus::Config, e))?;
        let boxed = Box::new(AgepopModel {
            model,
            estimation: config.estimation,
        });
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// Releases a model. Passing NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agepop_model_free(model: *mut AgepopModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Observation window of a model.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_model_domain(
    model: *const AgepopModel,
    horizon: *mut f64,
    max_age: *mut f64,
) -> AgepopStatus {
    run(|| {
        let m = unsafe { handle(model, "model") }?;
        out_ptr(horizon, "horizon")?;
        out_ptr(max_age, "max_age")?;
        unsafe {
            *horizon = m.model.domain.horizon;
            *max_age = m.model.domain.max_age;
        }
        Ok(())
    })
}

/// Simulates one trajectory at scale `n`, recording snapshots at the
/// `n_times` ascending times in `times` (may be NULL when `n_times` is 0).
/// With the same seed and scale the trajectory equals the one written by
/// `agepop simulate --seed <seed> --scale <n>`.
///
/// # Safety
/// `model` must be live, `times` must hold `n_times` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_simulate(
    model: *const AgepopModel,
    n: usize,
    seed: u64,
    times: *const f64,
    n_times: usize,
    out: *mut *mut AgepopTrajectory,
) -> AgepopStatus {
    run(|| {
        let m = unsafe { handle(model, "model") }?;
        out_ptr(out, "out")?;
        let times: &[f64] = if n_times == 0 {
            &[]
        } else if times.is_null() {
            return fail(AgepopStatus::NullPointer, "times is null");
        } else {
            // SAFETY: caller guarantees n_times readable values.
            unsafe { std::slice::from_raw_parts(times, n_times) }
        };
        let (init_seed, dyn_seed) = replicate_seeds(seed, streams::SIMULATE, n, 0);
        let sim_err = |e| Failure(AgepopStatus::Simulation, format!("{e}"));
        let init = sample_initial(&m.model.initial, n, init_seed).map_err(sim_err)?;
        let trajectory = simulate(&init, &m.model.rates, &m.model.domain, times, dyn_seed).map_err(sim_err)?;
        let boxed = Box::new(AgepopTrajectory {
            deaths: death_measure(&trajectory),
            trajectory,
            domain: m.model.domain,
            estimation: m.estimation.clone(),
        });
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// Releases a trajectory. Passing NULL is a no-op.
///
/// # Safety
/// `traj` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agepop_trajectory_free(traj: *mut AgepopTrajectory) {
    if !traj.is_null() {
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Individual and event counts of a trajectory. Any output may be NULL.
///
/// # Safety
/// `traj` must be live; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_trajectory_counts(
    traj: *const AgepopTrajectory,
    initial: *mut usize,
    births: *mut usize,
    deaths: *mut usize,
    final_count: *mut usize,
) -> AgepopStatus {
    run(|| {
        let t = &unsafe { handle(traj, "traj") }?.trajectory;
        for (p, v) in [
            (initial, t.initial_count),
            (births, t.birth_count()),
            (deaths, t.death_count()),
            (final_count, t.final_state.count()),
        ] {
            if !p.is_null() {
                unsafe { *p = v };
            }
        }
        Ok(())
    })
}

/// Copies the ascending ages of the snapshot recorded at `time` (or of the
/// final state when `time` equals the horizon) into `buf`. `*len` receives
/// the number of ages; if it exceeds `cap` nothing is copied and
/// `BUFFER_TOO_SMALL` is returned, so a NULL `buf` with `cap` 0 queries the size.
///
/// # Safety
/// `traj` must be live, `buf` must hold `cap` values, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_trajectory_ages(
    traj: *const AgepopTrajectory,
    time: f64,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> AgepopStatus {
    run(|| {
        let h = unsafe { handle(traj, "traj") }?;
        out_ptr(len, "len")?;
        let t = &h.trajectory;
        let state = match t.snapshot_at(time) {
            Some(s) => s,
            None if time == t.horizon => &t.final_state,
            None => return fail(AgepopStatus::InvalidArgument, format!("no snapshot at t = {time}")),
        };
        copy_out(&state.ages, buf, cap, len)
    })
}

/// Copies the death times and ages, in time order, into `times` and `ages`
/// under the same size protocol as [`agepop_trajectory_ages`].
///
/// # Safety
/// `traj` must be live, `times` and `ages` must hold `cap` values each.
#[no_mangle]
pub unsafe extern "C" fn agepop_trajectory_deaths(
    traj: *const AgepopTrajectory,
    times: *mut f64,
    ages: *mut f64,
    cap: usize,
    len: *mut usize,
) -> AgepopStatus {
    run(|| {
        let h = unsafe { handle(traj, "traj") }?;
        out_ptr(len, "len")?;
        let d = &h.deaths;
        let t: Vec<f64> = d.iter().map(|x| x.time).collect();
        let a: Vec<f64> = d.iter().map(|x| x.age).collect();
        copy_out(&t, times, cap, len)?;
        copy_out(&a, ages, cap, len)
    })
}

fn copy_out(values: &[f64], buf: *mut f64, cap: usize, len: *mut usize) -> Res<()> {
    unsafe { *len = values.len() };
    if values.len() > cap {
        return fail(
            AgepopStatus::BufferTooSmall,
            format!("need {} values, buffer holds {cap}", values.len()),
        );
    }
    if !values.is_empty() {
        out_ptr(buf, "buf")?;
        // SAFETY: buf holds at least cap >= values.len() values.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
    }
    Ok(())
}

/// Solves the limit equation with time step `dt`; `dt <= 0` selects the
/// default step (horizon / 2000).
///
/// # Safety
/// `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_solve(model: *const AgepopModel, dt: f64, out: *mut *mut AgepopSolution) -> AgepopStatus {
    run(|| {
        let m = unsafe { handle(model, "model") }?;
        out_ptr(out, "out")?;
        let dt = if dt > 0.0 { dt } else { default_dt(&m.model.domain) };
        let solution = solve_renewal(&m.model.rates, &m.model.initial, &m.model.domain, dt)
            .or_else(|e| fail(AgepopStatus::Solver, e))?;
        unsafe { *out = Box::into_raw(Box::new(AgepopSolution { solution })) };
        Ok(())
    })
}

/// Releases a solution. Passing NULL is a no-op.
///
/// # Safety
/// `sol` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agepop_solution_free(sol: *mut AgepopSolution) {
    if !sol.is_null() {
        drop(unsafe { Box::from_raw(sol) });
    }
}

unsafe fn evaluate(
    sol: *const AgepopSolution,
    t: f64,
    a: f64,
    out: *mut f64,
    f: fn(&RenewalSolution, f64, f64) -> Result<f64, agepop::SolverError>,
) -> AgepopStatus {
    run(|| {
        let s = unsafe { handle(sol, "sol") }?;
        out_ptr(out, "out")?;
        let v = f(&s.solution, t, a).or_else(|e| fail(AgepopStatus::InvalidArgument, e))?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Limit density `g(t, a)`.
///
/// # Safety
/// `sol` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_density(sol: *const AgepopSolution, t: f64, a: f64, out: *mut f64) -> AgepopStatus {
    unsafe { evaluate(sol, t, a, out, RenewalSolution::density) }
}

/// Limit death intensity `mu(t, a) g(t, a)`.
///
/// # Safety
/// `sol` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_death_intensity(
    sol: *const AgepopSolution,
    t: f64,
    a: f64,
    out: *mut f64,
) -> AgepopStatus {
    unsafe { evaluate(sol, t, a, out, RenewalSolution::death_intensity) }
}

/// Death rate `mu(t, a)` of the model behind the solution.
///
/// # Safety
/// `sol` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_death_rate(sol: *const AgepopSolution, t: f64, a: f64, out: *mut f64) -> AgepopStatus {
    unsafe { evaluate(sol, t, a, out, RenewalSolution::death_rate) }
}

/// Adaptive density estimate at `(t, a)` from the snapshot at `t`, with the
/// selected bandwidth. `bandwidth` may be NULL.
///
/// # Safety
/// `traj` must be live; `value` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_estimate_density(
    traj: *const AgepopTrajectory,
    t: f64,
    a: f64,
    value: *mut f64,
    bandwidth: *mut f64,
) -> AgepopStatus {
    run(|| {
        let h = unsafe { handle(traj, "traj") }?;
        out_ptr(value, "value")?;
        finite(a, "a")?;
        let tr = &h.trajectory;
        let snap = match tr.snapshot_at(t) {
            Some(s) => s,
            None if t == tr.horizon => &tr.final_state,
            None => return fail(AgepopStatus::InvalidArgument, format!("no snapshot at t = {t}")),
        };
        let est = |e| Failure(AgepopStatus::Estimation, format!("{e}"));
        let grid = h.estimation.age_grid(tr.scale, &h.domain).map_err(est)?;
        let k = h.estimation.age_kernel().or_else(|e| fail(AgepopStatus::Config, e))?;
        let r = gl_select_density(snap, &grid, &k, &h.estimation.gl_density(), a).map_err(est)?;
        unsafe {
            *value = r.value;
            if !bandwidth.is_null() {
                *bandwidth = r.selected.first();
            }
        }
        Ok(())
    })
}

/// Adaptive death-intensity estimate at `(t, a)` from the death process,
/// with the selected time and age bandwidths. The bandwidth outputs may be NULL.
///
/// # Safety
/// `traj` must be live; `value` writable.
#[no_mangle]
pub unsafe extern "C" fn agepop_estimate_death_intensity(
    traj: *const AgepopTrajectory,
    t: f64,
    a: f64,
    value: *mut f64,
    bandwidth_time: *mut f64,
    bandwidth_age: *mut f64,
) -> AgepopStatus {
    run(|| {
        let h = unsafe { handle(traj, "traj") }?;
        out_ptr(value, "value")?;
        finite(t, "t")?;
        finite(a, "a")?;
        let est = |e| Failure(AgepopStatus::Estimation, format!("{e}"));
        let n = h.trajectory.scale;
        let grid = h.estimation.pair_grid(n, &h.domain).map_err(est)?;
        let pk = h.estimation.product_kernel().or_else(|e| fail(AgepopStatus::Config, e))?;
        let r = gl_select_pi(&h.deaths, &grid, &pk, &h.estimation.gl_pi(), t, a, n).map_err(est)?;
        unsafe {
            *value = r.value;
            if !bandwidth_time.is_null() {
                *bandwidth_time = r.selected.first();
            }
            if !bandwidth_age.is_null() {
                *bandwidth_age = r.selected.second().unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}
