//! Exact simulation of the renormalized age-structured birth-death process by
//! thinning, and extraction of the death point process.
//!
//! Between events every age grows with slope one. Candidate events arrive at
//! the dominating rate `n * (birth_sup + death_sup)`; each candidate picks an
//! individual uniformly and a mark `theta` uniformly on `(0, birth_sup +
//! death_sup]`, and is accepted as a birth if `theta <= b`, as a death if
//! `b < theta <= b + mu`, and rejected otherwise.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Domain, InitialDensity, RateField};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("population scale must be at least 1")]
    ZeroScale,
    #[error("initial state must be at time 0, got {0}")]
    InitialTime(f64),
    #[error("snapshot times must be sorted and inside [0, {horizon}], offending value {value}")]
    SnapshotTimes { value: f64, horizon: f64 },
    #[error(
        "{which} rate {value} at (t={t}, a={a}) exceeds its certified bound {bound}; thinning would be invalid"
    )]
    BoundViolation {
        which: &'static str,
        t: f64,
        a: f64,
        value: f64,
        bound: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory file {file}, line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
}

/// Renormalized empirical measure `N^{-1} sum_i delta_{a_i}` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState {
    pub time: f64,
    /// Ascending; equal ages keep their insertion order.
    pub ages: Vec<f64>,
    pub scale: usize,
}

impl PopulationState {
    pub fn count(&self) -> usize {
        self.ages.len()
    }

    /// Total mass `<Z, 1> = count / N`.
    pub fn mass(&self) -> f64 {
        self.ages.len() as f64 / self.scale as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Birth,
    Death,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Birth => "birth",
            EventKind::Death => "death",
        })
    }
}

/// One accepted event. `individual` is the parent for a birth and the
/// deceased for a death; `age` is that individual's age at the event.
/// Individuals are numbered `0..initial_count` in the initial (ascending-age)
/// order, then newborns in order of birth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub age: f64,
    pub individual: u64,
}

/// A point `(T_i, A_i)` of the death process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Death {
    pub time: f64,
    pub age: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scale: usize,
    pub seed: u64,
    pub horizon: f64,
    pub initial_count: usize,
    pub snapshots: Vec<PopulationState>,
    pub events: Vec<EventRecord>,
    pub final_state: PopulationState,
}

impl Trajectory {
    pub fn births(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Birth)
            .map(|e| e.time)
            .collect()
    }

    pub fn death_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Death).count()
    }

    pub fn birth_count(&self) -> usize {
        self.events.len() - self.death_count()
    }

    /// Snapshot recorded at exactly `time`, if any.
    pub fn snapshot_at(&self, time: f64) -> Option<&PopulationState> {
        self.snapshots.iter().find(|s| s.time == time)
    }
}

/// Draws `n` i.i.d. ages from the normalized initial law, sorted ascending.
pub fn sample_initial(
    g0: &InitialDensity,
    n: usize,
    seed: u64,
) -> Result<PopulationState, SimError> {
    if n == 0 {
        return Err(SimError::ZeroScale);
    }
    let mut rng = stream_rng(seed, &[]);
    let mut ages: Vec<f64> = (0..n).map(|_| g0.sample(&mut rng)).collect();
    ages.sort_by(f64::total_cmp);
    Ok(PopulationState {
        time: 0.0,
        ages,
        scale: n,
    })
}

struct Population {
    /// Birth date of every individual ever alive (initial ones are negative).
    birth_dates: Vec<f64>,
    /// Ids of living individuals; uniform selection picks a position here.
    alive: Vec<u32>,
    /// Position of each id inside `alive` (meaningless once dead).
    slot: Vec<u32>,
}

impl Population {
    fn new(initial: &[f64]) -> Self {
        let n = initial.len();
        Population {
            birth_dates: initial.iter().map(|&a| -a).collect(),
            alive: (0..n as u32).collect(),
            slot: (0..n as u32).collect(),
        }
    }

    fn add(&mut self, birth_date: f64) -> u32 {
        let id = self.birth_dates.len() as u32;
        self.birth_dates.push(birth_date);
        self.slot.push(self.alive.len() as u32);
        self.alive.push(id);
        id
    }

    fn remove_at(&mut self, pos: usize) {
        self.alive.swap_remove(pos);
        if pos < self.alive.len() {
            let moved = self.alive[pos];
            self.slot[moved as usize] = pos as u32;
        }
    }

    fn state_at(&self, time: f64, scale: usize) -> PopulationState {
        let mut keyed: Vec<(f64, u32)> = self
            .alive
            .iter()
            .map(|&id| (time - self.birth_dates[id as usize], id))
            .collect();
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        PopulationState {
            time,
            ages: keyed.into_iter().map(|(a, _)| a).collect(),
            scale,
        }
    }
}

/// Simulates the process on `[0, domain.horizon]` from `init`.
///
/// Snapshots are taken at each requested time with ages advanced to it; an
/// event falling exactly on a snapshot time is applied after the snapshot.
pub fn simulate(
    init: &PopulationState,
    rates: &RateField,
    domain: &Domain,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<Trajectory, SimError> {
    if init.scale == 0 {
        return Err(SimError::ZeroScale);
    }
    if init.time != 0.0 {
        return Err(SimError::InitialTime(init.time));
    }
    let horizon = domain.horizon;
    let mut prev = 0.0;
    for &s in snapshot_times {
        if !(s >= prev && s <= horizon) {
            return Err(SimError::SnapshotTimes { value: s, horizon });
        }
        prev = s;
    }

    let mut rng = stream_rng(seed, &[]);
    let mut pop = Population::new(&init.ages);
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    let mut pending = snapshot_times.iter().copied().peekable();
    let b_sup = rates.birth_sup();
    let total = b_sup + rates.death_sup();
    let mut t = 0.0;

    loop {
        let n = pop.alive.len();
        let next = if n == 0 || total == 0.0 {
            f64::INFINITY
        } else {
            let e: f64 = Exp1.sample(&mut rng);
            t + e / (n as f64 * total)
        };
        while let Some(&s) = pending.peek() {
            if s <= next {
                snapshots.push(pop.state_at(s, init.scale));
                pending.next();
            } else {
                break;
            }
        }
        if next > horizon {
            break;
        }
        t = next;

        let pos = rng.random_range(0..n);
        let id = pop.alive[pos];
        let age = t - pop.birth_dates[id as usize];
        let b = rates.birth(t, age);
        let mu = rates.death(t, age);
        if !(b >= 0.0 && b <= b_sup) {
            return Err(SimError::BoundViolation {
                which: "birth",
                t,
                a: age,
                value: b,
                bound: b_sup,
            });
        }
        if !(mu >= 0.0 && mu <= rates.death_sup()) {
            return Err(SimError::BoundViolation {
                which: "death",
                t,
                a: age,
                value: mu,
                bound: rates.death_sup(),
            });
        }
        let theta = (1.0 - rng.random::<f64>()) * total;
        if theta <= b {
            pop.add(t);
            events.push(EventRecord {
                time: t,
                kind: EventKind::Birth,
                age,
                individual: id as u64,
            });
        } else if theta <= b + mu {
            pop.remove_at(pos);
            events.push(EventRecord {
                time: t,
                kind: EventKind::Death,
                age,
                individual: id as u64,
            });
        }
    }

    Ok(Trajectory {
        scale: init.scale,
        seed,
        horizon,
        initial_count: init.ages.len(),
        snapshots,
        events,
        final_state: pop.state_at(horizon, init.scale),
    })
}

/// The death point process `(T_i, A_i)`, in time order.
pub fn death_measure(traj: &Trajectory) -> Vec<Death> {
    traj.events
        .iter()
        .filter(|e| e.kind == EventKind::Death)
        .map(|e| Death {
            time: e.time,
            age: e.age,
        })
        .collect()
}

/// Right-continuous step function of time.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    /// Jump times, starting with the left end of the support.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        self.values[idx.saturating_sub(1)]
    }
}

/// Total mass `<Z_t, 1>` as a step function with jumps of `+-1/N`.
pub fn population_size_path(traj: &Trajectory) -> StepFunction {
    let scale = traj.scale as f64;
    let mut count = traj.initial_count as i64;
    let mut times = Vec::with_capacity(traj.events.len() + 1);
    let mut values = Vec::with_capacity(traj.events.len() + 1);
    times.push(0.0);
    values.push(count as f64 / scale);
    for e in &traj.events {
        count += match e.kind {
            EventKind::Birth => 1,
            EventKind::Death => -1,
        };
        times.push(e.time);
        values.push(count as f64 / scale);
    }
    StepFunction { times, values }
}

/// Metadata written next to the event and snapshot tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub scale: usize,
    pub seed: u64,
    pub horizon: f64,
    pub initial_count: usize,
    /// Requested snapshot times; a trailing horizon block in the snapshot
    /// table that is not listed here is the final state.
    pub snapshot_times: Vec<f64>,
}

pub const EVENTS_FILE: &str = "events.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const TRAJECTORY_META_FILE: &str = "trajectory.toml";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `events.csv` (`time,kind,age,index`), `snapshots.csv`
/// (`snapshot_time,age`) and `trajectory.toml`. The final state is stored as
/// the snapshot at the horizon.
pub fn write_trajectory(traj: &Trajectory, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(EVENTS_FILE))?);
    writeln!(w, "time,kind,age,index")?;
    for e in &traj.events {
        writeln!(w, "{},{},{},{}", fmt_f64(e.time), e.kind, fmt_f64(e.age), e.individual)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join(SNAPSHOTS_FILE))?);
    writeln!(w, "snapshot_time,age")?;
    let has_final = traj.snapshots.last().is_some_and(|s| s.time == traj.horizon);
    let extra = (!has_final).then_some(&traj.final_state);
    for snap in traj.snapshots.iter().chain(extra) {
        let ts = fmt_f64(snap.time);
        for &a in &snap.ages {
            writeln!(w, "{ts},{}", fmt_f64(a))?;
        }
    }
    w.flush()?;

    let meta = TrajectoryMeta {
        scale: traj.scale,
        seed: traj.seed,
        horizon: traj.horizon,
        initial_count: traj.initial_count,
        snapshot_times: traj.snapshots.iter().map(|s| s.time).collect(),
    };
    fs::write(
        dir.join(TRAJECTORY_META_FILE),
        toml::to_string(&meta).expect("metadata serializes"),
    )?;
    Ok(())
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> SimError {
    SimError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(s: &str, file: &str, line: usize) -> Result<f64, SimError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| parse_err(file, line, format!("bad number '{s}': {e}")))
}

/// Reads a trajectory written by [`write_trajectory`].
pub fn read_trajectory(dir: &Path) -> Result<Trajectory, SimError> {
    let meta_text = fs::read_to_string(dir.join(TRAJECTORY_META_FILE))?;
    let meta: TrajectoryMeta = toml::from_str(&meta_text)
        .map_err(|e| parse_err(TRAJECTORY_META_FILE, 0, e.to_string()))?;

    let mut events = Vec::new();
    let reader = BufReader::new(fs::File::open(dir.join(EVENTS_FILE))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "time,kind,age,index" {
                return Err(parse_err(EVENTS_FILE, 1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(parse_err(EVENTS_FILE, i + 1, "expected 4 columns"));
        }
        let kind = match cols[1].trim() {
            "birth" => EventKind::Birth,
            "death" => EventKind::Death,
            other => return Err(parse_err(EVENTS_FILE, i + 1, format!("unknown kind '{other}'"))),
        };
        events.push(EventRecord {
            time: parse_f64(cols[0], EVENTS_FILE, i + 1)?,
            kind,
            age: parse_f64(cols[2], EVENTS_FILE, i + 1)?,
            individual: cols[3]
                .trim()
                .parse()
                .map_err(|e| parse_err(EVENTS_FILE, i + 1, format!("bad index: {e}")))?,
        });
    }

    let mut blocks: Vec<(f64, Vec<f64>)> = Vec::new();
    let reader = BufReader::new(fs::File::open(dir.join(SNAPSHOTS_FILE))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "snapshot_time,age" {
                return Err(parse_err(SNAPSHOTS_FILE, 1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (ts, age) = line
            .split_once(',')
            .ok_or_else(|| parse_err(SNAPSHOTS_FILE, i + 1, "expected 2 columns"))?;
        let ts = parse_f64(ts, SNAPSHOTS_FILE, i + 1)?;
        let age = parse_f64(age, SNAPSHOTS_FILE, i + 1)?;
        match blocks.last_mut() {
            Some((t, ages)) if *t == ts => ages.push(age),
            _ => blocks.push((ts, vec![age])),
        }
    }

    // Blocks appear in snapshot order; requested times without rows are empty.
    let mut blocks = blocks.into_iter().peekable();
    let mut take_block = |time: f64| match blocks.peek() {
        Some((t, _)) if *t == time => blocks.next().map(|(_, a)| a).unwrap_or_default(),
        _ => Vec::new(),
    };
    let mut snapshots = Vec::with_capacity(meta.snapshot_times.len());
    for &time in &meta.snapshot_times {
        snapshots.push(PopulationState {
            time,
            ages: take_block(time),
            scale: meta.scale,
        });
    }
    let final_state = match snapshots.last() {
        Some(s) if s.time == meta.horizon => s.clone(),
        _ => PopulationState {
            time: meta.horizon,
            ages: take_block(meta.horizon),
            scale: meta.scale,
        },
    };
    Ok(Trajectory {
        scale: meta.scale,
        seed: meta.seed,
        horizon: meta.horizon,
        initial_count: meta.initial_count,
        snapshots,
        events,
        final_state,
    })
}
