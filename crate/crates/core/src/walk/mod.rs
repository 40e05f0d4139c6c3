//! The continuous-time walk `X_N` in the field, simulated event by event:
//! an embedded simple random walk on the torus plus exponential holding
//! times with mean `e^{β h_x}`.

mod clock;
mod excursion;
mod lattice;

pub use clock::DoubleDouble;
pub use excursion::{
    excursions, macroscopic_jumps, offset_key, run_excursions, ExcursionGeometry, ExcursionRecord,
    ExcursionScanner,
};
pub use lattice::{hitting_experiment, local_time_experiment, HittingResult, LocalTimeSamples};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::dgff::FieldSample;
use crate::error::{invalid, Error, Result};
use crate::grid::{GridPoint, Torus};
use crate::path::PathSample;
use crate::rng::{self, DirectionSource, SimRng};
use crate::traps::{ball_union_mask, TrapLandscape};

/// Default cap on the number of embedded steps of one run.
pub const DEFAULT_STEP_CAP: u64 = 50_000_000;

/// The embedded walk and its exponentials, shared by every walk routine so
/// that equal seeds give equal trajectories.
pub struct Walker {
    torus: Torus,
    pos: usize,
    dirs: DirectionSource<SimRng>,
    exps: SimRng,
}

impl Walker {
    pub fn new(n: usize, start: GridPoint, seed: u64) -> Result<Self> {
        let torus = Torus::new(n)?;
        Ok(Walker {
            torus,
            pos: torus.index(start),
            dirs: DirectionSource::new(rng::stream(seed, rng::tag::WALK, 0)),
            exps: rng::stream(seed, rng::tag::WALK, 1),
        })
    }

    /// Current vertex index `X(j)`.
    #[inline]
    pub fn position(&self) -> usize {
        self.pos
    }

    /// The exponential `E_j` attached to the current step.
    #[inline]
    pub fn exponential(&mut self) -> f64 {
        self.exps.sample(Exp1)
    }

    #[inline]
    pub fn advance(&mut self) {
        self.pos = self.torus.step(self.pos, self.dirs.next_dir());
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkOptions {
    pub start: GridPoint,
    pub step_cap: u64,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            start: GridPoint::ORIGIN,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

/// Per-step record of the embedded walk: `X(j)`, `E_j` and `e^{β h_{X(j)}} E_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClockTrace {
    pub n: usize,
    pub states: Vec<u32>,
    pub exps: Vec<f64>,
    pub contributions: Vec<f64>,
}

impl ClockTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `t(0), …, t(len)`.
    pub fn clock(&self) -> Vec<f64> {
        prefix(self.contributions.iter().copied())
    }

    /// `t^{(r,M)}(0), …, t^{(r,M)}(len)` for the given membership mask of `Λ̄`.
    pub fn trace_clock(&self, deep: &[bool]) -> Vec<f64> {
        prefix(
            self.states
                .iter()
                .zip(&self.contributions)
                .map(|(&s, &c)| if deep[s as usize] { c } else { 0.0 }),
        )
    }

    pub fn in_deep(&self, deep: &[bool]) -> Vec<bool> {
        self.states.iter().map(|&s| deep[s as usize]).collect()
    }
}

fn prefix(terms: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = DoubleDouble::ZERO;
    let mut out = vec![0.0];
    for c in terms {
        acc.add(c);
        out.push(acc.value());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkRun {
    pub path: PathSample<GridPoint>,
    pub clock: ClockTrace,
    pub beta: f64,
}

pub fn run_walk(field: &FieldSample, beta: f64, horizon: f64, seed: u64) -> Result<WalkRun> {
    run_walk_with(field, beta, horizon, seed, &WalkOptions::default())
}

/// Simulate until the first step `n` with `t(n) > horizon`.
pub fn run_walk_with(
    field: &FieldSample,
    beta: f64,
    horizon: f64,
    seed: u64,
    opts: &WalkOptions,
) -> Result<WalkRun> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
    }
    if !beta.is_finite() {
        return Err(invalid("β must be finite"));
    }
    let n = field.n;
    let mut walker = Walker::new(n, opts.start, seed)?;
    let torus = walker.torus();
    let hold: Vec<f64> = field.values.iter().map(|&h| (beta * h).exp()).collect();
    if hold.iter().any(|w| !w.is_finite()) {
        return Err(invalid("e^{βh} overflows for this field; lower β"));
    }
    let mut path = PathSample::new(horizon)?;
    let mut clock = ClockTrace {
        n,
        ..ClockTrace::default()
    };
    let mut t = DoubleDouble::ZERO;
    let mut steps = 0u64;
    loop {
        if steps >= opts.step_cap {
            return Err(Error::BudgetExceeded {
                cap: opts.step_cap,
                completed: steps,
            });
        }
        let x = walker.position();
        path.push(t.value(), torus.point(x));
        let e = walker.exponential();
        let c = hold[x] * e;
        clock.states.push(x as u32);
        clock.exps.push(e);
        clock.contributions.push(c);
        t.add(c);
        steps += 1;
        if t.value() > horizon {
            break;
        }
        walker.advance();
    }
    Ok(WalkRun { path, clock, beta })
}

/// Time spent in each vertex class up to `horizon`, without recording the
/// trajectory. Same walk as [`run_walk_with`] for equal arguments.
pub fn walk_occupation(
    field: &FieldSample,
    beta: f64,
    horizon: f64,
    seed: u64,
    opts: &WalkOptions,
    class: &[u32],
    classes: usize,
) -> Result<(Vec<f64>, u64)> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive and finite, got {horizon}")));
    }
    if class.len() != field.values.len() || class.iter().any(|&c| c as usize >= classes) {
        return Err(invalid("class map must cover the field with labels below the class count"));
    }
    let mut walker = Walker::new(field.n, opts.start, seed)?;
    let hold: Vec<f64> = field.values.iter().map(|&h| (beta * h).exp()).collect();
    if !beta.is_finite() || hold.iter().any(|w| !w.is_finite()) {
        return Err(invalid("e^{βh} overflows for this field; lower β"));
    }
    let mut occ = vec![0.0; classes];
    let mut t = DoubleDouble::ZERO;
    let mut steps = 0u64;
    loop {
        if steps >= opts.step_cap {
            return Err(Error::BudgetExceeded {
                cap: opts.step_cap,
                completed: steps,
            });
        }
        let x = walker.position();
        let start = t.value();
        t.add(hold[x] * walker.exponential());
        steps += 1;
        occ[class[x] as usize] += t.value().min(horizon) - start;
        if t.value() > horizon {
            return Ok((occ, steps));
        }
        walker.advance();
    }
}

/// The walk observed only while inside `Λ̄` (the union of the traps' `B_r`
/// balls), time-changed by the trace clock.
pub fn trace_process(run: &WalkRun, landscape: &TrapLandscape) -> Result<PathSample<GridPoint>> {
    if run.clock.n != landscape.n {
        return Err(invalid(format!(
            "walk on side {} but landscape on side {}",
            run.clock.n, landscape.n
        )));
    }
    let deep = ball_union_mask(landscape.n, &landscape.positions(), landscape.r)?;
    trace_with_mask(run, &deep)
}

pub fn trace_with_mask(run: &WalkRun, deep: &[bool]) -> Result<PathSample<GridPoint>> {
    let clock = &run.clock;
    let torus = Torus::new(clock.n)?;
    let steps = clock.len();
    let mut trace_t = DoubleDouble::ZERO;
    let mut outside = DoubleDouble::ZERO;
    let mut jumps: Vec<(f64, GridPoint)> = Vec::new();
    for j in 0..steps {
        let s = clock.states[j] as usize;
        let c = clock.contributions[j];
        if deep[s] {
            let tj = trace_t.value();
            match jumps.last_mut() {
                Some(last) if last.0 >= tj => last.1 = torus.point(s),
                _ => jumps.push((tj, torus.point(s))),
            }
            if j + 1 < steps {
                trace_t.add(c);
            }
        } else if j + 1 < steps {
            outside.add(c);
        }
    }
    // F(horizon): the last step is cut at the horizon
    let last_deep = steps > 0 && deep[clock.states[steps - 1] as usize];
    let mut total = if last_deep {
        let mut h = DoubleDouble::ZERO;
        h.add(run.path.horizon());
        h.diff(&outside)
    } else {
        trace_t.value()
    };
    if let Some(&(t, _)) = jumps.last() {
        total = total.max(t);
    }
    PathSample::from_jumps(jumps, total.max(0.0))
}
