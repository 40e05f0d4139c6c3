//! Decomposition of the embedded walk into visits to deep traps: entry
//! times `R_k` into `Λ̄` (the union of `B_r` trap balls), exit times `S_k`
//! from `B_{r_N}(Λ)`, trap ordinals and local times.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde_json::{json, Map, Value};

use crate::error::{invalid, Result};
use crate::grid::{BallOffsets, GridPoint, Torus};
use crate::rng::{self, SimRng};
use crate::scales::{separation_scale, G};
use crate::traps::{ball_union_mask, TrapLandscape};

use super::{ClockTrace, Walker};

const NO_SLOT: u32 = u32::MAX;

/// Precomputed membership tables for one landscape.
#[derive(Debug, Clone)]
pub struct ExcursionGeometry {
    n: usize,
    m: usize,
    separated: bool,
    log_n: f64,
    offsets: Vec<GridPoint>,
    /// `trap * |B_r| + offset` for vertices of `Λ̄`, nearest trap on overlap.
    slot: Vec<u32>,
    /// Membership in `B_{r_N}(Λ)`.
    inner: Vec<bool>,
}

impl ExcursionGeometry {
    pub fn new(landscape: &TrapLandscape) -> Result<Self> {
        let n = landscape.n;
        if landscape.traps.is_empty() {
            return Err(invalid("landscape has no traps"));
        }
        let torus = Torus::new(n)?;
        let offsets = BallOffsets::new(landscape.r)?.offsets().to_vec();
        let b = offsets.len() as u32;
        let mut slot = vec![NO_SLOT; torus.len()];
        let mut best = vec![i64::MAX; torus.len()];
        for (k, t) in landscape.traps.iter().enumerate() {
            for (o, &off) in offsets.iter().enumerate() {
                let idx = torus.index(t.position.offset(off));
                let d = off.norm_sq();
                if d < best[idx] {
                    best[idx] = d;
                    slot[idx] = k as u32 * b + o as u32;
                }
            }
        }
        let r_n = separation_scale(n)?;
        let inner = ball_union_mask(n, &landscape.positions(), r_n)?;
        Ok(ExcursionGeometry {
            n,
            m: landscape.traps.len(),
            separated: landscape.separated,
            log_n: (n as f64).ln(),
            offsets,
            slot,
            inner,
        })
    }

    pub fn offsets(&self) -> &[GridPoint] {
        &self.offsets
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn traps(&self) -> usize {
        self.m
    }

    pub fn separated(&self) -> bool {
        self.separated
    }

    pub fn log_n(&self) -> f64 {
        self.log_n
    }

    #[inline]
    pub fn in_trap_balls(&self, idx: usize) -> bool {
        self.slot[idx] != NO_SLOT
    }

    #[inline]
    pub fn in_exit_zone(&self, idx: usize) -> bool {
        self.inner[idx]
    }
}

/// One visit to a deep trap.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionRecord {
    /// 1-based visit index.
    pub k: usize,
    pub r: u64,
    pub s: u64,
    /// 1-based trap ordinal.
    pub ordinal: usize,
    /// `L'_k(y)` over the ball offsets, before division by `log N`.
    pub local_times: Vec<f64>,
    /// `false` if the trajectory ended before the exit time.
    pub complete: bool,
}

/// Key used for the offset `(dx, dy)` in serialised local-time maps.
pub fn offset_key(o: GridPoint) -> String {
    format!("{}_{}", o.y, o.x)
}

impl ExcursionRecord {
    pub fn to_json(&self, offsets: &[GridPoint]) -> Value {
        let mut lt = Map::new();
        for (o, v) in offsets.iter().zip(&self.local_times) {
            lt.insert(offset_key(*o), json!(v));
        }
        json!({
            "k": self.k,
            "R": self.r,
            "S": self.s,
            "ordinal": self.ordinal,
            "complete": self.complete,
            "local_times": lt,
        })
    }
}

/// Streaming scanner; feed it `(j, X(j), E_j)` in step order.
pub struct ExcursionScanner<'g> {
    geom: &'g ExcursionGeometry,
    ordinals: SimRng,
    extra: SimRng,
    current: Option<ExcursionRecord>,
    records: Vec<ExcursionRecord>,
    completed: usize,
    last_step: u64,
}

impl<'g> ExcursionScanner<'g> {
    pub fn new(geom: &'g ExcursionGeometry, seed: u64) -> Self {
        ExcursionScanner {
            geom,
            ordinals: rng::stream(seed, rng::tag::ORDINAL, 0),
            extra: rng::stream(seed, rng::tag::ORDINAL, 1),
            current: None,
            records: Vec::new(),
            completed: 0,
            last_step: 0,
        }
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    fn open(&mut self, step: u64, idx: usize) {
        let g = self.geom;
        let b = g.offsets.len();
        let (ordinal, local_times) = if g.separated {
            ((g.slot[idx] as usize / b) + 1, vec![0.0; b])
        } else {
            let u = self.ordinals.random_range(1..=g.m);
            let e = Exp::new(1.0 / G).expect("positive rate").sample(&mut self.extra);
            (u, vec![e * g.log_n; b])
        };
        self.current = Some(ExcursionRecord {
            k: self.records.len() + 1,
            r: step,
            s: step,
            ordinal,
            local_times,
            complete: false,
        });
    }

    /// Returns `true` when this step closes an excursion.
    pub fn feed(&mut self, step: u64, idx: usize, e: f64) -> bool {
        let g = self.geom;
        self.last_step = step;
        if self.current.is_none() && g.slot[idx] != NO_SLOT {
            self.open(step, idx);
        }
        let Some(rec) = self.current.as_mut() else {
            return false;
        };
        if g.separated {
            let s = g.slot[idx];
            let b = g.offsets.len() as u32;
            if s != NO_SLOT && (s / b) as usize + 1 == rec.ordinal {
                rec.local_times[(s % b) as usize] += e;
            }
        }
        if !g.inner[idx] {
            let mut rec = self.current.take().expect("open excursion");
            rec.s = step;
            rec.complete = true;
            self.records.push(rec);
            self.completed += 1;
            // S_k may already lie in Λ̄ when r exceeds r_N
            if g.slot[idx] != NO_SLOT {
                self.open(step, idx);
            }
            return true;
        }
        false
    }

    /// All records, the last one flagged incomplete if still open.
    pub fn finish(mut self) -> Vec<ExcursionRecord> {
        if let Some(mut rec) = self.current.take() {
            rec.s = self.last_step;
            self.records.push(rec);
        }
        self.records
    }
}

/// Excursions of a recorded trajectory.
pub fn excursions(clock: &ClockTrace, landscape: &TrapLandscape, n: usize, seed: u64) -> Result<Vec<ExcursionRecord>> {
    if clock.n != n || landscape.n != n {
        return Err(invalid("trajectory, landscape and N disagree"));
    }
    let geom = ExcursionGeometry::new(landscape)?;
    let mut sc = ExcursionScanner::new(&geom, seed);
    for (j, (&x, &e)) in clock.states.iter().zip(&clock.exps).enumerate() {
        sc.feed(j as u64, x as usize, e);
    }
    Ok(sc.finish())
}

#[derive(Debug, Clone)]
pub struct ExcursionRun {
    pub records: Vec<ExcursionRecord>,
    pub steps: u64,
}

/// Run the embedded walk (same stream as [`super::run_walk`]) until `target`
/// excursions have completed or `step_cap` steps were taken.
pub fn run_excursions(
    geom: &ExcursionGeometry,
    start: GridPoint,
    seed: u64,
    target: usize,
    step_cap: u64,
) -> Result<ExcursionRun> {
    let mut walker = Walker::new(geom.n, start, seed)?;
    let mut sc = ExcursionScanner::new(geom, seed);
    let mut step = 0u64;
    while sc.completed() < target && step < step_cap {
        let e = walker.exponential();
        sc.feed(step, walker.position(), e);
        walker.advance();
        step += 1;
    }
    Ok(ExcursionRun {
        records: sc.finish(),
        steps: step,
    })
}

/// `J(ϑ) = #{ k : R_k <= ϑ }`.
pub fn macroscopic_jumps(records: &[ExcursionRecord], theta: u64) -> usize {
    records.iter().filter(|r| r.r <= theta).count()
}
