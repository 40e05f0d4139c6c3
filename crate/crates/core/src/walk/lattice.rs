//! Standalone walk experiments: local times in a ball of `ℤ^2` before exiting
//! `B_{r_N}`, and which of several torus balls is hit first.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{torus_distance, BallOffsets, GridPoint, Torus};
use crate::rng::{self, DirectionSource};
use crate::scales::separation_scale;
use crate::traps::nearest_center_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeSamples {
    pub n: usize,
    pub r: f64,
    pub r_n: f64,
    pub log_n: f64,
    pub offsets: Vec<GridPoint>,
    /// Visit counts `L_N(y)` per replica, indexed like `offsets`.
    pub counts: Vec<Vec<u32>>,
    /// `L_N(y) / log N` per replica.
    pub local_times: Vec<Vec<f64>>,
}

impl LocalTimeSamples {
    pub fn offset_index(&self, y: GridPoint) -> Option<usize> {
        self.offsets.iter().position(|&o| o == y)
    }

    /// `max_y |L(y)/L(0) - 1|` per replica (`NaN` if `L(0) = 0`).
    pub fn max_relative_spread(&self) -> Vec<f64> {
        let c = self.offset_index(GridPoint::ORIGIN).expect("origin is in every ball");
        self.local_times
            .iter()
            .map(|v| {
                let l0 = v[c];
                if l0 == 0.0 {
                    return f64::NAN;
                }
                v.iter().map(|&l| (l / l0 - 1.0).abs()).fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Simple random walk on `ℤ^2` from `start` until it leaves the open ball
/// `B_{r_N}`; visits to each `y ∈ B_r` are turned into unit-mean exponential
/// local times.
pub fn local_time_experiment(
    n: usize,
    r: f64,
    start: GridPoint,
    replicas: usize,
    seed: u64,
) -> Result<LocalTimeSamples> {
    let r_n = separation_scale(n)?;
    let ball = BallOffsets::new(r)?;
    if r_n < r + 2.0 {
        return Err(invalid(format!("need r_N = {r_n:.3} >= r + 2 = {}", r + 2.0)));
    }
    if ball.index_of(start).is_none() {
        return Err(invalid(format!("start {start} is not in B_{r}")));
    }
    if replicas == 0 {
        return Err(invalid("replicas must be positive"));
    }
    let reach = r_n.ceil() as i32 + 1;
    let w = (2 * reach + 1) as usize;
    let at = |p: GridPoint| (p.y + reach) as usize * w + (p.x + reach) as usize;
    let mut inside = vec![false; w * w];
    let mut slot = vec![u32::MAX; w * w];
    for y in -reach..=reach {
        for x in -reach..=reach {
            let p = GridPoint::new(x, y);
            inside[at(p)] = (p.norm_sq() as f64) < r_n * r_n;
        }
    }
    for (i, &o) in ball.offsets().iter().enumerate() {
        slot[at(o)] = i as u32;
    }
    let b = ball.len();
    let (counts, local_times): (Vec<Vec<u32>>, Vec<Vec<f64>>) = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut dirs = DirectionSource::new(rng::stream(seed, rng::tag::REPLICA, i as u64));
            let mut exps = rng::stream(seed, rng::tag::REPLICA, (i as u64) | (1 << 63));
            let mut cnt = vec![0u32; b];
            let mut lt = vec![0.0f64; b];
            let mut pos = at(start) as isize;
            let step = [1isize, -1, w as isize, -(w as isize)];
            while inside[pos as usize] {
                let s = slot[pos as usize];
                if s != u32::MAX {
                    cnt[s as usize] += 1;
                    lt[s as usize] += exps.sample::<f64, _>(Exp1);
                }
                pos += step[dirs.next_dir() as usize];
            }
            let log_n = (n as f64).ln();
            (cnt, lt.into_iter().map(|v| v / log_n).collect())
        })
        .unzip();
    Ok(LocalTimeSamples {
        n,
        r,
        r_n,
        log_n: (n as f64).ln(),
        offsets: ball.offsets().to_vec(),
        counts,
        local_times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingResult {
    pub counts: Vec<u64>,
    pub mean_steps: f64,
}

/// Torus walk from `start` until it first enters some `B_r(center)`; tally
/// which ball was entered.
pub fn hitting_experiment(
    n: usize,
    r: f64,
    centers: &[GridPoint],
    start: GridPoint,
    replicas: usize,
    seed: u64,
) -> Result<HittingResult> {
    if centers.is_empty() {
        return Err(invalid("need at least one center"));
    }
    if replicas == 0 {
        return Err(invalid("replicas must be positive"));
    }
    let r_n = separation_scale(n)?;
    let half = r_n / 2.0;
    for (i, &a) in centers.iter().enumerate() {
        for (j, &b) in centers.iter().enumerate().take(i) {
            let d = torus_distance(a, b, n)?;
            if d <= half {
                return Err(invalid(format!(
                    "centers {} {a} and {} {b} are {d:.3} apart, need > r_N/2 = {half:.3}",
                    j + 1,
                    i + 1
                )));
            }
        }
        let d = torus_distance(start, a, n)?;
        if d <= half {
            return Err(invalid(format!(
                "start {start} is {d:.3} from center {} {a}, need > r_N/2 = {half:.3}",
                i + 1
            )));
        }
    }
    let torus = Torus::new(n)?;
    let owner = nearest_center_map(n, centers, r)?;
    let s0 = torus.index(start);
    let hits: Vec<(usize, u64)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut dirs = DirectionSource::new(rng::stream(seed, rng::tag::REPLICA, i as u64));
            let mut pos = s0;
            let mut steps = 0u64;
            loop {
                if let Some(k) = owner[pos] {
                    return (k as usize, steps);
                }
                pos = torus.step(pos, dirs.next_dir());
                steps += 1;
            }
        })
        .collect();
    let mut counts = vec![0u64; centers.len()];
    let mut total = 0.0;
    for &(k, s) in &hits {
        counts[k] += 1;
        total += s as f64;
    }
    Ok(HittingResult {
        counts,
        mean_steps: total / replicas as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_ball_origin;
    use crate::stats::Estimate;

    #[test]
    fn local_time_mean_matches_green() {
        let n = 64;
        let s = local_time_experiment(n, 2.0, GridPoint::ORIGIN, 4000, 3).unwrap();
        let c = s.offset_index(GridPoint::ORIGIN).unwrap();
        let g = green_ball_origin(s.r_n).unwrap();
        let l0: Vec<f64> = s.local_times.iter().map(|v| v[c] * s.log_n).collect();
        assert!(Estimate::from_samples(&l0).within(g, 3.0));
        let v0: Vec<f64> = s.counts.iter().map(|v| v[c] as f64).collect();
        assert!(Estimate::from_samples(&v0).within(g, 3.0));
        assert!(s.counts.iter().all(|v| v[c] >= 1));
    }

    #[test]
    fn local_time_preconditions() {
        assert!(local_time_experiment(16, 5.0, GridPoint::ORIGIN, 10, 0).is_err());
        assert!(local_time_experiment(64, 2.0, GridPoint::new(3, 0), 10, 0).is_err());
        assert!(local_time_experiment(64, 2.0, GridPoint::ORIGIN, 0, 0).is_err());
    }

    #[test]
    fn hitting_single_and_preconditions() {
        let h = hitting_experiment(64, 2.0, &[GridPoint::new(32, 32)], GridPoint::ORIGIN, 50, 1).unwrap();
        assert_eq!(h.counts, vec![50]);
        assert!(hitting_experiment(64, 2.0, &[GridPoint::new(32, 32), GridPoint::new(34, 32)], GridPoint::ORIGIN, 5, 1).is_err());
        assert!(hitting_experiment(64, 2.0, &[GridPoint::new(2, 2)], GridPoint::ORIGIN, 5, 1).is_err());
    }
}
