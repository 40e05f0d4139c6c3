use rayon::prelude::*;
use serde::Serialize;

use super::{default_beta, need, need_nonempty, need_positive, sub_seed, ExperimentConfig, TestReport};
use crate::dgff::{sample_field, FieldSample};
use crate::error::{Error, Result};
use crate::grid::GridPoint;
use crate::kprocess::simulate_pre_k;
use crate::path::{l_metric, rescale_walk_path, PathSample, SpatialState};
use crate::scales::{self, ScaleConstants, ALPHA};
use crate::stats::{is_nonincreasing, median, quantile, total_variation};
use crate::traps::{ball_union_mask, deep_traps, nearest_center_map, TrapLandscape};
use crate::walk::{run_walk_with, trace_process, trace_with_mask, walk_occupation, WalkOptions, WalkRun, DEFAULT_STEP_CAP};

#[derive(Serialize)]
struct StepParams {
    n: Vec<usize>,
    beta: f64,
    horizon: f64,
    replicas: usize,
    quantile: f64,
    step_cap: u64,
}

pub fn step_budget(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = StepParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![64, 128]),
        beta: cfg.beta.unwrap_or_else(default_beta),
        horizon: cfg.horizon.unwrap_or(1.0),
        replicas: cfg.replicas.unwrap_or(100),
        quantile: 0.95,
        step_cap: cfg.step_cap.unwrap_or(DEFAULT_STEP_CAP),
    };
    need_nonempty("n", &p.n)?;
    need(p.n.iter().all(|&n| n >= 3), "N must be at least 3")?;
    need(p.beta > ALPHA, "β must exceed α")?;
    need_positive("horizon", p.horizon)?;
    need(p.replicas >= 2, "need at least 2 runs")?;
    let opts = WalkOptions {
        step_cap: p.step_cap,
        ..WalkOptions::default()
    };

    let mut n0s = Vec::new();
    let mut q95s = Vec::new();
    for (k, &n) in p.n.iter().enumerate() {
        let sc = ScaleConstants::new(n, p.beta)?;
        let steps: Vec<f64> = (0..p.replicas as u64)
            .into_par_iter()
            .map(|i| {
                let f = sample_field(n, sub_seed(cfg.seed, 2 * k as u64, i))?;
                let run = run_walk_with(&f, p.beta, sc.s_n * p.horizon, sub_seed(cfg.seed, 2 * k as u64 + 1, i), &opts)?;
                Ok(run.clock.len() as f64)
            })
            .collect::<Result<_>>()?;
        let q = quantile(&steps, p.quantile);
        let unit = scales::step_budget(n, 1) as f64;
        n0s.push((q / unit).ceil().max(1.0));
        q95s.push(q);
    }
    let mut rep = TestReport::new("step_budget", &p, cfg.seed, p.replicas);
    rep.check(
        "n0_trend",
        n0s.last().copied().unwrap_or(f64::NAN),
        "n0 nonincreasing in N",
        is_nonincreasing(&n0s, 0.0),
    );
    rep.note("n0", &n0s);
    rep.note("steps_q95", &q95s);
    Ok(rep)
}

#[derive(Serialize)]
struct TraceParams {
    n: usize,
    r: f64,
    beta: f64,
    horizon: f64,
    m: Vec<usize>,
    replicas: usize,
    step_cap: u64,
}

/// Longest walk, relative to the target trace length, run to lengthen a
/// short trace.
const MAX_EXTENSION: f64 = 16.0;

/// Run the walk until its trace through `mask` lasts `target`, extending the
/// horizon up to `MAX_EXTENSION * target` or the step cap. The walk stream
/// depends only on the seed, so longer runs extend shorter ones.
fn walk_for_trace(
    field: &FieldSample,
    beta: f64,
    mask: &[bool],
    target: f64,
    seed: u64,
    step_cap: u64,
) -> Result<WalkRun> {
    let opts = WalkOptions {
        step_cap,
        ..WalkOptions::default()
    };
    let mut run = run_walk_with(field, beta, target, seed, &opts)?;
    let mut horizon = target;
    loop {
        let got = trace_with_mask(&run, mask)?.horizon();
        if got >= target || horizon >= MAX_EXTENSION * target {
            return Ok(run);
        }
        let grow = if got > 0.0 { (1.25 * target / got).clamp(1.5, 4.0) } else { 4.0 };
        horizon = (horizon * grow).min(MAX_EXTENSION * target);
        match run_walk_with(field, beta, horizon, seed, &opts) {
            Ok(longer) => run = longer,
            Err(Error::BudgetExceeded { .. }) => return Ok(run),
            Err(e) => return Err(e),
        }
    }
}

/// Trace rescaled to `[0, horizon]`; where the trace ends early it sits at
/// the cemetery point `∞`.
fn rescaled_trace(trace: &PathSample<GridPoint>, s_n: f64, n: usize, horizon: f64) -> Result<PathSample<SpatialState>> {
    let mut out = PathSample::new(horizon)?;
    let n = n as f64;
    for &(t, p) in trace.jumps() {
        let t = t / s_n;
        if t >= horizon {
            break;
        }
        out.push(t, SpatialState::Point([p.x as f64 / n, p.y as f64 / n]));
    }
    let end = trace.horizon() / s_n;
    if end < horizon {
        out.push(end, SpatialState::Infinity);
    }
    Ok(out)
}

pub fn walk_vs_trace(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = TraceParams {
        n: cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(128),
        r: cfg.r.unwrap_or(3.0),
        beta: cfg.beta.unwrap_or_else(default_beta),
        horizon: cfg.horizon.unwrap_or(1.0),
        m: cfg.m.clone().unwrap_or_else(|| vec![1, 5, 20, 50]),
        replicas: cfg.replicas.unwrap_or(30),
        step_cap: cfg.step_cap.unwrap_or(DEFAULT_STEP_CAP),
    };
    need(p.n >= 3, "N must be at least 3")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.beta > ALPHA, "β must exceed α")?;
    need_positive("horizon", p.horizon)?;
    need_nonempty("m", &p.m)?;
    need(p.m.iter().all(|&m| m >= 1), "M = 0 leaves the trace undefined")?;
    need(p.m.windows(2).all(|w| w[0] < w[1]), "M values must increase")?;
    need(p.replicas >= 1, "need at least one run")?;
    let sc = ScaleConstants::new(p.n, p.beta)?;
    let target = sc.s_n * p.horizon;
    let m_max = *p.m.last().unwrap();

    // per run and M: (L-distance, fraction of [0, horizon] covered by the trace)
    let table: Vec<Vec<(f64, f64)>> = (0..p.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let f = sample_field(p.n, sub_seed(cfg.seed, 0, i))?;
            let full = deep_traps(&f, p.r, m_max, p.beta)?;
            let smallest = full.top(p.m[0])?;
            let mask = ball_union_mask(p.n, &smallest.positions(), p.r)?;
            let run = walk_for_trace(&f, p.beta, &mask, target, sub_seed(cfg.seed, 1, i), p.step_cap)?;
            let walk = rescale_walk_path(&run.path, sc.s_n, p.n, p.horizon)?;
            p.m.iter()
                .map(|&m| {
                    let trace = trace_process(&run, &full.top(m)?)?;
                    let covered = (trace.horizon() / target).min(1.0);
                    let trace = rescaled_trace(&trace, sc.s_n, p.n, p.horizon)?;
                    Ok((l_metric(&walk, &trace, p.horizon)?.value, covered))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let column = |j: usize, pick: fn(&(f64, f64)) -> f64| -> Vec<f64> { table.iter().map(|row| pick(&row[j])).collect() };
    let medians: Vec<f64> = (0..p.m.len()).map(|j| median(&column(j, |c| c.0))).collect();
    let coverage: Vec<f64> = (0..p.m.len())
        .map(|j| column(j, |c| c.1).iter().sum::<f64>() / p.replicas as f64)
        .collect();

    // with r >= N every vertex lies in the single trap ball
    let f = sample_field(p.n, sub_seed(cfg.seed, 2, 0))?;
    let cover = deep_traps(&f, p.n as f64, 1, p.beta)?;
    let run = run_walk_with(
        &f,
        p.beta,
        target,
        sub_seed(cfg.seed, 3, 0),
        &WalkOptions {
            step_cap: p.step_cap,
            ..WalkOptions::default()
        },
    )?;
    let trace = trace_process(&run, &cover)?;
    let walk = rescale_walk_path(&run.path, sc.s_n, p.n, p.horizon)?;
    let zero = l_metric(&walk, &rescaled_trace(&trace, sc.s_n, p.n, p.horizon)?, p.horizon)?.value;

    let mut rep = TestReport::new("walk_vs_trace", &p, cfg.seed, p.replicas);
    rep.check(
        "median_trend",
        medians.last().copied().unwrap_or(f64::NAN),
        "median nonincreasing in M",
        is_nonincreasing(&medians, 0.0),
    );
    rep.check("covering_ball_zero", zero, "= 0", zero == 0.0);
    rep.note("medians", &medians);
    rep.note("mean_trace_coverage", &coverage);
    Ok(rep)
}

#[derive(Serialize)]
struct MainParams {
    n: Vec<usize>,
    r: f64,
    m: usize,
    beta: f64,
    horizon: f64,
    fields: usize,
    replicas: usize,
    prek_replicas: usize,
    step_cap: u64,
}

/// Pre-K runs are cheap, so each field gets this many per walk run.
const PREK_OVERSAMPLE: usize = 16;

/// The occupation walk stores nothing per step, so a long run costs time only.
const MAIN_STEP_CAP: u64 = 1_000_000_000;

struct FieldComparison {
    tv: f64,
    walk_distinct: f64,
    prek_distinct: f64,
    walk_outside: f64,
}

/// Per-trap sojourn fractions of the rescaled walk (last entry: time
/// outside every trap ball) and of the pre-K process on the same atoms,
/// averaged over `replicas` and `prek_replicas` independent runs.
fn compare_field(
    landscape: &TrapLandscape,
    field: &FieldSample,
    p: &MainParams,
    sc: &ScaleConstants,
    walk_seed: impl Fn(u64) -> u64,
    prek_seed: impl Fn(u64) -> u64,
) -> Result<FieldComparison> {
    let m = landscape.traps.len();
    let class: Vec<u32> = nearest_center_map(field.n, &landscape.positions(), p.r)?
        .into_iter()
        .map(|c| c.unwrap_or(m as u32))
        .collect();
    let opts = WalkOptions {
        step_cap: p.step_cap,
        ..WalkOptions::default()
    };
    let target = sc.s_n * p.horizon;
    let reps = p.replicas as f64;
    let mut walk = vec![0.0; m + 1];
    let mut prek = vec![0.0; m + 1];
    let mut walk_distinct = 0.0;
    let mut prek_distinct = 0.0;
    for j in 0..p.replicas as u64 {
        let (occ, _) = walk_occupation(field, p.beta, target, walk_seed(j), &opts, &class, m + 1)?;
        walk_distinct += occ[..m].iter().filter(|&&t| t > 0.0).count() as f64 / reps;
        for (w, t) in walk.iter_mut().zip(&occ) {
            *w += t / target / reps;
        }
    }
    let reps = p.prek_replicas as f64;
    for j in 0..p.prek_replicas as u64 {
        let k = simulate_pre_k(&landscape.rescaled_atoms, m, p.horizon, prek_seed(j))?;
        let occ = k.occupation();
        prek_distinct += occ.iter().filter(|&&t| t > 0.0).count() as f64 / reps;
        for (q, t) in prek.iter_mut().zip(&occ) {
            *q += t / p.horizon / reps;
        }
    }
    Ok(FieldComparison {
        tv: total_variation(&walk, &prek),
        walk_distinct,
        prek_distinct,
        walk_outside: walk[m],
    })
}

pub fn main_theorem(cfg: &ExperimentConfig) -> Result<TestReport> {
    let replicas = cfg.replicas.unwrap_or(64);
    let p = MainParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![64, 128, 256]),
        r: cfg.r.unwrap_or(3.0),
        m: cfg.m.as_ref().and_then(|v| v.first().copied()).unwrap_or(10),
        beta: cfg.beta.unwrap_or_else(default_beta),
        horizon: cfg.horizon.unwrap_or(1.0),
        fields: cfg.fields.unwrap_or(30),
        replicas,
        prek_replicas: PREK_OVERSAMPLE * replicas,
        step_cap: cfg.step_cap.unwrap_or(MAIN_STEP_CAP),
    };
    need(p.n.len() >= 2, "need an N ladder")?;
    need(p.n.windows(2).all(|w| w[0] < w[1]), "N ladder must increase")?;
    need(p.n[0] >= 3, "N must be at least 3")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.m >= 1, "M must be positive")?;
    need(p.beta > ALPHA, "β must exceed α")?;
    need_positive("horizon", p.horizon)?;
    need(p.fields >= 1 && p.replicas >= 1, "need at least one field and one replica")?;

    let mut medians = Vec::new();
    let mut completed = Vec::new();
    let mut walk_outside = Vec::new();
    let mut distinct = Vec::new();
    let mut partial = None;
    for (k, &n) in p.n.iter().enumerate() {
        let sc = ScaleConstants::new(n, p.beta)?;
        let k = k as u64;
        let (reps, prek_reps) = (p.replicas as u64, p.prek_replicas as u64);
        let rows: Result<Vec<FieldComparison>> = (0..p.fields as u64)
            .into_par_iter()
            .map(|i| {
                let f = sample_field(n, sub_seed(cfg.seed, 3 * k, i))?;
                let l = deep_traps(&f, p.r, p.m, p.beta)?;
                compare_field(
                    &l,
                    &f,
                    &p,
                    &sc,
                    |j| sub_seed(cfg.seed, 3 * k + 1, i * reps + j),
                    |j| sub_seed(cfg.seed, 3 * k + 2, i * prek_reps + j),
                )
            })
            .collect();
        let rows = match rows {
            Ok(r) => r,
            Err(Error::BudgetExceeded { cap, completed: c }) => {
                partial = Some(format!("N = {n}: step cap {cap} reached after {c} steps"));
                break;
            }
            Err(e) => return Err(e),
        };
        medians.push(median(&rows.iter().map(|r| r.tv).collect::<Vec<_>>()));
        walk_outside.push(median(&rows.iter().map(|r| r.walk_outside).collect::<Vec<_>>()));
        distinct.push([
            rows.iter().map(|r| r.walk_distinct).sum::<f64>() / rows.len() as f64,
            rows.iter().map(|r| r.prek_distinct).sum::<f64>() / rows.len() as f64,
        ]);
        completed.push(n);
    }

    let mut rep = TestReport::new("main_theorem", &p, cfg.seed, p.fields);
    rep.check(
        "median_tv_trend",
        medians.last().copied().unwrap_or(f64::NAN),
        "median TV nonincreasing in N",
        medians.len() == p.n.len() && is_nonincreasing(&medians, 0.0),
    );
    rep.note("completed_n", &completed);
    rep.note("median_tv", &medians);
    rep.note("median_walk_outside_fraction", &walk_outside);
    rep.note("mean_distinct_traps_walk_prek", &distinct);
    if let Some(reason) = partial {
        rep.fail(&reason);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_vs_trace_guards_and_small_run() {
        let mut c = ExperimentConfig::named("walk_vs_trace", 5);
        c.m = Some(vec![0, 2]);
        assert!(walk_vs_trace(&c).is_err());
        c.n = Some(vec![16]);
        c.m = Some(vec![1, 3]);
        c.replicas = Some(3);
        let r = walk_vs_trace(&c).unwrap();
        assert_eq!(r.checks[1].statistic, 0.0);
        assert!(r.checks[1].passed);
    }

    #[test]
    fn main_theorem_small_ladder() {
        let mut c = ExperimentConfig::named("main_theorem", 6);
        c.n = Some(vec![16, 24]);
        c.m = Some(vec![3]);
        c.fields = Some(3);
        c.replicas = Some(2);
        let r = main_theorem(&c).unwrap();
        assert_eq!(r.diagnostics["completed_n"], serde_json::json!([16, 24]));
        assert_eq!(main_theorem(&c).unwrap(), r);
        c.step_cap = Some(10);
        let r = main_theorem(&c).unwrap();
        assert!(!r.passed);
        assert!(r.diagnostics.contains_key("failure"));
    }

    #[test]
    fn step_budget_small() {
        let mut c = ExperimentConfig::named("step_budget", 7);
        c.n = Some(vec![16, 24]);
        c.replicas = Some(10);
        let r = step_budget(&c).unwrap();
        assert_eq!(r.checks.len(), 1);
    }
}
