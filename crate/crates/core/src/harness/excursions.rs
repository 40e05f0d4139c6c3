use rayon::prelude::*;
use serde::Serialize;

use super::{default_beta, need, need_level, sub_seed, ExperimentConfig, TestReport};
use crate::dgff::sample_field;
use crate::error::{Error, Result};
use crate::green::green_ball_origin;
use crate::grid::GridPoint;
use crate::parallel;
use crate::scales::{separation_scale, G};
use crate::stats::{bonferroni, chi_square_uniform, ks_test, median, permutation_independence, Estimate};
use crate::traps::{deep_traps, TrapLandscape};
use crate::walk::{run_excursions, ExcursionGeometry, ExcursionRecord, DEFAULT_STEP_CAP};

#[derive(Serialize)]
struct JointParams {
    n: usize,
    r: f64,
    m: usize,
    beta: f64,
    fields: usize,
    per_field: usize,
    retry_budget: usize,
    permutations: usize,
    alpha: f64,
    step_cap: u64,
}

/// First `wanted` separated landscapes, scanning field seeds in index order.
/// Returns the landscapes and the number of fields drawn up to the last
/// accepted one.
fn separated_landscapes(
    seed: u64,
    n: usize,
    r: f64,
    m: usize,
    beta: f64,
    wanted: usize,
    budget: usize,
) -> Result<(Vec<TrapLandscape>, usize)> {
    let batch = (2 * parallel::threads()).max(4);
    let mut accepted = Vec::new();
    let mut drawn = 0usize;
    let mut next = 0usize;
    while accepted.len() < wanted && next < budget {
        let hi = (next + batch).min(budget);
        let got: Vec<Option<TrapLandscape>> = (next..hi)
            .into_par_iter()
            .map(|i| {
                let f = sample_field(n, sub_seed(seed, 0, i as u64))?;
                let l = deep_traps(&f, r, m, beta)?;
                Ok((l.separated && !l.shortfall).then_some(l))
            })
            .collect::<Result<_>>()?;
        for (i, l) in (next..hi).zip(got) {
            if let Some(l) = l {
                if accepted.len() < wanted {
                    accepted.push(l);
                    drawn = i + 1;
                }
            }
        }
        next = hi;
    }
    if accepted.len() < wanted {
        return Err(Error::Config(format!(
            "only {} of {wanted} separated landscapes within a retry budget of {budget} fields",
            accepted.len()
        )));
    }
    Ok((accepted, drawn))
}

pub fn joint_independence(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = JointParams {
        n: cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(1024),
        r: cfg.r.unwrap_or(3.0),
        m: cfg.m.as_ref().and_then(|v| v.first().copied()).unwrap_or(4),
        beta: cfg.beta.unwrap_or_else(default_beta),
        fields: cfg.fields.unwrap_or(24),
        per_field: cfg.per_field.unwrap_or(50),
        retry_budget: cfg.retry_budget.unwrap_or(5000),
        permutations: cfg.permutations.unwrap_or(10_000),
        alpha: cfg.tolerances.alpha.unwrap_or(0.01),
        step_cap: cfg.step_cap.unwrap_or(DEFAULT_STEP_CAP),
    };
    need(p.n >= 8, "N must be at least 8")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.m >= 1, "M must be positive")?;
    need(p.beta >= 0.0 && p.beta.is_finite(), "β must be finite and >= 0")?;
    need(p.fields >= 1 && p.per_field >= 1, "need at least one field and one excursion per field")?;
    need(p.fields * p.per_field >= 8, "need at least 8 excursions")?;
    need(p.retry_budget >= p.fields, "retry budget must cover the requested fields")?;
    need(p.permutations >= 1, "need at least one permutation")?;
    need_level(p.alpha)?;
    need(separation_scale(p.n)? >= p.r + 2.0, "r_N must exceed r + 2")?;

    let (landscapes, drawn) = separated_landscapes(cfg.seed, p.n, p.r, p.m, p.beta, p.fields, p.retry_budget)?;
    let runs: Vec<(Vec<ExcursionRecord>, u64, Vec<GridPoint>)> = landscapes
        .par_iter()
        .enumerate()
        .map(|(k, l)| {
            let geom = ExcursionGeometry::new(l)?;
            let run = run_excursions(&geom, GridPoint::ORIGIN, sub_seed(cfg.seed, 1, k as u64), p.per_field, p.step_cap)?;
            Ok((run.records, run.steps, geom.offsets().to_vec()))
        })
        .collect::<Result<_>>()?;

    let offsets = &runs[0].2;
    let centre = offsets.iter().position(|&o| o == GridPoint::ORIGIN).expect("origin in ball");
    let log_n = (p.n as f64).ln();
    let mut ordinals = Vec::new();
    let mut centre_lt = Vec::new();
    let mut spreads = Vec::new();
    let mut short_fields = 0;
    for (records, _, _) in &runs {
        let complete: Vec<&ExcursionRecord> = records.iter().filter(|r| r.complete).take(p.per_field).collect();
        if complete.len() < p.per_field {
            short_fields += 1;
        }
        for r in complete {
            ordinals.push(r.ordinal - 1);
            let l0 = r.local_times[centre] / log_n;
            centre_lt.push(l0);
            if l0 > 0.0 {
                let s = r.local_times.iter().map(|&l| (l / log_n / l0 - 1.0).abs()).fold(0.0, f64::max);
                spreads.push(s);
            }
        }
    }
    let total = ordinals.len();
    need(total >= 8, format!("only {total} complete excursions"))?;

    let level = bonferroni(p.alpha, 3);
    let mut counts = vec![0u64; p.m];
    for &o in &ordinals {
        counts[o] += 1;
    }
    let mut rep = TestReport::new("joint_independence", &p, cfg.seed, total);
    let chi = chi_square_uniform(&counts)?;
    rep.p_check("ordinal_uniform", chi.statistic, chi.p_value, level);
    let ks = ks_test(&centre_lt, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x / G).exp() })?;
    rep.p_check("centre_local_time_exponential", ks.statistic, ks.p_value, level);
    let perm = permutation_independence(&centre_lt, &ordinals, p.permutations, sub_seed(cfg.seed, 2, 0))?;
    rep.p_check("local_time_ordinal_independence", perm.statistic, perm.p_value, level);

    // finite-N diagnostics
    let r_n = separation_scale(p.n)?;
    let g_ball = green_ball_origin(r_n)?;
    let positive: Vec<f64> = centre_lt.iter().copied().filter(|&l| l > 0.0).collect();
    rep.note("fields_drawn", drawn);
    rep.note("rejection_rate", 1.0 - p.fields as f64 / drawn as f64);
    rep.note("excursions", total);
    rep.note("fields_short_of_target", short_fields);
    rep.note("ordinal_counts", &counts);
    rep.note("centre_local_time_mean", Estimate::from_samples(&centre_lt));
    rep.note("centre_zero_fraction", 1.0 - positive.len() as f64 / total as f64);
    rep.note("finite_n_exponential_mean", g_ball / log_n);
    if positive.len() >= 8 {
        let mean = g_ball / log_n;
        let cond = ks_test(&positive, |x| 1.0 - (-x / mean).exp())?;
        rep.note("positive_centre_local_time_ks_p", cond.p_value);
    }
    rep.note("median_max_relative_spread", median(&spreads));
    rep.note("walk_steps", runs.iter().map(|r| r.1).sum::<u64>());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_configuration_runs() {
        let mut c = ExperimentConfig::named("joint_independence", 4);
        c.n = Some(vec![128]);
        c.m = Some(vec![2]);
        c.fields = Some(2);
        c.per_field = Some(10);
        c.permutations = Some(200);
        c.retry_budget = Some(400);
        let r = joint_independence(&c).unwrap();
        assert_eq!(r.replicas, 20);
        assert_eq!(r.checks.len(), 3);
        assert_eq!(joint_independence(&c).unwrap(), r);
    }

    #[test]
    fn retry_budget_exhaustion_is_a_config_error() {
        let mut c = ExperimentConfig::named("joint_independence", 4);
        c.n = Some(vec![128]);
        c.m = Some(vec![6]);
        c.fields = Some(3);
        c.retry_budget = Some(3);
        assert!(matches!(joint_independence(&c), Err(Error::Config(_))));
    }
}
