use rayon::prelude::*;
use serde::Serialize;

use super::{default_beta, need, need_level, need_nonempty, need_positive, sub_seed, ExperimentConfig, TestReport};
use crate::dgff::sample_field;
use crate::error::Result;
use crate::green::{green_ball_origin, green_box, green_box_center, MAX_DENSE_VERTICES, MAX_FACTOR_SIDE};
use crate::grid::GridPoint;
use crate::kprocess::{chi_tail_mean, sample_chi, simulate_clock_at, truncation_bad_set, AtomList, ZSpec};
use crate::scales::{ALPHA, G};
use crate::stats::{
    self, bonferroni, chi_square_gof, chi_square_uniform, is_nonincreasing, ks_test, ks_two_sample, median, normal_cdf,
    Estimate,
};
use crate::traps::{deep_traps, mass_outside};
use crate::walk::{hitting_experiment, local_time_experiment};

fn alpha_of(cfg: &ExperimentConfig) -> Result<f64> {
    let a = cfg.tolerances.alpha.unwrap_or(0.01);
    need_level(a)?;
    Ok(a)
}

fn se_of(cfg: &ExperimentConfig, default: f64) -> Result<f64> {
    let k = cfg.tolerances.se_factor.unwrap_or(default);
    need_positive("se_factor", k)?;
    Ok(k)
}

fn geometric_depths(count: usize) -> Result<AtomList> {
    let d: Vec<f64> = (0..count).map(|k| 0.5f64.powi(k as i32)).collect();
    AtomList::from_depths(&d)
}

#[derive(Serialize)]
struct GreenExactParams {
    n: Vec<usize>,
    residual: f64,
    symmetry: f64,
}

pub fn green_exactness(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = GreenExactParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![8, 16, 32, 64]),
        residual: cfg.tolerances.residual.unwrap_or(1e-8),
        symmetry: cfg.tolerances.symmetry.unwrap_or(1e-10),
    };
    need_nonempty("n", &p.n)?;
    for &n in &p.n {
        need(n >= 1 && n * n <= MAX_DENSE_VERTICES, format!("box side {n} outside 1..=64"))?;
    }
    need_positive("residual tolerance", p.residual)?;
    need_positive("symmetry tolerance", p.symmetry)?;

    let rows: Vec<(usize, f64, f64)> = p
        .n
        .par_iter()
        .map(|&n| {
            let t = green_box(n)?;
            Ok((n, t.residual()?, t.symmetry_error()))
        })
        .collect::<Result<_>>()?;
    let mut rep = TestReport::new("green_exactness", &p, cfg.seed, p.n.len());
    for (n, res, sym) in rows {
        rep.check(&format!("residual_n{n}"), res, format!("<= {:e}", p.residual), res <= p.residual);
        rep.check(&format!("symmetry_n{n}"), sym, format!("<= {:e}", p.symmetry), sym <= p.symmetry);
    }
    Ok(rep)
}

#[derive(Serialize)]
struct SlopeParams {
    n: Vec<usize>,
    relative: f64,
}

/// Least-squares slope and intercept of `ys` on `xs`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = stats::mean(xs);
    let my = stats::mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn green_slope(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = SlopeParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![33, 65, 129, 257]),
        relative: cfg.tolerances.relative.unwrap_or(0.05),
    };
    need(p.n.len() >= 2, "need at least two box sides")?;
    for &n in &p.n {
        need((2..=MAX_FACTOR_SIDE).contains(&n), format!("box side {n} outside 2..={MAX_FACTOR_SIDE}"))?;
    }
    need_positive("relative tolerance", p.relative)?;

    let values: Vec<f64> = p.n.par_iter().map(|&n| green_box_center(n)).collect::<Result<_>>()?;
    let logs: Vec<f64> = p.n.iter().map(|&n| (n as f64).ln()).collect();
    let (slope, intercept) = linear_fit(&logs, &values);
    let err = (slope / G - 1.0).abs();
    let mut rep = TestReport::new("green_slope", &p, cfg.seed, p.n.len());
    rep.check("slope", slope, format!("within {} of 2/pi", p.relative), err <= p.relative);
    rep.note("relative_error", err);
    rep.note("intercept", intercept);
    rep.note("centre_values", &values);
    Ok(rep)
}

#[derive(Serialize)]
struct CovarianceParams {
    n: usize,
    replicas: usize,
    se_factor: f64,
    alpha: f64,
    probes: Vec<[i32; 2]>,
}

/// Four evenly spread coordinates per axis.
fn probe_grid(n: usize) -> Vec<[i32; 2]> {
    let c: Vec<i32> = (0..4).map(|k| (((2 * k + 1) * n) / 8) as i32).collect();
    c.iter().flat_map(|&y| c.iter().map(move |&x| [x, y])).collect()
}

pub fn dgff_covariance(cfg: &ExperimentConfig) -> Result<TestReport> {
    let n = cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(16);
    let p = CovarianceParams {
        n,
        replicas: cfg.replicas.unwrap_or(20_000),
        se_factor: se_of(cfg, 5.0)?,
        alpha: alpha_of(cfg)?,
        probes: probe_grid(n),
    };
    need((4..=64).contains(&n), format!("box side {n} outside 4..=64"))?;
    need(p.replicas >= 16, "need at least 16 samples")?;

    let table = green_box(n)?;
    let v = n * n;
    let samples: Vec<Vec<f64>> = (0..p.replicas as u64)
        .into_par_iter()
        .map(|i| sample_field(n, sub_seed(cfg.seed, 0, i)).map(|f| f.values))
        .collect::<Result<_>>()?;

    // field mean is exactly 0, so E[h_i h_j] = G(i, j)
    let reps = p.replicas as f64;
    let worst: Vec<(f64, f64)> = (0..v)
        .into_par_iter()
        .map(|i| {
            let mut s1 = vec![0.0; i + 1];
            let mut s2 = vec![0.0; i + 1];
            for f in &samples {
                let a = f[i];
                for j in 0..=i {
                    let prod = a * f[j];
                    s1[j] += prod;
                    s2[j] += prod * prod;
                }
            }
            let mut z_max = 0.0f64;
            let mut dev_max = 0.0f64;
            for j in 0..=i {
                let m = s1[j] / reps;
                let var = (s2[j] / reps - m * m) * reps / (reps - 1.0);
                let se = (var / reps).sqrt();
                let dev = (m - table.get(i, j)).abs();
                dev_max = dev_max.max(dev);
                z_max = z_max.max(dev / se);
            }
            (z_max, dev_max)
        })
        .collect();
    let z_max = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let dev_max = worst.iter().map(|w| w.1).fold(0.0, f64::max);

    let mut rep = TestReport::new("dgff_covariance", &p, cfg.seed, p.replicas);
    rep.check(
        "max_covariance_z",
        z_max,
        format!("<= {} SE", p.se_factor),
        z_max <= p.se_factor,
    );
    rep.note("max_abs_covariance_error", dev_max);

    let level = bonferroni(p.alpha, p.probes.len());
    let mut worst_p = 1.0f64;
    for &[x, y] in &p.probes {
        let i = y as usize * n + x as usize;
        let sd = table.get(i, i).sqrt();
        let xs: Vec<f64> = samples.iter().map(|f| f[i] / sd).collect();
        let out = ks_test(&xs, |t| normal_cdf(t, 0.0, 1.0))?;
        worst_p = worst_p.min(out.p_value);
        rep.p_check(&format!("normal_ks_{x}_{y}"), out.statistic, out.p_value, level);
    }
    rep.note("min_normality_p", worst_p);

    // fields from distinct seeds: paired correlation at the centre vertex
    let c = (n / 2) * n + n / 2;
    let pairs = samples.len() / 2;
    let a: Vec<f64> = (0..pairs).map(|k| samples[2 * k][c]).collect();
    let b: Vec<f64> = (0..pairs).map(|k| samples[2 * k + 1][c]).collect();
    let corr = correlation(&a, &b);
    let se = 1.0 / (pairs as f64).sqrt();
    rep.check("seed_pair_correlation", corr, "within 4 SE of 0", corr.abs() <= 4.0 * se);
    Ok(rep)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = stats::mean(a);
    let mb = stats::mean(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Bin a geometric law on `{1, 2, ...}` with success `p` into cells with
/// expected count at least 5 (the last cell is the tail).
pub(crate) fn geometric_cells(p: f64, total: usize) -> Vec<f64> {
    let t = total as f64;
    let mut probs = Vec::new();
    let mut tail = 1.0;
    let mut k = 1;
    loop {
        let pk = p * (1.0 - p).powi(k - 1);
        if pk * t < 5.0 || (tail - pk) * t < 5.0 {
            break;
        }
        probs.push(pk);
        tail -= pk;
        k += 1;
    }
    probs.push(tail.max(0.0));
    probs
}

#[derive(Serialize)]
struct LocalTimeParams {
    n: usize,
    replicas: usize,
    alpha: f64,
    se_factor: f64,
}

pub fn local_time(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = LocalTimeParams {
        n: cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(512),
        replicas: cfg.replicas.unwrap_or(10_000),
        alpha: alpha_of(cfg)?,
        se_factor: se_of(cfg, 3.0)?,
    };
    need(p.n >= 8, "N must be at least 8")?;
    need(p.replicas >= 100, "need at least 100 replicas")?;

    let s = local_time_experiment(p.n, 1.0, GridPoint::ORIGIN, p.replicas, cfg.seed)?;
    let g = green_ball_origin(s.r_n)?;
    let o = s.offset_index(GridPoint::ORIGIN).expect("origin in ball");
    let visits: Vec<u32> = s.counts.iter().map(|c| c[o]).collect();
    let probs = geometric_cells(1.0 / g, p.replicas);
    let mut counts = vec![0u64; probs.len()];
    for &v in &visits {
        counts[(v.max(1) as usize - 1).min(probs.len() - 1)] += 1;
    }
    let chi = chi_square_gof(&counts, &probs, 0)?;
    let lt: Vec<f64> = s.local_times.iter().map(|l| l[o] * s.log_n).collect();
    let est = Estimate::from_samples(&lt);

    let mut rep = TestReport::new("local_time", &p, cfg.seed, p.replicas);
    rep.p_check("geometric_visits", chi.statistic, chi.p_value, p.alpha);
    rep.check(
        "mean_local_time",
        est.mean,
        format!("within {} SE of G = {g:.6}", p.se_factor),
        est.within(g, p.se_factor),
    );
    rep.note("green_ball_origin", g);
    rep.note("r_n", s.r_n);
    rep.note("local_time_std_error", est.std_error);
    rep.note("cells", probs.len());
    Ok(rep)
}

#[derive(Serialize)]
struct SpreadParams {
    n: Vec<usize>,
    r: f64,
    replicas: usize,
}

pub fn local_time_spread(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = SpreadParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![256, 1024, 4096]),
        r: cfg.r.unwrap_or(3.0),
        replicas: cfg.replicas.unwrap_or(1000),
    };
    need(p.n.len() >= 2, "need an N ladder")?;
    need(p.replicas >= 10, "need at least 10 replicas")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    let mut medians = Vec::new();
    for (i, &n) in p.n.iter().enumerate() {
        let s = local_time_experiment(n, p.r, GridPoint::ORIGIN, p.replicas, sub_seed(cfg.seed, 0, i as u64))?;
        let spread: Vec<f64> = s.max_relative_spread().into_iter().filter(|v| v.is_finite()).collect();
        medians.push(median(&spread));
    }
    let mut rep = TestReport::new("local_time_spread", &p, cfg.seed, p.replicas);
    rep.check(
        "median_spread_trend",
        medians.last().copied().unwrap_or(f64::NAN),
        "median nonincreasing in N",
        is_nonincreasing(&medians, 0.0),
    );
    rep.note("median_spread", &medians);
    Ok(rep)
}

#[derive(Serialize)]
struct HittingParams {
    n: usize,
    r: f64,
    replicas: usize,
    alpha: f64,
    centers: Vec<[i32; 2]>,
    start: [i32; 2],
    symmetric_centers: Vec<[i32; 2]>,
    symmetric_start: [i32; 2],
}

pub fn hitting(cfg: &ExperimentConfig) -> Result<TestReport> {
    let n = cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(1024);
    let q = (n / 4) as i32;
    let h = (n / 2) as i32;
    let scale = |v: i32| (v as i64 * n as i64 / 1024) as i32;
    let p = HittingParams {
        n,
        r: cfg.r.unwrap_or(3.0),
        replicas: cfg.replicas.unwrap_or(2000),
        alpha: alpha_of(cfg)?,
        centers: cfg.centers.clone().unwrap_or_else(|| {
            [[256, 256], [768, 300], [240, 760], [790, 780]]
                .iter()
                .map(|&[x, y]| [scale(x), scale(y)])
                .collect()
        }),
        start: cfg.start.unwrap_or([scale(512), scale(520)]),
        symmetric_centers: vec![[q, q], [3 * q, q], [q, 3 * q], [3 * q, 3 * q]],
        symmetric_start: [h, h],
    };
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.replicas >= 5 * p.centers.len(), "need at least 5 replicas per center")?;
    let pts = |v: &[[i32; 2]]| v.iter().map(|&[x, y]| GridPoint::new(x, y)).collect::<Vec<_>>();

    let level = bonferroni(p.alpha, 2);
    let generic = hitting_experiment(
        n,
        p.r,
        &pts(&p.centers),
        GridPoint::new(p.start[0], p.start[1]),
        p.replicas,
        sub_seed(cfg.seed, 0, 0),
    )?;
    let symmetric = hitting_experiment(
        n,
        p.r,
        &pts(&p.symmetric_centers),
        GridPoint::new(h, h),
        p.replicas,
        sub_seed(cfg.seed, 1, 0),
    )?;
    let mut rep = TestReport::new("hitting", &p, cfg.seed, p.replicas);
    let a = chi_square_uniform(&generic.counts)?;
    rep.p_check("uniform_generic", a.statistic, a.p_value, level);
    let b = chi_square_uniform(&symmetric.counts)?;
    rep.p_check("uniform_symmetric", b.statistic, b.p_value, level);
    rep.note("generic_counts", &generic.counts);
    rep.note("symmetric_counts", &symmetric.counts);
    rep.note("generic_mean_steps", generic.mean_steps);
    Ok(rep)
}

#[derive(Serialize)]
struct ClockParams {
    atoms: usize,
    u: f64,
    m: Vec<usize>,
    replicas: usize,
    se_factor: f64,
}

pub fn clock_identities(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = ClockParams {
        atoms: cfg.atoms.unwrap_or(20),
        u: cfg.horizon.unwrap_or(5.0),
        m: cfg.m.clone().unwrap_or_else(|| vec![1, 2, 5, 10, 20]),
        replicas: cfg.replicas.unwrap_or(10_000),
        se_factor: se_of(cfg, 3.0)?,
    };
    need(p.atoms >= 1 && p.atoms <= 60, "atom count must be in 1..=60")?;
    need_positive("u", p.u)?;
    need(p.replicas >= 2, "need at least 2 replicas")?;
    need(p.m.windows(2).all(|w| w[0] <= w[1]), "truncation levels must be nondecreasing")?;
    let atoms = geometric_depths(p.atoms)?;
    let us = [0.5 * p.u, p.u];

    let runs: Vec<_> = (0..p.replicas as u64)
        .into_par_iter()
        .map(|i| simulate_clock_at(&atoms, &us, &p.m, sub_seed(cfg.seed, 0, i)))
        .collect::<Result<_>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r[1].total).collect();
    let est = Estimate::from_samples(&totals);
    let target = p.u * atoms.total_depth();
    let ordered = runs
        .iter()
        .filter(|r| {
            let c = &r[1];
            let chain: Vec<f64> = c.truncated.iter().map(|&(_, t)| t).chain([c.total]).collect();
            chain.windows(2).all(|w| w[0] <= w[1])
        })
        .count();
    let monotone_u = runs.iter().filter(|r| r[0].total <= r[1].total).count();

    let mut rep = TestReport::new("clock_identities", &p, cfg.seed, p.replicas);
    rep.check(
        "wald_mean",
        est.mean,
        format!("within {} SE of {target:.6}", p.se_factor),
        est.within(target, p.se_factor),
    );
    let frac = ordered as f64 / p.replicas as f64;
    rep.check("truncations_ordered", frac, "= 1", ordered == p.replicas);
    let frac_u = monotone_u as f64 / p.replicas as f64;
    rep.check("monotone_in_u", frac_u, "= 1", monotone_u == p.replicas);
    rep.note("std_error", est.std_error);
    Ok(rep)
}

#[derive(Serialize)]
struct ChiParams {
    beta: f64,
    kappa: f64,
    tau_min: f64,
    mass: f64,
    replicas: usize,
    alpha: f64,
    se_factor: f64,
}

pub fn chi_sampler(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = ChiParams {
        beta: cfg.beta.unwrap_or_else(default_beta),
        kappa: cfg.kappa.unwrap_or(1.0),
        tau_min: cfg.tau_min.unwrap_or(0.01),
        mass: 1.0,
        replicas: cfg.replicas.unwrap_or(10_000),
        alpha: alpha_of(cfg)?,
        se_factor: se_of(cfg, 3.0)?,
    };
    need(p.beta > ALPHA, "β must exceed α")?;
    need_positive("κ", p.kappa)?;
    need_positive("tau_min", p.tau_min)?;
    need(p.replicas >= 10, "need at least 10 replicas")?;
    let z = ZSpec::point_mass([0.5, 0.5], p.mass);

    let draws: Vec<AtomList> = (0..p.replicas as u64)
        .into_par_iter()
        .map(|i| sample_chi(&z, p.beta, p.kappa, p.tau_min, sub_seed(cfg.seed, 0, i)))
        .collect::<Result<_>>()?;
    let counts: Vec<f64> = draws.iter().map(|d| d.len() as f64).collect();
    let est = Estimate::from_samples(&counts);
    let target = chi_tail_mean(p.mass, p.beta, p.kappa, p.tau_min);
    let dispersion = stats::variance(&counts) / est.mean;
    let depths: Vec<f64> = draws.iter().flat_map(|d| d.depths()).collect();
    let a = ALPHA / p.beta;
    let tau_min = p.tau_min;
    let ks = ks_test(&depths, |t| if t <= tau_min { 0.0 } else { 1.0 - (t / tau_min).powf(-a) })?;

    let mut rep = TestReport::new("chi_sampler", &p, cfg.seed, p.replicas);
    rep.check(
        "count_mean",
        est.mean,
        format!("within {} SE of {target:.6}", p.se_factor),
        est.within(target, p.se_factor),
    );
    rep.check("count_dispersion", dispersion, "in [0.9, 1.1]", (0.9..=1.1).contains(&dispersion));
    rep.p_check("depth_pareto_ks", ks.statistic, ks.p_value, p.alpha);
    rep.note("pooled_depths", depths.len());
    Ok(rep)
}

#[derive(Serialize)]
struct TruncationParams {
    atoms: usize,
    m: Vec<usize>,
    horizon: f64,
    replicas: usize,
}

pub fn prek_truncation(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = TruncationParams {
        atoms: cfg.atoms.unwrap_or(20),
        m: cfg.m.clone().unwrap_or_else(|| vec![1, 2, 5, 10]),
        horizon: cfg.horizon.unwrap_or(5.0),
        replicas: cfg.replicas.unwrap_or(50),
    };
    need(p.atoms >= 1 && p.atoms <= 60, "atom count must be in 1..=60")?;
    need_nonempty("m", &p.m)?;
    need(p.m.iter().all(|&m| m >= 1 && m <= p.atoms), "truncation levels must be in 1..=atoms")?;
    need(p.m.windows(2).all(|w| w[0] < w[1]), "truncation levels must increase")?;
    need_positive("horizon", p.horizon)?;
    need(p.replicas >= 1, "need at least one seed")?;
    let atoms = geometric_depths(p.atoms)?;
    let mut levels = p.m.clone();
    levels.push(p.atoms);

    let table: Vec<Vec<f64>> = (0..p.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let s = sub_seed(cfg.seed, 0, i);
            levels.iter().map(|&m| truncation_bad_set(&atoms, m, p.horizon, s)).collect()
        })
        .collect::<Result<_>>()?;
    let medians: Vec<f64> = (0..p.m.len())
        .map(|j| median(&table.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect();
    let full_max = table.iter().map(|row| row[levels.len() - 1]).fold(0.0, f64::max);

    let mut rep = TestReport::new("prek_truncation", &p, cfg.seed, p.replicas);
    rep.check(
        "median_trend",
        medians.last().copied().unwrap_or(f64::NAN),
        "median nonincreasing in M",
        is_nonincreasing(&medians, 0.0),
    );
    rep.check("full_list_zero", full_max, "= 0", full_max == 0.0);
    rep.note("medians", &medians);
    Ok(rep)
}

#[derive(Serialize)]
struct GibbsParams {
    n: usize,
    r: f64,
    beta: f64,
    m: Vec<usize>,
    fields: usize,
}

pub fn gibbs_concentration(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = GibbsParams {
        n: cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(256),
        r: cfg.r.unwrap_or(4.0),
        beta: cfg.beta.unwrap_or_else(default_beta),
        m: cfg.m.clone().unwrap_or_else(|| vec![1, 5, 20, 50]),
        fields: cfg.fields.unwrap_or(50),
    };
    need(p.n >= 3, "N must be at least 3")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.beta >= 0.0 && p.beta.is_finite(), "β must be finite and >= 0")?;
    need_nonempty("m", &p.m)?;
    need(p.m.iter().all(|&m| m >= 1), "M must be positive")?;
    need(p.m.windows(2).all(|w| w[0] < w[1]), "M values must increase")?;
    need(p.fields >= 1, "need at least one field")?;
    let m_max = *p.m.last().unwrap();

    let masses: Vec<Vec<f64>> = (0..p.fields as u64)
        .into_par_iter()
        .map(|i| {
            let f = sample_field(p.n, sub_seed(cfg.seed, 0, i))?;
            let full = deep_traps(&f, p.r, m_max, p.beta)?;
            p.m.iter().map(|&m| mass_outside(&f, &full.top(m)?)).collect()
        })
        .collect::<Result<_>>()?;
    let monotone = masses.iter().filter(|row| is_nonincreasing(row, 0.0)).count();
    let medians: Vec<f64> = (0..p.m.len())
        .map(|j| median(&masses.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect();

    let mut rep = TestReport::new("gibbs_concentration", &p, cfg.seed, p.fields);
    rep.check(
        "per_field_monotone",
        monotone as f64 / p.fields as f64,
        "= 1",
        monotone == p.fields,
    );
    rep.check(
        "median_trend",
        medians.last().copied().unwrap_or(f64::NAN),
        "median nonincreasing in M",
        is_nonincreasing(&medians, 0.0),
    );
    rep.note("medians", &medians);
    Ok(rep)
}

#[derive(Serialize)]
struct TightnessParams {
    n: Vec<usize>,
    r: f64,
    beta: f64,
    fields: usize,
    alpha: f64,
}

pub fn top_depth_tightness(cfg: &ExperimentConfig) -> Result<TestReport> {
    let p = TightnessParams {
        n: cfg.n.clone().unwrap_or_else(|| vec![128, 256]),
        r: cfg.r.unwrap_or(4.0),
        beta: cfg.beta.unwrap_or_else(default_beta),
        fields: cfg.fields.unwrap_or(200),
        alpha: alpha_of(cfg)?,
    };
    need(p.n.len() == 2, "need exactly two box sides")?;
    need(p.n.iter().all(|&n| n >= 3), "N must be at least 3")?;
    need(p.r >= 1.0, "r must be >= 1")?;
    need(p.fields >= 8, "need at least 8 fields per N")?;
    let tops: Vec<Vec<f64>> = p
        .n
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            (0..p.fields as u64)
                .into_par_iter()
                .map(|i| {
                    let f = sample_field(n, sub_seed(cfg.seed, k as u64, i))?;
                    let l = deep_traps(&f, p.r, 1, p.beta)?;
                    Ok(l.rescaled_atoms.atoms()[0].depth.ln())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let ks = ks_two_sample(&tops[0], &tops[1])?;
    let mut rep = TestReport::new("top_depth_tightness", &p, cfg.seed, p.fields);
    rep.p_check("two_sample_ks", ks.statistic, ks.p_value, p.alpha);
    rep.note("median_log_top_depth", tops.iter().map(|t| median(t)).collect::<Vec<_>>());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 2.0).collect();
        let (s, c) = linear_fit(&xs, &ys);
        assert!((s - 0.5).abs() < 1e-14 && (c + 2.0).abs() < 1e-14);
    }

    #[test]
    fn geometric_cells_sum_to_one() {
        let c = geometric_cells(0.25, 10_000);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(c.iter().all(|&q| q * 10_000.0 >= 5.0));
        assert!(c.len() > 10);
    }

    #[test]
    fn probe_grid_is_spread() {
        let g = probe_grid(16);
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], [2, 2]);
        assert_eq!(g[15], [14, 14]);
    }

    #[test]
    fn small_runs() {
        let mut c = ExperimentConfig::named("green_exactness", 1);
        c.n = Some(vec![4, 6]);
        assert!(green_exactness(&c).unwrap().passed);
        c.n = Some(vec![100]);
        assert!(green_exactness(&c).is_err());

        let mut c = ExperimentConfig::named("prek_truncation", 2);
        c.replicas = Some(5);
        let r = prek_truncation(&c).unwrap();
        assert_eq!(r.checks[1].statistic, 0.0);
        c.m = Some(vec![5, 2]);
        assert!(prek_truncation(&c).is_err());

        let mut c = ExperimentConfig::named("gibbs_concentration", 3);
        c.n = Some(vec![32]);
        c.fields = Some(4);
        c.m = Some(vec![1, 3, 6]);
        let r = gibbs_concentration(&c).unwrap();
        assert_eq!(r.checks[0].statistic, 1.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let mut c = ExperimentConfig::named("chi_sampler", 9);
        c.replicas = Some(200);
        let a = chi_sampler(&c).unwrap();
        let b = chi_sampler(&c).unwrap();
        assert_eq!(a, b);
        c.beta = Some(ALPHA);
        assert!(chi_sampler(&c).is_err());
    }
}
