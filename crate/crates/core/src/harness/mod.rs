//! Experiment orchestration: configuration, reports and the registry of
//! named experiments.
//!
//! Every experiment resolves its parameters from an [`ExperimentConfig`]
//! (falling back to built-in defaults), validates them, and only then starts
//! simulating. Replicas are seeded by index, so a report is a pure function
//! of its resolved parameters and seed.

mod config;
mod excursions;
mod lemmas;
mod report;
mod theorem;

pub use config::{ExperimentConfig, Tolerances};
pub use report::{param_hash, write_csv, Check, TestReport, CSV_HEADER, REPORT_SCHEMA_VERSION};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scales::ALPHA;

pub type Runner = fn(&ExperimentConfig) -> Result<TestReport>;

pub struct ExperimentInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub run: Runner,
}

static REGISTRY: &[ExperimentInfo] = &[
    ExperimentInfo {
        name: "green_exactness",
        summary: "residual and symmetry of exact box Green tables",
        run: lemmas::green_exactness,
    },
    ExperimentInfo {
        name: "green_slope",
        summary: "slope of G_{V_N}(centre, centre) against log N",
        run: lemmas::green_slope,
    },
    ExperimentInfo {
        name: "dgff_covariance",
        summary: "empirical field covariance against G, and Gaussian marginals",
        run: lemmas::dgff_covariance,
    },
    ExperimentInfo {
        name: "local_time",
        summary: "visit count to the origin before leaving B_{r_N} is geometric",
        run: lemmas::local_time,
    },
    ExperimentInfo {
        name: "local_time_spread",
        summary: "max_y |L(y)/L(0) - 1| over B_r shrinks along an N ladder",
        run: lemmas::local_time_spread,
    },
    ExperimentInfo {
        name: "hitting",
        summary: "first ball hit among separated balls is uniform",
        run: lemmas::hitting,
    },
    ExperimentInfo {
        name: "clock_identities",
        summary: "Wald identity and pathwise ordering of K-process clocks",
        run: lemmas::clock_identities,
    },
    ExperimentInfo {
        name: "chi_sampler",
        summary: "Poisson atom counts and Pareto depths of the atom sampler",
        run: lemmas::chi_sampler,
    },
    ExperimentInfo {
        name: "prek_truncation",
        summary: "coupled disagreement of truncated pre-K processes",
        run: lemmas::prek_truncation,
    },
    ExperimentInfo {
        name: "gibbs_concentration",
        summary: "mass outside the deep-trap balls against M",
        run: lemmas::gibbs_concentration,
    },
    ExperimentInfo {
        name: "top_depth_tightness",
        summary: "law of the top rescaled trap depth is stable across N",
        run: lemmas::top_depth_tightness,
    },
    ExperimentInfo {
        name: "step_budget",
        summary: "embedded steps needed to reach s_N against the step budget",
        run: theorem::step_budget,
    },
    ExperimentInfo {
        name: "joint_independence",
        summary: "ordinals, centre local times and their independence over excursions",
        run: excursions::joint_independence,
    },
    ExperimentInfo {
        name: "walk_vs_trace",
        summary: "L-distance between the rescaled walk and its trace against M",
        run: theorem::walk_vs_trace,
    },
    ExperimentInfo {
        name: "main_theorem",
        summary: "walk against pre-K sojourn fractions along an N ladder",
        run: theorem::main_theorem,
    },
];

pub fn registry() -> &'static [ExperimentInfo] {
    REGISTRY
}

pub fn find(name: &str) -> Option<&'static ExperimentInfo> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// Run the experiment named in `cfg` on the shared worker pool.
pub fn run(cfg: &ExperimentConfig) -> Result<TestReport> {
    let info = find(&cfg.experiment).ok_or_else(|| {
        let names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
        Error::Config(format!("unknown experiment {:?}; known: {}", cfg.experiment, names.join(", ")))
    })?;
    crate::parallel::install(|| (info.run)(cfg))
}

/// Seed for replica `i` of sub-experiment `purpose`.
pub(crate) fn sub_seed(seed: u64, purpose: u64, i: u64) -> u64 {
    rng::child_seed(rng::child_seed(seed, rng::tag::EXPERIMENT, purpose), rng::tag::REPLICA, i)
}

pub(crate) fn default_beta() -> f64 {
    2.0 * ALPHA
}

pub(crate) fn need(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

pub(crate) fn need_positive(name: &str, v: f64) -> Result<()> {
    need(v > 0.0 && v.is_finite(), format!("{name} must be positive and finite, got {v}"))
}

pub(crate) fn need_level(alpha: f64) -> Result<()> {
    need(alpha > 0.0 && alpha < 1.0, format!("significance level must be in (0,1), got {alpha}"))
}

pub(crate) fn need_nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    need(!v.is_empty(), format!("{name} must not be empty"))
}
