use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experiment settings read from TOML. Unset fields fall back to the
/// experiment's own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_field: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[i32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[i32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Family-wise significance level before Bonferroni splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Allowed deviation in standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<f64>,
}

impl ExperimentConfig {
    pub fn named(experiment: &str, seed: u64) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let c = ExperimentConfig::from_toml(
            r#"
experiment = "hitting"
seed = 12
n = [1024]
r = 3.0
centers = [[256, 256], [768, 300]]
start = [512, 520]
replicas = 200

[tolerances]
alpha = 0.01
"#,
        )
        .unwrap();
        assert_eq!(c.experiment, "hitting");
        assert_eq!(c.centers.as_ref().unwrap()[1], [768, 300]);
        assert_eq!(c.tolerances.alpha, Some(0.01));
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_toml("experiment = \"x\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
    }
}
