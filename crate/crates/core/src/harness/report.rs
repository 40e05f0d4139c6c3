use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One thresholded statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Non-finite values are written as `null`.
    #[serde(deserialize_with = "null_as_nan")]
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub threshold: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub experiment: String,
    pub parameters: Value,
    pub param_hash: String,
    pub seed: u64,
    pub replicas: usize,
    pub checks: Vec<Check>,
    pub diagnostics: BTreeMap<String, Value>,
    pub passed: bool,
}

/// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
pub fn param_hash(params: &Value) -> String {
    let canonical = serde_json::to_string(params).expect("JSON values always serialise");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

impl TestReport {
    pub fn new<P: Serialize>(experiment: &str, params: &P, seed: u64, replicas: usize) -> Self {
        let parameters = serde_json::to_value(params).expect("parameters serialise");
        TestReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            param_hash: param_hash(&parameters),
            parameters,
            seed,
            replicas,
            checks: Vec::new(),
            diagnostics: BTreeMap::new(),
            passed: true,
        }
    }

    pub fn check(&mut self, name: &str, statistic: f64, threshold: impl Into<String>, passed: bool) {
        self.push(name, statistic, None, threshold.into(), passed);
    }

    /// A test passes when its p-value exceeds `level`.
    pub fn p_check(&mut self, name: &str, statistic: f64, p_value: f64, level: f64) {
        self.push(name, statistic, Some(p_value), format!("p > {level:.3e}"), p_value > level);
    }

    fn push(&mut self, name: &str, statistic: f64, p_value: Option<f64>, threshold: String, passed: bool) {
        self.passed &= passed;
        self.checks.push(Check {
            name: name.to_string(),
            statistic: finite_or_nan(statistic),
            p_value,
            threshold,
            passed,
        });
    }

    pub fn note<V: Serialize>(&mut self, key: &str, value: V) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.diagnostics.insert(key.to_string(), v);
    }

    pub fn fail(&mut self, reason: &str) {
        self.passed = false;
        self.note("failure", reason);
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::error::parse_err(format!("line {}", e.line()), e.to_string()))
    }

    /// `PASS`/`FAIL` followed by the failing checks, if any.
    pub fn summary(&self) -> String {
        let failing: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| match c.p_value {
                Some(p) => format!("{} (p = {p:.3e}, {})", c.name, c.threshold),
                None => format!("{} (= {:.4e}, {})", c.name, c.statistic, c.threshold),
            })
            .collect();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        if failing.is_empty() {
            format!("{verdict} {} [{} checks]", self.experiment, self.checks.len())
        } else {
            format!("{verdict} {}: {}", self.experiment, failing.join("; "))
        }
    }
}

pub const CSV_HEADER: &str = "experiment,param_hash,check,statistic,pvalue,verdict";

pub fn write_csv<W: Write>(w: &mut W, reports: &[TestReport]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        for c in &r.checks {
            let p = c.p_value.map(crate::io::fmt_real).unwrap_or_default();
            let verdict = if c.passed { "pass" } else { "fail" };
            writeln!(w, "{},{},{},{},{p},{verdict}", r.experiment, r.param_hash, c.name, crate::io::fmt_real(c.statistic))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn verdict_and_csv() {
        let mut r = TestReport::new("demo", &json!({"n": [8]}), 3, 10);
        r.check("residual", 1e-12, "<= 1e-8", true);
        r.p_check("uniform", 0.4, 0.5, 0.01);
        assert!(r.passed);
        r.p_check("tail", 9.0, 0.001, 0.01);
        assert!(!r.passed);
        assert!(r.summary().starts_with("FAIL demo: tail"));
        let mut out = Vec::new();
        write_csv(&mut out, &[r.clone()]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 4);
        assert!(s.lines().nth(3).unwrap().ends_with(",fail"));
        assert_eq!(TestReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn hash_depends_on_parameters_only() {
        let a = TestReport::new("x", &json!({"n": 1}), 1, 1);
        let b = TestReport::new("y", &json!({"n": 1}), 2, 5);
        let c = TestReport::new("x", &json!({"n": 2}), 1, 1);
        assert_eq!(a.param_hash, b.param_hash);
        assert_ne!(a.param_hash, c.param_hash);
        assert_eq!(a.param_hash.len(), 16);
    }
}
