//! Machine-readable run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{DesignResult, TraceStep};
use crate::eig::EigReport;
use crate::error::{OedError, Result};
use crate::validate::CheckResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub name: String,
    pub n: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub method: String,
    pub budget: usize,
    pub selected: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_labels: Option<Vec<String>>,
    pub criterion: f64,
    pub trace: Vec<TraceStep>,
}

impl DesignReport {
    pub fn new(method: &str, budget: usize, result: &DesignResult, labels: Option<&[String]>) -> Self {
        let selected = result.design.indices();
        DesignReport {
            method: method.to_string(),
            budget,
            selected_labels: labels.map(|l| selected.iter().map(|&i| l[i].clone()).collect()),
            selected,
            criterion: result.criterion,
            trace: result.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub randomized: bool,
    pub eig_lowrank: f64,
    pub eig_dense: f64,
    pub truncation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub data_source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig: Option<EigReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<String>>,
    /// Wall-clock seconds per phase. Excluded from [`Report::numeric_content`].
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

/// JSON has no encoding for NaN or infinity; serde_json writes them as `null`.
/// Optional fields are skipped when absent, so any `null` is a non-finite number.
fn find_null(v: &serde_json::Value, at: &str) -> Option<String> {
    match v {
        serde_json::Value::Null => Some(at.to_string()),
        serde_json::Value::Array(xs) => xs
            .iter()
            .enumerate()
            .find_map(|(i, x)| find_null(x, &format!("{at}[{i}]"))),
        serde_json::Value::Object(m) => m
            .iter()
            .find_map(|(k, x)| find_null(x, &format!("{at}.{k}"))),
        _ => None,
    }
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).expect("report serializes");
        let value = match value {
            serde_json::Value::Object(mut m) => {
                // `removed` in trace steps is legitimately null for greedy steps.
                strip_trace_nulls(&mut m);
                serde_json::Value::Object(m)
            }
            v => v,
        };
        if let Some(at) = find_null(&value, "report") {
            return Err(OedError::InvalidArgument(format!("non-finite value at {at}")));
        }
        Ok(serde_json::to_string_pretty(self).expect("report serializes") + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| OedError::InvalidArgument(format!("bad report: {e}")))
    }

    /// Serialized report without timings; identical runs give identical bytes.
    pub fn numeric_content(&self) -> Result<String> {
        let mut r = self.clone();
        r.timings.clear();
        r.to_json()
    }
}

fn strip_trace_nulls(m: &mut serde_json::Map<String, serde_json::Value>) {
    if let Some(serde_json::Value::Object(design)) = m.get_mut("design") {
        if let Some(serde_json::Value::Array(steps)) = design.get_mut("trace") {
            for s in steps {
                if let serde_json::Value::Object(step) = s {
                    if step.get("removed") == Some(&serde_json::Value::Null) {
                        step.remove("removed");
                    }
                }
            }
        }
    }
}
