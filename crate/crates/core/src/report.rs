//! Session reports and their JSON / flat CSV encodings.
//!
//! The CSV form is a two-column `field,value` table: every leaf of the JSON
//! tree becomes one row keyed by its dotted path, and the value is kept as a
//! JSON literal, so decoding reproduces the JSON exactly.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::channel::LossBreakdown;
use crate::protocol::wire::{AbortReason, QberReport, Role, SessionPhase};
use crate::simulate::{GateStats, PhysicsStats};
use crate::sync::ClockModel;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad CSV report: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted {
        reason: AbortReason,
        phase: SessionPhase,
        /// Party that raised the abort.
        raised_by: Role,
        detail: String,
    },
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Completed => "completed".into(),
            Outcome::Aborted { reason, .. } => format!("aborted ({reason:?})"),
        }
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        match self {
            Outcome::Completed => None,
            Outcome::Aborted { reason, .. } => Some(*reason),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossAccounting {
    pub link: LossBreakdown,
    pub receiver_db: f64,
    pub gate_acceptance: f64,
    pub total_db: f64,
}

/// Bob-only diagnostics from the quantum phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BobDiagnostics {
    pub clock: Option<ClockModel>,
    pub coarse_epoch_ps: f64,
    pub gate: Option<GateStats>,
    /// Ground truth; absent when tags were replayed from a file.
    pub physics: Option<PhysicsStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub role: Role,
    pub scenario: String,
    pub scenario_hash: String,
    pub session_id: u64,
    pub n_pulses: u64,
    /// Simulated optical session time, not wall time.
    pub duration_s: f64,
    pub outcome: Outcome,
    pub reported_pulses: u64,
    pub sifted_bits: u64,
    pub disclosed_bits: u64,
    pub remaining_key_bits: u64,
    pub sifted_key_rate_bps: f64,
    pub sifted_key_sha256: Option<String>,
    pub qber: Option<QberReport>,
    pub loss: LossAccounting,
    pub bob: Option<BobDiagnostics>,
}

impl SessionReport {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) if !m.is_empty() => m.iter().for_each(|(k, x)| flatten(&key(k), x, out)),
        Value::Array(a) if !a.is_empty() => a.iter().enumerate().for_each(|(i, x)| flatten(&key(&i.to_string()), x, out)),
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

pub fn to_csv<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut rows = Vec::new();
    flatten("", &serde_json::to_value(value)?, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["field", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| ReportError::Shape(e.to_string()))?).expect("utf-8"))
}

fn insert(root: &mut Value, path: &[&str], leaf: Value) -> Result<(), ReportError> {
    let Some((head, rest)) = path.split_first() else {
        *root = leaf;
        return Ok(());
    };
    let next_is_index = rest.first().is_some_and(|s| s.parse::<usize>().is_ok());
    let fresh = || if next_is_index { Value::Array(vec![]) } else { Value::Object(Map::new()) };
    let child = match root {
        Value::Object(m) => m.entry(head.to_string()).or_insert_with(fresh),
        Value::Array(a) => {
            let i: usize = head.parse().map_err(|_| ReportError::Shape(format!("non-index `{head}` in array")))?;
            if i == a.len() {
                a.push(fresh());
            } else if i > a.len() {
                return Err(ReportError::Shape(format!("array index {i} out of order")));
            }
            &mut a[i]
        }
        _ => return Err(ReportError::Shape(format!("field `{head}` under a leaf"))),
    };
    insert(child, rest, leaf)
}

pub fn from_csv<T: DeserializeOwned>(text: &str) -> Result<T, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut root = Value::Object(Map::new());
    for rec in r.records() {
        let rec = rec?;
        let (k, v) = (&rec[0], &rec[1]);
        let path: Vec<&str> = if k.is_empty() { vec![] } else { k.split('.').collect() };
        insert(&mut root, &path, serde_json::from_str(v)?)?;
    }
    Ok(serde_json::from_value(root)?)
}
