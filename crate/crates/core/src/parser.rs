//! Strict validation of raw model responses.
//!
//! A response is accepted only if it is exactly one JSON object carrying
//! exactly the five schema fields with in-range integer codes. Nothing is
//! repaired: prose, code fences, extra keys and inconsistent values all end in
//! a [`ParseRejection`], which is ordinary data, not an error.
//!
//! When a payload has several faults the first one found wins, checked in
//! this order: markdown fence, surrounding text, invalid JSON, non-object top
//! level, duplicate or unknown keys, missing keys, then each field in schema
//! order (type before range before duplicates), then cross-field consistency.

use crate::runner::{RunRecord, RunStatus};
use crate::schema;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;

pub const FIELDS: [&str; 5] = [
    "window_has_risk",
    "overall_risk_level",
    "risk_types",
    "evidence_signals",
    "uncertainty",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotJson,
    ExtraText,
    MarkdownWrapper,
    UnknownField,
    CodeOutOfRange,
    TypeMismatch,
    ConsistencyViolation,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        RejectReason::NotJson,
        RejectReason::ExtraText,
        RejectReason::MarkdownWrapper,
        RejectReason::UnknownField,
        RejectReason::CodeOutOfRange,
        RejectReason::TypeMismatch,
        RejectReason::ConsistencyViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NotJson => "not_json",
            RejectReason::ExtraText => "extra_text",
            RejectReason::MarkdownWrapper => "markdown_wrapper",
            RejectReason::UnknownField => "unknown_field",
            RejectReason::CodeOutOfRange => "code_out_of_range",
            RejectReason::TypeMismatch => "type_mismatch",
            RejectReason::ConsistencyViolation => "consistency_violation",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The canonical payload, fields in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentPayload {
    pub window_has_risk: u8,
    pub overall_risk_level: u8,
    pub risk_types: Vec<u8>,
    pub evidence_signals: Vec<u8>,
    pub uncertainty: u8,
}

impl AssessmentPayload {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub window_id: String,
    pub model_id: String,
    pub window_has_risk: u8,
    pub overall_risk_level: u8,
    /// Dominant factor first.
    pub risk_types: Vec<u8>,
    /// Priority order.
    pub evidence_signals: Vec<u8>,
    pub uncertainty: u8,
}

impl RiskAssessment {
    pub fn from_payload(window_id: &str, model_id: &str, p: AssessmentPayload) -> Self {
        Self {
            window_id: window_id.to_string(),
            model_id: model_id.to_string(),
            window_has_risk: p.window_has_risk,
            overall_risk_level: p.overall_risk_level,
            risk_types: p.risk_types,
            evidence_signals: p.evidence_signals,
            uncertainty: p.uncertainty,
        }
    }

    pub fn payload(&self) -> AssessmentPayload {
        AssessmentPayload {
            window_has_risk: self.window_has_risk,
            overall_risk_level: self.overall_risk_level,
            risk_types: self.risk_types.clone(),
            evidence_signals: self.evidence_signals.clone(),
            uncertainty: self.uncertainty,
        }
    }

    pub fn dominant_factor(&self) -> Option<u8> {
        self.risk_types.first().copied()
    }

    pub fn distinct_evidence(&self) -> usize {
        let mut codes = self.evidence_signals.clone();
        codes.sort_unstable();
        codes.dedup();
        codes.len()
    }

    pub fn is_escalated(&self, tau: u8) -> bool {
        self.overall_risk_level >= tau
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRejection {
    pub window_id: String,
    pub model_id: String,
    pub reason: RejectReason,
    pub field_path: String,
    pub fragment: String,
}

/// A payload-level fault before window/model ids are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub reason: RejectReason,
    pub field_path: String,
    pub fragment: String,
}

fn fault(
    reason: RejectReason,
    field_path: impl Into<String>,
    fragment: impl Into<String>,
) -> Fault {
    Fault {
        reason,
        field_path: field_path.into(),
        fragment: clip(&fragment.into()),
    }
}

fn clip(s: &str) -> String {
    const MAX: usize = 80;
    if s.chars().count() <= MAX {
        s.to_string()
    } else {
        s.chars().take(MAX).collect::<String>() + "..."
    }
}

/// Object entries in document order, keeping duplicates visible.
struct Entries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Locates exactly one JSON value spanning the whole (trimmed) text.
fn single_value(text: &str) -> Result<Value, Fault> {
    let trimmed = text.trim();
    if trimmed.starts_with("```") || trimmed.contains("\n```") || trimmed.ends_with("```") {
        return Err(fault(RejectReason::MarkdownWrapper, "$", trimmed));
    }
    let mut stream = serde_json::Deserializer::from_str(trimmed).into_iter::<Value>();
    match stream.next() {
        Some(Ok(value)) => {
            let end = stream.byte_offset();
            if end < trimmed.len() {
                return Err(fault(RejectReason::ExtraText, "$", &trimmed[end..]));
            }
            Ok(value)
        }
        Some(Err(_)) => {
            // Leading prose followed by a well-formed object is extra text,
            // anything else is simply not JSON.
            if let Some(pos) = trimmed.find('{').filter(|&p| p > 0) {
                let mut tail =
                    serde_json::Deserializer::from_str(&trimmed[pos..]).into_iter::<Value>();
                if let Some(Ok(_)) = tail.next() {
                    return Err(fault(RejectReason::ExtraText, "$", &trimmed[..pos]));
                }
            }
            Err(fault(RejectReason::NotJson, "$", trimmed))
        }
        None => Err(fault(RejectReason::NotJson, "$", "<empty>")),
    }
}

fn integer(path: &str, v: &Value) -> Result<i64, Fault> {
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(i)
            } else if n.is_u64() {
                // positive integer beyond i64
                Err(fault(RejectReason::CodeOutOfRange, path, n.to_string()))
            } else {
                Err(fault(RejectReason::TypeMismatch, path, n.to_string()))
            }
        }
        other => Err(fault(RejectReason::TypeMismatch, path, other.to_string())),
    }
}

fn scalar_code(
    entries: &BTreeMap<&str, &Value>,
    field: &str,
    valid: fn(i64) -> bool,
) -> Result<u8, Fault> {
    let path = format!("$.{field}");
    let v = integer(&path, entries[field])?;
    if !valid(v) {
        return Err(fault(RejectReason::CodeOutOfRange, path, v.to_string()));
    }
    Ok(v as u8)
}

fn code_list(
    entries: &BTreeMap<&str, &Value>,
    field: &str,
    valid: fn(i64) -> bool,
) -> Result<Vec<u8>, Fault> {
    let path = format!("$.{field}");
    let items = match entries[field] {
        Value::Array(items) => items,
        other => return Err(fault(RejectReason::TypeMismatch, path, other.to_string())),
    };
    let mut codes = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let item_path = format!("{path}[{i}]");
        let v = integer(&item_path, item)?;
        if !valid(v) {
            return Err(fault(
                RejectReason::CodeOutOfRange,
                item_path,
                v.to_string(),
            ));
        }
        codes.push(v as u8);
    }
    for (i, c) in codes.iter().enumerate() {
        if codes[..i].contains(c) {
            return Err(fault(
                RejectReason::ConsistencyViolation,
                format!("{path}[{i}]"),
                format!("duplicate code {c}"),
            ));
        }
    }
    Ok(codes)
}

/// Validates a raw response text against the closed schema.
pub fn parse_payload(text: &str) -> Result<AssessmentPayload, Fault> {
    let value = single_value(text)?;
    if !value.is_object() {
        return Err(fault(RejectReason::TypeMismatch, "$", value.to_string()));
    }
    // Re-read from the text: a `Value` would silently drop duplicate keys.
    let Entries(raw) = serde_json::from_str::<Entries>(text.trim())
        .map_err(|e| fault(RejectReason::NotJson, "$", e.to_string()))?;

    let mut entries: BTreeMap<&str, &Value> = BTreeMap::new();
    for (key, v) in &raw {
        if !FIELDS.contains(&key.as_str()) {
            return Err(fault(
                RejectReason::UnknownField,
                format!("$.{key}"),
                v.to_string(),
            ));
        }
        if entries.insert(key.as_str(), v).is_some() {
            return Err(fault(
                RejectReason::ConsistencyViolation,
                format!("$.{key}"),
                "duplicate key",
            ));
        }
    }
    if let Some(missing) = FIELDS.iter().find(|f| !entries.contains_key(*f)) {
        return Err(fault(
            RejectReason::TypeMismatch,
            format!("$.{missing}"),
            "missing required field",
        ));
    }

    let window_has_risk = scalar_code(&entries, "window_has_risk", |c| (0..=1).contains(&c))?;
    let overall_risk_level = scalar_code(&entries, "overall_risk_level", schema::is_risk_level)?;
    let risk_types = code_list(&entries, "risk_types", schema::is_risk_type)?;
    let evidence_signals = code_list(&entries, "evidence_signals", schema::is_evidence_signal)?;
    let uncertainty = scalar_code(&entries, "uncertainty", schema::is_uncertainty)?;

    if (window_has_risk == 1) != (overall_risk_level >= 1) {
        return Err(fault(
            RejectReason::ConsistencyViolation,
            "$.window_has_risk",
            format!(
                "window_has_risk={window_has_risk} with overall_risk_level={overall_risk_level}"
            ),
        ));
    }
    if overall_risk_level >= 2 && risk_types.is_empty() {
        return Err(fault(
            RejectReason::ConsistencyViolation,
            "$.risk_types",
            format!("empty at overall_risk_level={overall_risk_level}"),
        ));
    }
    Ok(AssessmentPayload {
        window_has_risk,
        overall_risk_level,
        risk_types,
        evidence_signals,
        uncertainty,
    })
}

pub fn parse_response(
    window_id: &str,
    model_id: &str,
    raw: &str,
) -> Result<RiskAssessment, ParseRejection> {
    parse_payload(raw)
        .map(|p| RiskAssessment::from_payload(window_id, model_id, p))
        .map_err(|f| ParseRejection {
            window_id: window_id.to_string(),
            model_id: model_id.to_string(),
            reason: f.reason,
            field_path: f.field_path,
            fragment: f.fragment,
        })
}

/// Parses an `ok` record; records with any other status have nothing to parse.
pub fn parse_assessment(record: &RunRecord) -> Option<Result<RiskAssessment, ParseRejection>> {
    (record.status == RunStatus::Ok)
        .then(|| parse_response(&record.window_id, &record.model_id, &record.raw_response))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStrictness {
    pub ok_records: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl ModelStrictness {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Per-model accepted/rejected counts over the `ok` records.
pub fn strictness_report(records: &[RunRecord]) -> BTreeMap<String, ModelStrictness> {
    let mut report: BTreeMap<String, ModelStrictness> = BTreeMap::new();
    for record in records {
        let entry = report.entry(record.model_id.clone()).or_default();
        match parse_assessment(record) {
            None => {}
            Some(Ok(_)) => {
                entry.ok_records += 1;
                entry.accepted += 1;
            }
            Some(Err(rejection)) => {
                entry.ok_records += 1;
                *entry.rejected.entry(rejection.reason).or_default() += 1;
            }
        }
    }
    report
}
