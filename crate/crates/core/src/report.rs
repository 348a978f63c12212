//! Run reports: profiles, labels, radar vectors, strictness counts and
//! per-window disagreement, plus the plot-ready CSV tables.
//!
//! Everything here is a pure function of the run's records and window list.
//! Run ids and timestamps are left out so that repeating a run reproduces
//! the report byte for byte.

use crate::ambiguity::{
    heatmap_matrix, score_windows, tier_partition, AmbiguityError, HeatmapMatrix, TierPartition,
    Weights,
};
use crate::analysis::{
    assign_labels, compute_profiles, radar_summary, AnalysisConfig, AnalysisError, Cohort,
    ModelOutcomes, ModelProfile, RadarVector,
};
use crate::parser::{parse_assessment, strictness_report, ModelStrictness, RiskAssessment};
use crate::runner::{RunRecord, RunStatus};
use crate::schema::{RISK_TYPES, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const REPORT_FILE: &str = "report.json";
pub const UNCERTAINTY_CSV: &str = "uncertainty.csv";
pub const HEATMAP_CSV: &str = "heatmap.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("records mix prompt hashes {0:?}; report one prompt at a time")]
    MixedPrompts(Vec<String>),
    #[error("record for window `{0}` is outside the run's window set")]
    UnknownWindow(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A (model, window) pair left out of the metrics, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub model_id: String,
    pub window_id: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub window_id: String,
    pub d_sev: f64,
    pub d_esc: f64,
    pub d_evi: f64,
    pub d_fac: f64,
    pub composite: f64,
    pub ambiguous: bool,
    pub tier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub prompt_hash: Option<String>,
    pub config: AnalysisConfig,
    /// Window ids in collection order.
    pub windows: Vec<String>,
    pub strictness: BTreeMap<String, ModelStrictness>,
    pub profiles: Vec<ModelProfile<f64>>,
    pub radar: Vec<RadarVector>,
    /// Models without a single accepted assessment; they carry no profile.
    pub unprofiled_models: Vec<String>,
    pub coverage_annex: Vec<Exclusion>,
    /// Ascending composite uncertainty.
    pub uncertainty: Vec<UncertaintyRow>,
    pub tiers: TierPartition,
    pub heatmap: HeatmapMatrix<f64>,
    /// Windows left unscored because some profiled model has no accepted assessment.
    pub unscored_windows: Vec<String>,
}

fn exclusion_cause(record: &RunRecord) -> Option<String> {
    match parse_assessment(record) {
        Some(Ok(_)) => None,
        Some(Err(rejection)) => Some(format!("rejected: {}", rejection.reason)),
        None => Some(
            match record.status {
                RunStatus::TransportError => "transport_error",
                RunStatus::Timeout => "timeout",
                RunStatus::Refused => "refused",
                RunStatus::Ok => unreachable!("ok records always parse to a result"),
            }
            .to_string(),
        ),
    }
}

/// Groups a run's records into a per-model cohort over `windows`.
pub fn cohort_from_records(
    windows: &[String],
    records: &[RunRecord],
) -> Result<Cohort, ReportError> {
    let known: BTreeSet<&str> = windows.iter().map(String::as_str).collect();
    let mut cohort = Cohort {
        windows: windows.to_vec(),
        models: BTreeMap::new(),
    };
    for record in records {
        if !known.contains(record.window_id.as_str()) {
            return Err(ReportError::UnknownWindow(record.window_id.clone()));
        }
        let outcomes = cohort.models.entry(record.model_id.clone()).or_default();
        match parse_assessment(record) {
            Some(Ok(a)) => {
                if let Some(usage) = record.token_usage {
                    outcomes
                        .completion_tokens
                        .insert(a.window_id.clone(), usage.completion_tokens);
                }
                outcomes.accepted.push(a);
            }
            _ => {
                let cause = exclusion_cause(record).expect("non-accepted record has a cause");
                outcomes.excluded.insert(record.window_id.clone(), cause);
            }
        }
    }
    for outcomes in cohort.models.values_mut() {
        outcomes
            .accepted
            .sort_by(|a, b| a.window_id.cmp(&b.window_id));
    }
    Ok(cohort)
}

pub fn build_report(
    windows: &[String],
    records: &[RunRecord],
    config: &AnalysisConfig,
) -> Result<Report, ReportError> {
    config.validate()?;
    let hashes: BTreeSet<&str> = records.iter().map(|r| r.prompt_hash.as_str()).collect();
    if hashes.len() > 1 {
        return Err(ReportError::MixedPrompts(
            hashes.into_iter().map(String::from).collect(),
        ));
    }
    let cohort = cohort_from_records(windows, records)?;

    let mut coverage_annex = Vec::new();
    for (model_id, outcomes) in &cohort.models {
        for (window_id, cause) in &outcomes.excluded {
            coverage_annex.push(Exclusion {
                model_id: model_id.clone(),
                window_id: window_id.clone(),
                cause: cause.clone(),
            });
        }
    }
    let (profiled, unprofiled): (
        BTreeMap<String, ModelOutcomes>,
        BTreeMap<String, ModelOutcomes>,
    ) = cohort
        .models
        .into_iter()
        .partition(|(_, o)| !o.accepted.is_empty());
    let profiled_cohort = Cohort {
        windows: cohort.windows,
        models: profiled,
    };

    let mut profiles: Vec<ModelProfile<f64>> = compute_profiles(&profiled_cohort, config)?;
    if profiles.len() >= 2 {
        assign_labels(&mut profiles, config)?;
    }
    let radar = radar_summary(&profiles);

    let model_ids: BTreeSet<String> = profiled_cohort.models.keys().cloned().collect();
    let (scored, mut unscored_windows) = if model_ids.len() >= 2 {
        let accepted: Vec<RiskAssessment> = profiled_cohort
            .models
            .values()
            .flat_map(|o| o.accepted.iter().cloned())
            .collect();
        score_windows(&accepted, &model_ids, config.tau, &Weights::<f64>::equal())?
    } else {
        (Vec::new(), windows.to_vec())
    };
    let scored_ids: BTreeSet<&str> = scored.iter().map(|d| d.window_id.as_str()).collect();
    for w in windows {
        if !scored_ids.contains(w.as_str()) && !unscored_windows.contains(w) {
            unscored_windows.push(w.clone());
        }
    }
    unscored_windows.sort();

    let tiers = tier_partition(&scored);
    let heatmap = heatmap_matrix(&scored);
    let by_id: BTreeMap<&str, _> = scored.iter().map(|d| (d.window_id.as_str(), d)).collect();
    let uncertainty = heatmap
        .rows
        .iter()
        .map(|id| {
            let d = by_id[id.as_str()];
            UncertaintyRow {
                window_id: id.clone(),
                d_sev: d.d_sev,
                d_esc: d.d_esc,
                d_evi: d.d_evi,
                d_fac: d.d_fac,
                composite: d.composite,
                ambiguous: d.ambiguous,
                tier: tiers
                    .tier_of(id)
                    .expect("scored window has a tier")
                    .as_str()
                    .to_string(),
            }
        })
        .collect();

    Ok(Report {
        schema_version: SCHEMA_VERSION.to_string(),
        prompt_hash: hashes.into_iter().next().map(String::from),
        config: *config,
        windows: windows.to_vec(),
        strictness: strictness_report(records),
        profiles,
        radar,
        unprofiled_models: unprofiled.into_keys().collect(),
        coverage_annex,
        uncertainty,
        tiers,
        heatmap,
        unscored_windows,
    })
}

impl Report {
    /// Pretty JSON with a trailing newline; the exact bytes served and written.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Every CSV table keyed by file name.
    pub fn csv_tables(&self) -> Result<BTreeMap<&'static str, String>, ReportError> {
        let mut tables = BTreeMap::new();
        let per_model = |header: &str, value: fn(&ModelProfile<f64>) -> f64| {
            table(
                ["model_id", header],
                self.profiles
                    .iter()
                    .map(|p| vec![p.model_id.clone(), value(p).to_string()]),
            )
        };
        tables.insert("mean_risk.csv", per_model("mu_risk", |p| p.mu_risk)?);
        tables.insert("high_risk_rate.csv", per_model("rho_high", |p| p.rho_high)?);
        tables.insert(
            "evidence_count.csv",
            per_model("mu_evidence", |p| p.mu_evidence)?,
        );

        let mut factor_header = vec!["model_id".to_string()];
        factor_header.extend(RISK_TYPES.iter().map(|(c, _)| format!("type_{c}")));
        tables.insert(
            "risk_factors.csv",
            table(
                factor_header,
                self.profiles.iter().map(|p| {
                    let mut row = vec![p.model_id.clone()];
                    row.extend(
                        RISK_TYPES
                            .iter()
                            .map(|(c, _)| p.factor_dist.get(c).copied().unwrap_or(0).to_string()),
                    );
                    row
                }),
            )?,
        );

        let axes: Vec<&str> = self
            .radar
            .first()
            .map(|r| r.axes().into_iter().map(|(name, _)| name).collect())
            .unwrap_or_default();
        let mut radar_header = vec!["model_id"];
        radar_header.extend(&axes);
        tables.insert(
            "radar.csv",
            table(
                radar_header,
                self.radar.iter().map(|r| {
                    let mut row = vec![r.model_id.clone()];
                    row.extend(r.axes().into_iter().map(|(_, v)| v.to_string()));
                    row
                }),
            )?,
        );

        tables.insert(
            UNCERTAINTY_CSV,
            table(
                [
                    "window_id",
                    "d_sev",
                    "d_esc",
                    "d_evi",
                    "d_fac",
                    "composite",
                    "tier",
                ],
                self.uncertainty.iter().map(|u| {
                    vec![
                        u.window_id.clone(),
                        u.d_sev.to_string(),
                        u.d_esc.to_string(),
                        u.d_evi.to_string(),
                        u.d_fac.to_string(),
                        u.composite.to_string(),
                        u.tier.clone(),
                    ]
                }),
            )?,
        );

        let mut heat_header = vec!["window_id".to_string()];
        heat_header.extend(self.heatmap.models.iter().cloned());
        tables.insert(
            HEATMAP_CSV,
            table(
                heat_header,
                self.heatmap
                    .rows
                    .iter()
                    .zip(&self.heatmap.cells)
                    .map(|(id, cells)| {
                        let mut row = vec![id.clone()];
                        row.extend(cells.iter().map(f64::to_string));
                        row
                    }),
            )?,
        );
        Ok(tables)
    }
}

fn table<H, S>(header: H, rows: impl Iterator<Item = Vec<String>>) -> Result<String, ReportError>
where
    H: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
