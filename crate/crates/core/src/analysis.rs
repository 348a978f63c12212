//! Per-model risk profiles and cohort-relative behavioral labels.
//!
//! For each model the accepted assessments over a common window set yield
//! four core statistics: mean overall risk level, share of windows at or above
//! the escalation threshold `tau`, mean count of distinct evidence signals,
//! and the distribution of dominant risk factors. Labels compare each model to
//! the cohort median, so they are only defined for two or more models.

use crate::parser::RiskAssessment;
use crate::scalar::{mean, median, Scalar};
use crate::schema::{MAX_RISK_LEVEL, MAX_UNCERTAINTY, RISK_TYPES, VRU_TYPES};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const DEFAULT_TAU: u8 = 4;
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.5;
/// Highest possible number of distinct evidence signals.
pub const MAX_EVIDENCE: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("unequal window coverage; missing (model, window) pairs: {missing:?}")]
    Coverage { missing: Vec<(String, String)> },
    #[error("model `{0}` has no accepted assessments")]
    NoAcceptedAssessments(String),
    #[error("labels need a cohort of at least two models, got {0}")]
    CohortTooSmall(usize),
    #[error("tau must lie in 1..=6, got {0}")]
    InvalidTau(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub tau: u8,
    /// Normalized factor entropy below which attribution is "specialized".
    pub entropy_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if (1..=MAX_RISK_LEVEL).contains(&self.tau) {
            Ok(())
        } else {
            Err(AnalysisError::InvalidTau(self.tau))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskPosture {
    Conservative,
    Tolerant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationSensitivity {
    Elevated,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningBreadth {
    Narrow,
    Broad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    Specialized,
    Diversified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub risk_posture: RiskPosture,
    pub escalation_sensitivity: EscalationSensitivity,
    pub reasoning_breadth: ReasoningBreadth,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile<T> {
    pub model_id: String,
    /// Windows with an accepted assessment.
    pub windows: usize,
    pub mu_risk: T,
    pub rho_high: T,
    pub mu_evidence: T,
    /// Dominant risk factor code -> number of windows.
    pub factor_dist: BTreeMap<u8, usize>,
    pub vru_rate: T,
    pub mean_uncertainty: T,
    /// Mean completion tokens, when the backend reports usage.
    pub mean_tokens: Option<T>,
    pub labels: Option<Labels>,
}

/// One model's outputs over the cohort's window set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelOutcomes {
    pub accepted: Vec<RiskAssessment>,
    /// Windows attempted but without an accepted assessment, with the cause.
    pub excluded: BTreeMap<String, String>,
    /// Completion tokens per window, where reported.
    pub completion_tokens: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    pub windows: Vec<String>,
    pub models: BTreeMap<String, ModelOutcomes>,
}

impl Cohort {
    /// `(model, window)` pairs the cohort window set expects but a model lacks.
    pub fn missing_pairs(&self) -> Vec<(String, String)> {
        let mut missing = Vec::new();
        for (model_id, outcomes) in &self.models {
            let covered: BTreeSet<&str> = outcomes
                .accepted
                .iter()
                .map(|a| a.window_id.as_str())
                .chain(outcomes.excluded.keys().map(String::as_str))
                .collect();
            for w in &self.windows {
                if !covered.contains(w.as_str()) {
                    missing.push((model_id.clone(), w.clone()));
                }
            }
        }
        missing
    }
}

/// Normalized Shannon entropy of a dominant-factor distribution, in [0, 1].
///
/// Normalized by the size of the risk-type code set, so a distribution
/// concentrated on one code scores 0 and a uniform one over all codes 1.
pub fn factor_entropy(factor_dist: &BTreeMap<u8, usize>) -> f64 {
    let total: usize = factor_dist.values().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = factor_dist
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    (h / (RISK_TYPES.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Statistics of one model from its accepted assessments.
pub fn profile_from_assessments<T: Scalar>(
    model_id: &str,
    assessments: &[RiskAssessment],
    completion_tokens: &BTreeMap<String, u32>,
    tau: u8,
) -> Option<ModelProfile<T>> {
    let n = assessments.len();
    if n == 0 {
        return None;
    }
    let mu_risk = mean(
        assessments
            .iter()
            .map(|a| T::from_count(a.overall_risk_level as usize)),
    )?;
    let high = assessments
        .iter()
        .filter(|a| a.overall_risk_level >= tau)
        .count();
    let mu_evidence = mean(
        assessments
            .iter()
            .map(|a| T::from_count(a.distinct_evidence())),
    )?;
    let mut factor_dist = BTreeMap::new();
    for f in assessments
        .iter()
        .filter_map(RiskAssessment::dominant_factor)
    {
        *factor_dist.entry(f).or_insert(0) += 1;
    }
    let vru = assessments
        .iter()
        .filter(|a| a.risk_types.iter().any(|c| VRU_TYPES.contains(c)))
        .count();
    let mean_uncertainty = mean(
        assessments
            .iter()
            .map(|a| T::from_count(a.uncertainty as usize)),
    )?;
    let mean_tokens = mean(
        assessments
            .iter()
            .filter_map(|a| completion_tokens.get(&a.window_id))
            .map(|&t| T::from_count(t as usize)),
    );
    Some(ModelProfile {
        model_id: model_id.to_string(),
        windows: n,
        mu_risk,
        rho_high: T::ratio(high, n),
        mu_evidence,
        factor_dist,
        vru_rate: T::ratio(vru, n),
        mean_uncertainty,
        mean_tokens,
        labels: None,
    })
}

/// Profiles for every model of the cohort, in model id order.
pub fn compute_profiles<T: Scalar>(
    cohort: &Cohort,
    config: &AnalysisConfig,
) -> Result<Vec<ModelProfile<T>>, AnalysisError> {
    config.validate()?;
    let missing = cohort.missing_pairs();
    if !missing.is_empty() {
        return Err(AnalysisError::Coverage { missing });
    }
    cohort
        .models
        .iter()
        .map(|(model_id, outcomes)| {
            profile_from_assessments(
                model_id,
                &outcomes.accepted,
                &outcomes.completion_tokens,
                config.tau,
            )
            .ok_or_else(|| AnalysisError::NoAcceptedAssessments(model_id.clone()))
        })
        .collect()
}

/// Cohort-relative labels: strict comparisons against the cohort median,
/// with ties resolving to tolerant / normal / broad.
pub fn assign_labels<T: Scalar>(
    profiles: &mut [ModelProfile<T>],
    config: &AnalysisConfig,
) -> Result<(), AnalysisError> {
    if profiles.len() < 2 {
        return Err(AnalysisError::CohortTooSmall(profiles.len()));
    }
    let med = |f: fn(&ModelProfile<T>) -> T| {
        median(&profiles.iter().map(f).collect::<Vec<_>>()).expect("non-empty cohort")
    };
    let risk_median = med(|p| p.mu_risk);
    let high_median = med(|p| p.rho_high);
    let evidence_median = med(|p| p.mu_evidence);
    for p in profiles.iter_mut() {
        p.labels = Some(Labels {
            risk_posture: if p.mu_risk > risk_median {
                RiskPosture::Conservative
            } else {
                RiskPosture::Tolerant
            },
            escalation_sensitivity: if p.rho_high > high_median {
                EscalationSensitivity::Elevated
            } else {
                EscalationSensitivity::Normal
            },
            reasoning_breadth: if p.mu_evidence < evidence_median {
                ReasoningBreadth::Narrow
            } else {
                ReasoningBreadth::Broad
            },
            attribution: if factor_entropy(&p.factor_dist) < config.entropy_threshold {
                Attribution::Specialized
            } else {
                Attribution::Diversified
            },
        });
    }
    Ok(())
}

/// Six radar axes per model, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarVector {
    pub model_id: String,
    pub attribution_diversity: f64,
    pub high_risk_escalation: f64,
    pub vru_presence: f64,
    pub evidence_breadth: f64,
    pub uncertainty_expression: f64,
    /// Omitted when any model lacks token usage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_tokens: Option<f64>,
}

impl RadarVector {
    pub fn axes(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("attribution_diversity", self.attribution_diversity),
            ("high_risk_escalation", self.high_risk_escalation),
            ("vru_presence", self.vru_presence),
            ("evidence_breadth", self.evidence_breadth),
            ("uncertainty_expression", self.uncertainty_expression),
        ];
        if let Some(t) = self.relative_tokens {
            v.push(("relative_tokens", t));
        }
        v
    }
}

pub fn radar_summary<T: Scalar>(profiles: &[ModelProfile<T>]) -> Vec<RadarVector> {
    let tokens: Option<Vec<T>> = profiles.iter().map(|p| p.mean_tokens).collect();
    let max_tokens = tokens
        .as_ref()
        .and_then(|t| t.iter().copied().reduce(Scalar::max_of))
        .filter(|m| *m > T::zero());
    profiles
        .iter()
        .map(|p| RadarVector {
            model_id: p.model_id.clone(),
            attribution_diversity: factor_entropy(&p.factor_dist),
            high_risk_escalation: p.rho_high.to_f64_lossy(),
            vru_presence: p.vru_rate.to_f64_lossy(),
            evidence_breadth: (p.mu_evidence / T::from_count(MAX_EVIDENCE)).to_f64_lossy(),
            uncertainty_expression: (p.mean_uncertainty / T::from_count(MAX_UNCERTAINTY as usize))
                .to_f64_lossy(),
            relative_tokens: max_tokens
                .and_then(|max| p.mean_tokens.map(|t| (t / max).to_f64_lossy())),
        })
        .collect()
}
