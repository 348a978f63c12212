//! Inter-model disagreement per scenario window.
//!
//! Detection first asks whether any model deviates from the consensus at all;
//! the composite score then grades the disagreement over four dimensions
//! (severity, escalation, evidence breadth, dominant factor), each in [0, 1].

use crate::analysis::MAX_EVIDENCE;
use crate::parser::RiskAssessment;
use crate::scalar::{median, Scalar};
use crate::schema::MAX_RISK_LEVEL;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmbiguityError {
    #[error("window `{window_id}` needs at least two model assessments, got {got}")]
    InsufficientCohort { window_id: String, got: usize },
    #[error("assessments mix windows `{0}` and `{1}`")]
    MixedWindows(String, String),
    #[error("model `{model_id}` assessed window `{window_id}` twice")]
    DuplicateModel { window_id: String, model_id: String },
    #[error("dimension weights must be non-negative and sum to 1")]
    InvalidWeights,
}

/// Weights of severity, escalation, evidence and factor dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub severity: T,
    pub escalation: T,
    pub evidence: T,
    pub factor: T,
}

impl<T: Scalar> Weights<T> {
    pub fn equal() -> Self {
        let q = T::ratio(1, 4);
        Self {
            severity: q,
            escalation: q,
            evidence: q,
            factor: q,
        }
    }

    fn combine(&self, d: [T; 4]) -> T {
        self.severity * d[0] + self.escalation * d[1] + self.evidence * d[2] + self.factor * d[3]
    }

    pub fn validate(&self) -> Result<(), AmbiguityError> {
        let w = [self.severity, self.escalation, self.evidence, self.factor];
        let sum = w.iter().fold(T::zero(), |a, &b| a + b);
        let tolerance = T::ratio(1, 1_000_000);
        if w.iter().any(|&x| x < T::zero()) || sum.abs_diff(T::one()) > tolerance {
            return Err(AmbiguityError::InvalidWeights);
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Weights<T> {
    fn default() -> Self {
        Self::equal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDisagreement<T> {
    pub window_id: String,
    pub d_sev: T,
    pub d_esc: T,
    pub d_evi: T,
    pub d_fac: T,
    pub composite: T,
    pub ambiguous: bool,
    pub per_model_contribution: BTreeMap<String, T>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierPartition {
    pub low: Vec<String>,
    pub medium: Vec<String>,
    pub high: Vec<String>,
}

impl TierPartition {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.low.len(), self.medium.len(), self.high.len())
    }

    pub fn tier_of(&self, window_id: &str) -> Option<Tier> {
        let has = |v: &[String]| v.iter().any(|w| w == window_id);
        if has(&self.low) {
            Some(Tier::Low)
        } else if has(&self.medium) {
            Some(Tier::Medium)
        } else if has(&self.high) {
            Some(Tier::High)
        } else {
            None
        }
    }

    /// Window ids from lowest to highest uncertainty.
    pub fn ordered(&self) -> impl Iterator<Item = &String> {
        self.low.iter().chain(&self.medium).chain(&self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        }
    }
}

/// Scenario rows (lowest uncertainty first) by model columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix<T> {
    pub models: Vec<String>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<T>>,
}

fn check_cohort(assessments: &[RiskAssessment]) -> Result<(), AmbiguityError> {
    let window_id = assessments
        .first()
        .map(|a| a.window_id.clone())
        .unwrap_or_default();
    if assessments.len() < 2 {
        return Err(AmbiguityError::InsufficientCohort {
            window_id,
            got: assessments.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for a in assessments {
        if a.window_id != window_id {
            return Err(AmbiguityError::MixedWindows(window_id, a.window_id.clone()));
        }
        if !seen.insert(a.model_id.as_str()) {
            return Err(AmbiguityError::DuplicateModel {
                window_id,
                model_id: a.model_id.clone(),
            });
        }
    }
    Ok(())
}

/// Whether any model departs from the others on level, escalation,
/// evidence count or dominant factor.
pub fn detect_ambiguity(assessments: &[RiskAssessment], tau: u8) -> Result<bool, AmbiguityError> {
    check_cohort(assessments)?;
    let first = &assessments[0];
    Ok(assessments.iter().any(|a| {
        a.overall_risk_level != first.overall_risk_level
            || a.is_escalated(tau) != first.is_escalated(tau)
            || a.distinct_evidence() != first.distinct_evidence()
            || a.dominant_factor() != first.dominant_factor()
    }))
}

fn spread(values: &[usize]) -> usize {
    values.iter().max().unwrap() - values.iter().min().unwrap()
}

/// Most frequent dominant factor and its count; ties go to the smallest
/// value, with "no factor" ordered first.
fn modal_factor(factors: &[Option<u8>]) -> (Option<u8>, usize) {
    let mut counts: BTreeMap<Option<u8>, usize> = BTreeMap::new();
    for f in factors {
        *counts.entry(*f).or_insert(0) += 1;
    }
    let mut best = (None, 0);
    for (f, c) in counts {
        if c > best.1 {
            best = (f, c);
        }
    }
    best
}

pub fn composite_uncertainty<T: Scalar>(
    assessments: &[RiskAssessment],
    tau: u8,
    weights: &Weights<T>,
) -> Result<ScenarioDisagreement<T>, AmbiguityError> {
    check_cohort(assessments)?;
    weights.validate()?;
    let m = assessments.len();
    let sev_scale = T::from_count(MAX_RISK_LEVEL as usize);
    let evi_scale = T::from_count(MAX_EVIDENCE);

    let levels: Vec<usize> = assessments
        .iter()
        .map(|a| a.overall_risk_level as usize)
        .collect();
    let escalated: Vec<bool> = assessments.iter().map(|a| a.is_escalated(tau)).collect();
    let evidence: Vec<usize> = assessments
        .iter()
        .map(RiskAssessment::distinct_evidence)
        .collect();
    let factors: Vec<Option<u8>> = assessments
        .iter()
        .map(RiskAssessment::dominant_factor)
        .collect();

    let d_sev = T::from_count(spread(&levels)) / sev_scale;
    let n_escalated = escalated.iter().filter(|&&e| e).count();
    let d_esc = if n_escalated > 0 && n_escalated < m {
        T::one()
    } else {
        T::zero()
    };
    let d_evi = T::from_count(spread(&evidence)) / evi_scale;
    let (mode, f_mode) = modal_factor(&factors);
    let d_fac = if factors.iter().all(Option::is_none) {
        T::zero()
    } else {
        T::ratio(m - f_mode, m - 1)
    };
    let dims = [d_sev, d_esc, d_evi, d_fac];
    let composite = weights.combine(dims);

    let level_median =
        median(&levels.iter().map(|&l| T::from_count(l)).collect::<Vec<_>>()).unwrap();
    let evidence_median = median(
        &evidence
            .iter()
            .map(|&e| T::from_count(e))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let majority_escalated = 2 * n_escalated > m;
    let per_model_contribution = assessments
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let dev = [
                T::from_count(levels[i]).abs_diff(level_median) / sev_scale,
                if escalated[i] != majority_escalated {
                    T::one()
                } else {
                    T::zero()
                },
                T::from_count(evidence[i]).abs_diff(evidence_median) / evi_scale,
                if d_fac > T::zero() && factors[i] != mode {
                    T::one()
                } else {
                    T::zero()
                },
            ];
            let masked = std::array::from_fn(|k| {
                if dims[k] > T::zero() {
                    dev[k]
                } else {
                    T::zero()
                }
            });
            (a.model_id.clone(), weights.combine(masked))
        })
        .collect();

    Ok(ScenarioDisagreement {
        window_id: assessments[0].window_id.clone(),
        d_sev,
        d_esc,
        d_evi,
        d_fac,
        composite,
        ambiguous: composite > T::zero(),
        per_model_contribution,
    })
}

fn ascending<T: Scalar>(
    disagreements: &[ScenarioDisagreement<T>],
) -> Vec<&ScenarioDisagreement<T>> {
    let mut sorted: Vec<_> = disagreements.iter().collect();
    sorted.sort_by(|a, b| {
        a.composite
            .partial_cmp(&b.composite)
            .expect("comparable composites")
            .then_with(|| a.window_id.cmp(&b.window_id))
    });
    sorted
}

/// Tertile split by ascending composite, outer tiers of size `⌊N/3⌋`.
pub fn tier_partition<T: Scalar>(disagreements: &[ScenarioDisagreement<T>]) -> TierPartition {
    let sorted = ascending(disagreements);
    let n = sorted.len();
    let outer = n / 3;
    let ids =
        |range: std::ops::Range<usize>| sorted[range].iter().map(|d| d.window_id.clone()).collect();
    TierPartition {
        low: ids(0..outer),
        medium: ids(outer..n - outer),
        high: ids(n - outer..n),
    }
}

pub fn heatmap_matrix<T: Scalar>(disagreements: &[ScenarioDisagreement<T>]) -> HeatmapMatrix<T> {
    let models: Vec<String> = disagreements
        .iter()
        .flat_map(|d| d.per_model_contribution.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sorted = ascending(disagreements);
    HeatmapMatrix {
        rows: sorted.iter().map(|d| d.window_id.clone()).collect(),
        cells: sorted
            .iter()
            .map(|d| {
                models
                    .iter()
                    .map(|m| {
                        d.per_model_contribution
                            .get(m)
                            .copied()
                            .unwrap_or_else(T::zero)
                    })
                    .collect()
            })
            .collect(),
        models,
    }
}

/// Groups accepted assessments by window and scores every window in which
/// all `models` have an accepted assessment. Other windows are returned
/// separately, unscored.
pub fn score_windows<T: Scalar>(
    assessments: &[RiskAssessment],
    models: &BTreeSet<String>,
    tau: u8,
    weights: &Weights<T>,
) -> Result<(Vec<ScenarioDisagreement<T>>, Vec<String>), AmbiguityError> {
    let mut by_window: BTreeMap<&str, Vec<RiskAssessment>> = BTreeMap::new();
    for a in assessments {
        by_window
            .entry(a.window_id.as_str())
            .or_default()
            .push(a.clone());
    }
    let mut scored = Vec::new();
    let mut excluded = Vec::new();
    for (window_id, mut group) in by_window {
        group.sort_by(|a, b| a.model_id.cmp(&b.model_id));
        let present: BTreeSet<String> = group.iter().map(|a| a.model_id.clone()).collect();
        if &present == models {
            scored.push(composite_uncertainty(&group, tau, weights)?);
        } else {
            excluded.push(window_id.to_string());
        }
    }
    Ok((scored, excluded))
}
