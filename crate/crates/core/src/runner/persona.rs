//! Deterministic mock models.
//!
//! A persona is a small rule table that turns a window into a schema-valid
//! response. Personas stand in for remote models in tests and offline runs,
//! and differ only in how readily they escalate and what they cite.

use crate::parser::AssessmentPayload;
use crate::prompt::RenderedPrompt;
use crate::scene::{Illumination, ObjectClass, RoadType, Weather};
use crate::schema::{self, MAX_RISK_LEVEL, MAX_UNCERTAINTY};
use crate::window::ScenarioWindow;
use serde::{Deserialize, Serialize};

/// Speed above which the speed risk category applies (50 km/h).
pub const SPEED_RISK_MPS: f64 = 13.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boost {
    pub threshold: f64,
    pub delta: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaRules {
    pub base_level: u8,
    /// Applies when the closest person in the window is within `threshold` m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_near_boost: Option<Boost>,
    /// Applies when the peak ego speed reaches `threshold` m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_boost: Option<Boost>,
    pub dominant_factor_policy: Vec<u8>,
    pub evidence_policy: Vec<u8>,
    pub uncertainty_value: u8,
}

fn unique(codes: &[u8]) -> bool {
    codes
        .iter()
        .enumerate()
        .all(|(i, c)| !codes[..i].contains(c))
}

impl PersonaRules {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_level > MAX_RISK_LEVEL {
            return Err(format!(
                "base_level {} exceeds {MAX_RISK_LEVEL}",
                self.base_level
            ));
        }
        if self.uncertainty_value > MAX_UNCERTAINTY {
            return Err(format!(
                "uncertainty_value {} exceeds {MAX_UNCERTAINTY}",
                self.uncertainty_value
            ));
        }
        for boost in [self.person_near_boost, self.speed_boost]
            .into_iter()
            .flatten()
        {
            if !(boost.threshold.is_finite() && boost.threshold >= 0.0) {
                return Err(format!(
                    "boost threshold {} must be finite and non-negative",
                    boost.threshold
                ));
            }
        }
        if self.dominant_factor_policy.is_empty() {
            return Err("dominant_factor_policy must not be empty".into());
        }
        if !self
            .dominant_factor_policy
            .iter()
            .all(|c| schema::is_risk_type(i64::from(*c)))
            || !unique(&self.dominant_factor_policy)
        {
            return Err("dominant_factor_policy must hold distinct risk type codes".into());
        }
        if !self
            .evidence_policy
            .iter()
            .all(|c| schema::is_evidence_signal(i64::from(*c)))
            || !unique(&self.evidence_policy)
        {
            return Err("evidence_policy must hold distinct evidence codes".into());
        }
        Ok(())
    }

    /// Escalates readily and cites broad evidence.
    pub fn conservative() -> Self {
        Self {
            base_level: 3,
            person_near_boost: Some(Boost {
                threshold: 10.0,
                delta: 2,
            }),
            speed_boost: Some(Boost {
                threshold: 10.0,
                delta: 1,
            }),
            dominant_factor_policy: vec![2, 3, 7, 4, 5, 6, 8, 9, 10],
            evidence_policy: vec![2, 1, 3, 4, 6, 7],
            uncertainty_value: 1,
        }
    }

    pub fn moderate() -> Self {
        Self {
            base_level: 2,
            person_near_boost: Some(Boost {
                threshold: 5.0,
                delta: 2,
            }),
            speed_boost: Some(Boost {
                threshold: 12.0,
                delta: 1,
            }),
            dominant_factor_policy: vec![2, 3, 4, 5, 6, 7, 8, 9, 10],
            evidence_policy: vec![1, 2, 4],
            uncertainty_value: 2,
        }
    }

    /// Rarely escalates; attributes risk to context before road users.
    pub fn tolerant() -> Self {
        Self {
            base_level: 1,
            person_near_boost: Some(Boost {
                threshold: 3.0,
                delta: 1,
            }),
            speed_boost: None,
            dominant_factor_policy: vec![8, 10, 6, 2, 3, 4, 5, 7, 9],
            evidence_policy: vec![1, 2],
            uncertainty_value: 3,
        }
    }
}

/// Risk categories supported by the window content, ascending by code.
pub fn applicable_risk_types(window: &ScenarioWindow) -> Vec<u8> {
    let states = &window.states;
    let any_object = |pred: &dyn Fn(&crate::scene::TrackedObject) -> bool| {
        states.iter().any(|s| s.objects.iter().any(pred))
    };
    let mut codes = Vec::new();
    if any_object(&|o| o.class_code == ObjectClass::Person) {
        codes.push(schema::PEDESTRIAN);
    }
    if any_object(&|o| o.class_code == ObjectClass::Cyclist) {
        codes.push(schema::CYCLIST);
    }
    if any_object(&|o| o.class_code.is_vehicle() && o.lane_rel == 0 && o.dist_m <= 20.0) {
        codes.push(schema::REAR_END);
    }
    if any_object(&|o| o.class_code.is_vehicle() && o.lane_rel.abs() == 1 && o.dist_m <= 10.0) {
        codes.push(schema::LATERAL_CONFLICT);
    }
    if states
        .iter()
        .any(|s| s.road.road_type == RoadType::Intersection)
    {
        codes.push(schema::INTERSECTION);
    }
    if states.iter().any(|s| s.ego.speed_mps >= SPEED_RISK_MPS) {
        codes.push(schema::SPEED);
    }
    if states.iter().any(|s| {
        matches!(s.environment.weather, Weather::Rain | Weather::Fog)
            || matches!(
                s.environment.illumination,
                Illumination::Dusk | Illumination::Night
            )
    }) {
        codes.push(schema::VISIBILITY);
    }
    if states.iter().any(|s| !s.road.sidewalk_present) {
        codes.push(schema::INFRASTRUCTURE);
    }
    if states.iter().any(|s| {
        s.objects
            .iter()
            .filter(|o| o.class_code.is_vehicle())
            .count()
            >= 4
    }) {
        codes.push(schema::TRAFFIC_DENSITY);
    }
    codes
}

/// The payload a persona emits for a window.
pub fn persona_payload(window: &ScenarioWindow, rules: &PersonaRules) -> AssessmentPayload {
    let min_person = window
        .states
        .iter()
        .filter_map(|s| s.min_distance(ObjectClass::Person))
        .reduce(f64::min);
    let max_speed = window
        .states
        .iter()
        .map(|s| s.ego.speed_mps)
        .reduce(f64::max);

    let mut level = i32::from(rules.base_level);
    if let (Some(b), Some(d)) = (rules.person_near_boost, min_person) {
        if d <= b.threshold {
            level += i32::from(b.delta);
        }
    }
    if let (Some(b), Some(v)) = (rules.speed_boost, max_speed) {
        if v >= b.threshold {
            level += i32::from(b.delta);
        }
    }
    let level = level.clamp(0, i32::from(MAX_RISK_LEVEL)) as u8;

    let applicable = applicable_risk_types(window);
    let mut risk_types: Vec<u8> = if level == 0 {
        Vec::new()
    } else {
        rules
            .dominant_factor_policy
            .iter()
            .copied()
            .filter(|c| applicable.contains(c))
            .collect()
    };
    if level >= 2 && risk_types.is_empty() {
        risk_types.push(rules.dominant_factor_policy[0]);
    }

    AssessmentPayload {
        window_has_risk: u8::from(level >= 1),
        overall_risk_level: level,
        risk_types,
        evidence_signals: rules.evidence_policy.clone(),
        uncertainty: rules.uncertainty_value,
    }
}

/// Deterministic response text. The prompt is not inspected; personas
/// read the window directly.
pub fn mock_persona_respond(
    _prompt: &RenderedPrompt,
    window: &ScenarioWindow,
    rules: &PersonaRules,
) -> String {
    persona_payload(window, rules).to_json()
}

/// Whitespace-delimited token estimate used for mock usage accounting.
pub fn approximate_tokens(text: &str) -> u32 {
    let words = text.split_whitespace().count();
    let punct = text
        .chars()
        .filter(|c| matches!(c, '{' | '}' | '[' | ']' | ',' | ':'))
        .count();
    (words + punct) as u32
}
