//! Prompt rendering.
//!
//! Every prompt is the constraint prefix, byte for byte, followed by the
//! template body with its placeholders filled from the window and the risk
//! code tables. Number formatting is fixed-precision and locale-free so the
//! same window always renders to the same bytes.

use crate::digest::sha256_hex;
use crate::scene::SceneState;
use crate::schema::{
    EVIDENCE_SIGNALS, IMAGE_EVIDENCE, RISK_LEVELS, RISK_TYPES, SCHEMA_VERSION, UNCERTAINTY_LEVELS,
};
use crate::window::ScenarioWindow;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Global constraint prefix shared by all prompts.
pub const CONSTRAINT_PREFIX: &str = "\
You are an expert in urban traffic risk assessment.

Using ONLY the information explicitly provided in the input
(structured CAN per second, YOLO detections including dist_m and
lane_rel, basic context, and IF PRESENT any provided images).

IMPORTANT:
- Output MUST be valid JSON only. No markdown. No extra text.
- Use ONLY the numeric codes provided (do not output strings).
- Do NOT invent missing data.

";

/// Body of the standard template, kept under `prompts/` in the repository.
pub const FIXED_STANDARD_TEMPLATE: &str = include_str!("../../../prompts/fixed_standard.txt");

pub const PLACEHOLDERS: [&str; 7] = [
    "schema",
    "window",
    "output_format",
    "t0",
    "t_from",
    "t_to",
    "seconds",
];
const MISSING_PLACEHOLDER: &str = "missing";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown placeholder `{{{{{0}}}}}`")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("unknown prompt spec `{0}`")]
    UnknownSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    FixedStandard,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub template_id: TemplateId,
    pub template_body: String,
    pub include_images: bool,
    pub prompt_hash: String,
}

pub fn prompt_hash(template_body: &str) -> String {
    let mut material =
        String::with_capacity(CONSTRAINT_PREFIX.len() + template_body.len() + SCHEMA_VERSION.len());
    material.push_str(CONSTRAINT_PREFIX);
    material.push_str(template_body);
    material.push_str(SCHEMA_VERSION);
    sha256_hex(material.as_bytes())
}

impl PromptSpec {
    pub fn fixed_standard() -> Self {
        Self {
            template_id: TemplateId::FixedStandard,
            template_body: FIXED_STANDARD_TEMPLATE.to_string(),
            include_images: false,
            prompt_hash: prompt_hash(FIXED_STANDARD_TEMPLATE),
        }
    }

    /// A custom template; placeholders are checked up front.
    pub fn custom(template_body: impl Into<String>) -> Result<Self, TemplateError> {
        let template_body = template_body.into();
        tokenize(&template_body)?;
        Ok(Self {
            template_id: TemplateId::Custom,
            prompt_hash: prompt_hash(&template_body),
            template_body,
            include_images: false,
        })
    }

    pub fn with_images(mut self, include_images: bool) -> Self {
        self.include_images = include_images;
        self
    }

    /// Resolves a spec by name. Only the standard template is built in.
    pub fn resolve(name: &str) -> Result<Self, TemplateError> {
        match name {
            "fixed_standard" => Ok(Self::fixed_standard()),
            "fixed_standard+images" => Ok(Self::fixed_standard().with_images(true)),
            other => Err(TemplateError::UnknownSpec(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub attachments: Vec<String>,
    pub window_id: String,
    pub prompt_hash: String,
}

enum Token<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn tokenize(body: &str) -> Result<Vec<Token<'_>>, TemplateError> {
    let mut tokens = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        if start > 0 {
            tokens.push(Token::Text(&rest[..start]));
        }
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or(TemplateError::Unterminated(offset + start))?;
        let name = after[..end].trim();
        if !PLACEHOLDERS.contains(&name) && name != MISSING_PLACEHOLDER {
            return Err(TemplateError::UnknownPlaceholder(name.to_string()));
        }
        tokens.push(Token::Placeholder(name));
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    if !rest.is_empty() {
        tokens.push(Token::Text(rest));
    }
    Ok(tokens)
}

/// Fixed-precision formatting that never prints a negative zero.
fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Code tables, listing image evidence as available only when images are attached.
pub fn render_schema(images_available: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "RISK CODES ({SCHEMA_VERSION})");
    s.push_str("\nOverall Risk Severity (overall_risk_level):\n");
    for (c, n) in RISK_LEVELS {
        let _ = writeln!(s, "{c} {n}");
    }
    s.push_str("\nRisk Occurrence Indicator (window_has_risk):\n");
    s.push_str("0 No risk identified (overall_risk_level = 0)\n");
    s.push_str("1 Risk identified (overall_risk_level >= 1)\n");
    s.push_str("\nEvidence Attribution Signals (evidence_signals):\n");
    for (c, n) in EVIDENCE_SIGNALS {
        let _ = writeln!(s, "{c} {n}");
    }
    let available: Vec<String> = EVIDENCE_SIGNALS
        .iter()
        .map(|(c, _)| *c)
        .filter(|c| images_available || *c != IMAGE_EVIDENCE)
        .map(|c| c.to_string())
        .collect();
    let _ = writeln!(s, "Available evidence signals: {}", available.join(","));
    s.push_str("\nRisk Category Types (risk_types):\n");
    for (c, n) in RISK_TYPES {
        let _ = writeln!(s, "{c} {n}");
    }
    s.push_str("\nUncertainty (uncertainty):\n");
    for (c, n) in UNCERTAINTY_LEVELS {
        let _ = writeln!(s, "{c} {n}");
    }
    s
}

pub fn render_output_format() -> String {
    "\
OUTPUT FORMAT (one JSON object with exactly these fields):
{\"window_has_risk\":0|1,\"overall_risk_level\":0-6,\"risk_types\":[...dominant first...],\"evidence_signals\":[...priority order...],\"uncertainty\":0-3}
- risk_types: risk category codes, dominant factor first, no duplicates; may be empty only when overall_risk_level <= 1.
- evidence_signals: evidence codes in priority order, no duplicates.
- window_has_risk: 1 if and only if overall_risk_level >= 1.
"
    .to_string()
}

/// Serializes one second: t, ego, objects (by track id), road, env.
pub fn serialize_window_block(state: &SceneState) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[t={}]", state.t);
    let e = &state.ego;
    let _ = writeln!(
        s,
        "ego: speed_mps={} steering_deg={} brake={} accel_mps2={}",
        fixed(e.speed_mps, 1),
        fixed(e.steering_deg, 1),
        fixed(e.brake, 2),
        fixed(e.accel_mps2, 1)
    );
    if state.objects.is_empty() {
        s.push_str("objects: none\n");
    } else {
        let mut objects: Vec<_> = state.objects.iter().collect();
        objects.sort_by_key(|o| o.track_id);
        s.push_str("objects:\n");
        for o in objects {
            let _ = writeln!(
                s,
                "- track_id={} class={} dist_m={} lane_rel={} conf={}",
                o.track_id,
                o.class_code,
                fixed(o.dist_m, 1),
                o.lane_rel,
                fixed(o.confidence, 2)
            );
        }
    }
    let r = &state.road;
    let _ = writeln!(
        s,
        "road: type={} lanes={} sidewalk={}",
        r.road_type.as_str(),
        r.lane_count,
        if r.sidewalk_present { "yes" } else { "no" }
    );
    let _ = writeln!(
        s,
        "env: weather={} illumination={}",
        state.environment.weather.as_str(),
        state.environment.illumination.as_str()
    );
    s
}

pub fn render_prompt(
    window: &ScenarioWindow,
    spec: &PromptSpec,
) -> Result<RenderedPrompt, TemplateError> {
    let attach = spec.include_images && !window.image_refs.is_empty();
    let mut window_text = String::new();
    let mut image_index = 0;
    for (i, state) in window.states.iter().enumerate() {
        if i > 0 {
            window_text.push('\n');
        }
        window_text.push_str(&serialize_window_block(state));
        if attach && state.image_ref.is_some() {
            image_index += 1;
            let _ = writeln!(window_text, "image: attachment {image_index}");
        }
    }
    let missing = if window.missing_seconds.is_empty() {
        "none".to_string()
    } else {
        window
            .missing_seconds
            .iter()
            .map(i64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };

    let mut text = String::from(CONSTRAINT_PREFIX);
    for token in tokenize(&spec.template_body)? {
        match token {
            Token::Text(t) => text.push_str(t),
            Token::Placeholder(name) => match name {
                "schema" => text.push_str(&render_schema(attach)),
                "window" => text.push_str(window_text.trim_end()),
                "output_format" => text.push_str(render_output_format().trim_end()),
                "t0" => text.push_str(&window.anchor.t0.to_string()),
                "t_from" => text.push_str(&window.t_from().to_string()),
                "t_to" => text.push_str(&window.t_to().to_string()),
                "seconds" => text.push_str(&window.span_seconds().to_string()),
                MISSING_PLACEHOLDER => text.push_str(&missing),
                other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
            },
        }
    }
    Ok(RenderedPrompt {
        text,
        attachments: if attach {
            window.image_refs.clone()
        } else {
            Vec::new()
        },
        window_id: window.window_id.clone(),
        prompt_hash: spec.prompt_hash.clone(),
    })
}
