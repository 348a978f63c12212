//! The closed numeric risk-code schema.

/// Version tag embedded in every prompt and run log.
pub const SCHEMA_VERSION: &str = "risk-codes/1";

pub const MAX_RISK_LEVEL: u8 = 6;
pub const MAX_UNCERTAINTY: u8 = 3;

pub const RISK_LEVELS: [(u8, &str); 7] = [
    (0, "Not identified"),
    (1, "Safe mode"),
    (2, "Low"),
    (3, "Moderate"),
    (4, "Elevated"),
    (5, "High"),
    (6, "Critical"),
];

pub const EVIDENCE_SIGNALS: [(u8, &str); 8] = [
    (1, "Object presence"),
    (2, "Object distance"),
    (3, "Object-lane relation"),
    (4, "Speed"),
    (5, "Steering"),
    (6, "Braking"),
    (7, "Road/environment"),
    (8, "Image input"),
];

pub const IMAGE_EVIDENCE: u8 = 8;

pub const RISK_TYPES: [(u8, &str); 9] = [
    (2, "Pedestrian"),
    (3, "Cyclist"),
    (4, "Rear-end"),
    (5, "Lateral conflict"),
    (6, "Intersection"),
    (7, "Speed"),
    (8, "Visibility"),
    (9, "Infrastructure"),
    (10, "Traffic density"),
];

pub const PEDESTRIAN: u8 = 2;
pub const CYCLIST: u8 = 3;
pub const REAR_END: u8 = 4;
pub const LATERAL_CONFLICT: u8 = 5;
pub const INTERSECTION: u8 = 6;
pub const SPEED: u8 = 7;
pub const VISIBILITY: u8 = 8;
pub const INFRASTRUCTURE: u8 = 9;
pub const TRAFFIC_DENSITY: u8 = 10;

/// Vulnerable road user categories.
pub const VRU_TYPES: [u8; 2] = [PEDESTRIAN, CYCLIST];

pub const UNCERTAINTY_LEVELS: [(u8, &str); 4] =
    [(0, "None"), (1, "Low"), (2, "Medium"), (3, "High")];

pub fn is_risk_level(code: i64) -> bool {
    (0..=i64::from(MAX_RISK_LEVEL)).contains(&code)
}

pub fn is_evidence_signal(code: i64) -> bool {
    EVIDENCE_SIGNALS.iter().any(|(c, _)| i64::from(*c) == code)
}

pub fn is_risk_type(code: i64) -> bool {
    RISK_TYPES.iter().any(|(c, _)| i64::from(*c) == code)
}

pub fn is_uncertainty(code: i64) -> bool {
    (0..=i64::from(MAX_UNCERTAINTY)).contains(&code)
}

pub fn risk_type_name(code: u8) -> Option<&'static str> {
    RISK_TYPES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}
