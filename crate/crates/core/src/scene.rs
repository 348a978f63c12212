//! Normalized 1 Hz scene states.
//!
//! A [`SceneState`] is one second of one acquisition: ego dynamics, the
//! tracked objects around the vehicle and the road/environment context. The
//! serde representation of these types *is* the JSONL ingest format, so the
//! field renames below are part of the external contract.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Closed set of lane relation codes accepted for `lane_rel`.
pub const LANE_REL_CODES: [i8; 6] = [-2, -1, 0, 1, 2, 9];

/// Lane relation code for objects off the road (sidewalk, verge).
pub const LANE_REL_OFF_ROAD: i8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Person,
    Cyclist,
    Car,
    Truck,
    Bus,
    Motorcycle,
    Other,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 7] = [
        ObjectClass::Person,
        ObjectClass::Cyclist,
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Motorcycle,
        ObjectClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Person => "person",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Bus => "bus",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Other => "other",
        }
    }

    /// Motorized road users that can be involved in vehicle-vehicle conflicts.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            ObjectClass::Car | ObjectClass::Truck | ObjectClass::Bus | ObjectClass::Motorcycle
        )
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadType {
    Residential,
    Arterial,
    Highway,
    Intersection,
    Other,
}

impl RoadType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::Residential => "residential",
            RoadType::Arterial => "arterial",
            RoadType::Highway => "highway",
            RoadType::Intersection => "intersection",
            RoadType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Clear,
    Rain,
    Fog,
    Overcast,
    Other,
}

impl Weather {
    pub fn as_str(self) -> &'static str {
        match self {
            Weather::Clear => "clear",
            Weather::Rain => "rain",
            Weather::Fog => "fog",
            Weather::Overcast => "overcast",
            Weather::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Day,
    Dusk,
    Night,
}

impl Illumination {
    pub fn as_str(self) -> &'static str {
        match self {
            Illumination::Day => "day",
            Illumination::Dusk => "dusk",
            Illumination::Night => "night",
        }
    }
}

/// Ego vehicle dynamics for one second. Steering is positive to the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoDynamics {
    pub speed_mps: f64,
    pub steering_deg: f64,
    pub brake: f64,
    pub accel_mps2: f64,
}

/// An object with a persistent track identity.
///
/// `dist_m` is measured from the front bumper center of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedObject {
    pub track_id: u32,
    #[serde(rename = "class")]
    pub class_code: ObjectClass,
    pub dist_m: f64,
    pub lane_rel: i8,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadContext {
    #[serde(rename = "type")]
    pub road_type: RoadType,
    #[serde(rename = "lanes")]
    pub lane_count: u8,
    #[serde(rename = "sidewalk")]
    pub sidewalk_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentContext {
    pub weather: Weather,
    pub illumination: Illumination,
}

/// One normalized second of an acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneState {
    #[serde(rename = "acq")]
    pub acquisition_id: String,
    pub t: i64,
    pub ego: EgoDynamics,
    pub objects: Vec<TrackedObject>,
    pub road: RoadContext,
    #[serde(rename = "env")]
    pub environment: EnvironmentContext,
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// A value constraint violated by a decoded scene state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn check_finite(path: &str, v: f64) -> Result<(), FieldViolation> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(FieldViolation {
            path: path.to_string(),
            message: format!("{v} is not a finite number"),
        })
    }
}

fn check_unit(path: &str, v: f64) -> Result<(), FieldViolation> {
    check_finite(path, v)?;
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(FieldViolation {
            path: path.to_string(),
            message: format!("{v} outside [0, 1]"),
        })
    }
}

fn check_non_negative(path: &str, v: f64) -> Result<(), FieldViolation> {
    check_finite(path, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(FieldViolation {
            path: path.to_string(),
            message: format!("{v} is negative"),
        })
    }
}

impl SceneState {
    /// Checks the value-level invariants that the type system does not carry.
    ///
    /// Objects must already be in canonical (ascending `track_id`) order; use
    /// [`SceneState::normalize`] first when reading unordered input.
    pub fn validate(&self) -> Result<(), FieldViolation> {
        if self.acquisition_id.is_empty() {
            return Err(FieldViolation {
                path: "acq".into(),
                message: "acquisition id must not be empty".into(),
            });
        }
        if self.t < 0 {
            return Err(FieldViolation {
                path: "t".into(),
                message: format!("{} is negative", self.t),
            });
        }
        check_non_negative("ego.speed_mps", self.ego.speed_mps)?;
        check_finite("ego.steering_deg", self.ego.steering_deg)?;
        check_unit("ego.brake", self.ego.brake)?;
        check_finite("ego.accel_mps2", self.ego.accel_mps2)?;
        let mut prev: Option<u32> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            check_non_negative(&format!("objects[{i}].dist_m"), obj.dist_m)?;
            if !LANE_REL_CODES.contains(&obj.lane_rel) {
                return Err(FieldViolation {
                    path: format!("objects[{i}].lane_rel"),
                    message: format!(
                        "{} not in closed code set {{-2, -1, 0, 1, 2, 9}}",
                        obj.lane_rel
                    ),
                });
            }
            check_unit(&format!("objects[{i}].conf"), obj.confidence)?;
            if let Some(p) = prev {
                if obj.track_id <= p {
                    return Err(FieldViolation {
                        path: format!("objects[{i}].track_id"),
                        message: format!("track id {} duplicated or out of order", obj.track_id),
                    });
                }
            }
            prev = Some(obj.track_id);
        }
        if self.road.lane_count == 0 {
            return Err(FieldViolation {
                path: "road.lanes".into(),
                message: "lane count must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Sorts objects by track id.
    pub fn normalize(&mut self) {
        self.objects.sort_by_key(|o| o.track_id);
    }

    pub fn min_distance(&self, class: ObjectClass) -> Option<f64> {
        self.objects
            .iter()
            .filter(|o| o.class_code == class)
            .map(|o| o.dist_m)
            .reduce(f64::min)
    }

    pub fn has_class(&self, class: ObjectClass) -> bool {
        self.objects.iter().any(|o| o.class_code == class)
    }
}

/// A raw detection in the ego frame: `x` forward, `y` lateral (positive left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub position: [f64; 2],
    pub class_code: ObjectClass,
    pub confidence: f64,
}

impl Detection {
    pub fn new(x: f64, y: f64, class_code: ObjectClass, confidence: f64) -> Self {
        Self {
            position: [x, y],
            class_code,
            confidence,
        }
    }

    pub fn distance_to(&self, other: &Detection) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        dx.hypot(dy)
    }

    pub fn range(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
    }
}

/// Nominal lane width used to derive `lane_rel` from a lateral offset.
pub const LANE_WIDTH_M: f64 = 3.5;

/// Maps a lateral offset (positive left) to a lane relation code.
///
/// Offsets beyond two lanes on either side are reported as off-road.
pub fn lane_rel_from_offset(y: f64) -> i8 {
    let lanes = (-y / LANE_WIDTH_M).round();
    if lanes.abs() > 2.0 {
        LANE_REL_OFF_ROAD
    } else {
        lanes as i8
    }
}
