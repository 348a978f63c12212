//! Seeded synthetic drive generator.
//!
//! Produces ingest-format JSONL for desk-scale experiments. Each acquisition
//! simulates an ego vehicle with a bounded random-walk speed profile and a
//! population of pedestrians, cyclists and vehicles that spawn ahead and move
//! relative to the ego frame. Output depends only on `(seed, spec)`: the RNG
//! is ChaCha8 and all emitted reals are rounded before serialization.

use crate::scene::{
    lane_rel_from_offset, EgoDynamics, EnvironmentContext, Illumination, ObjectClass, RoadContext,
    RoadType, SceneState, TrackedObject, Weather, LANE_REL_OFF_ROAD, LANE_WIDTH_M,
};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest acquisition that can host a window of three seconds either side.
pub const MIN_DURATION_S: u32 = 7;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("duration {0} s is below the minimum of {MIN_DURATION_S} s")]
    DurationTooShort(u32),
    #[error("invalid synth spec field `{field}`: {message}")]
    InvalidField {
        field: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub acquisitions: usize,
    pub duration_s: u32,
    #[serde(default)]
    pub start_t: i64,
    /// Every acquisition has at least one second with a person this close.
    #[serde(default = "default_near_person_m")]
    pub near_person_m: f64,
    /// Per-second spawn probability for pedestrians.
    #[serde(default = "default_person_rate")]
    pub person_rate: f64,
    #[serde(default = "default_cyclist_rate")]
    pub cyclist_rate: f64,
    #[serde(default = "default_vehicle_rate")]
    pub vehicle_rate: f64,
    #[serde(default = "default_max_speed")]
    pub max_speed_mps: f64,
    #[serde(default = "default_road_types")]
    pub road_types: Vec<(RoadType, f64)>,
    #[serde(default = "default_weather")]
    pub weather: Vec<(Weather, f64)>,
    #[serde(default = "default_illumination")]
    pub illumination: Vec<(Illumination, f64)>,
    /// When set, every state references `<prefix>/<acq>/<t>.jpg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_prefix: Option<String>,
}

fn default_near_person_m() -> f64 {
    10.0
}
fn default_person_rate() -> f64 {
    0.12
}
fn default_cyclist_rate() -> f64 {
    0.04
}
fn default_vehicle_rate() -> f64 {
    0.15
}
fn default_max_speed() -> f64 {
    16.0
}
fn default_road_types() -> Vec<(RoadType, f64)> {
    vec![
        (RoadType::Residential, 0.5),
        (RoadType::Arterial, 0.3),
        (RoadType::Intersection, 0.2),
    ]
}
fn default_weather() -> Vec<(Weather, f64)> {
    vec![
        (Weather::Clear, 0.6),
        (Weather::Overcast, 0.2),
        (Weather::Rain, 0.15),
        (Weather::Fog, 0.05),
    ]
}
fn default_illumination() -> Vec<(Illumination, f64)> {
    vec![
        (Illumination::Day, 0.7),
        (Illumination::Dusk, 0.15),
        (Illumination::Night, 0.15),
    ]
}

impl SynthSpec {
    pub fn new(acquisitions: usize, duration_s: u32) -> Self {
        Self {
            acquisitions,
            duration_s,
            start_t: 0,
            near_person_m: default_near_person_m(),
            person_rate: default_person_rate(),
            cyclist_rate: default_cyclist_rate(),
            vehicle_rate: default_vehicle_rate(),
            max_speed_mps: default_max_speed(),
            road_types: default_road_types(),
            weather: default_weather(),
            illumination: default_illumination(),
            image_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_s < MIN_DURATION_S {
            return Err(SynthError::DurationTooShort(self.duration_s));
        }
        let invalid = |field, message: &str| SynthError::InvalidField {
            field,
            message: message.to_string(),
        };
        if self.start_t < 0 {
            return Err(invalid("start_t", "must be non-negative"));
        }
        if !(self.near_person_m.is_finite() && self.near_person_m > 0.0) {
            return Err(invalid("near_person_m", "must be positive"));
        }
        if !(self.max_speed_mps.is_finite() && self.max_speed_mps > 0.0) {
            return Err(invalid("max_speed_mps", "must be positive"));
        }
        for (field, rate) in [
            ("person_rate", self.person_rate),
            ("cyclist_rate", self.cyclist_rate),
            ("vehicle_rate", self.vehicle_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(invalid(field, "must lie in [0, 1]"));
            }
        }
        check_weights("road_types", &self.road_types)?;
        check_weights("weather", &self.weather)?;
        check_weights("illumination", &self.illumination)?;
        Ok(())
    }
}

fn check_weights<T>(field: &'static str, weights: &[(T, f64)]) -> Result<(), SynthError> {
    let ok = !weights.is_empty()
        && weights.iter().all(|(_, w)| w.is_finite() && *w >= 0.0)
        && weights.iter().map(|(_, w)| w).sum::<f64>() > 0.0;
    if ok {
        Ok(())
    } else {
        Err(SynthError::InvalidField {
            field,
            message: "weights must be non-negative with a positive sum".into(),
        })
    }
}

fn pick<T: Copy, R: Rng>(rng: &mut R, weights: &[(T, f64)]) -> T {
    let dist = WeightedIndex::new(weights.iter().map(|(_, w)| *w)).expect("validated weights");
    weights[dist.sample(rng)].0
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (v * scale).round() / scale;
    // avoid emitting -0.0
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone)]
struct Actor {
    id: u32,
    class: ObjectClass,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    confidence: f64,
}

/// Generates scene states for every acquisition, in ascending `(acq, t)` order.
pub fn synthesize_states(seed: u64, spec: &SynthSpec) -> Result<Vec<SceneState>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.acquisitions * spec.duration_s as usize);
    for index in 0..spec.acquisitions {
        let acquisition_id = format!("syn-{seed}-{index:03}");
        out.extend(synthesize_acquisition(&mut rng, spec, &acquisition_id));
    }
    Ok(out)
}

/// Generates the ingest JSONL stream, one line per state.
pub fn synthesize(seed: u64, spec: &SynthSpec) -> Result<String, SynthError> {
    let states = synthesize_states(seed, spec)?;
    let mut text = String::new();
    for state in &states {
        text.push_str(&serde_json::to_string(state).expect("scene state serializes"));
        text.push('\n');
    }
    Ok(text)
}

fn synthesize_acquisition(rng: &mut ChaCha8Rng, spec: &SynthSpec, acq: &str) -> Vec<SceneState> {
    let road_type = pick(rng, &spec.road_types);
    let lane_count: u8 = match road_type {
        RoadType::Residential => rng.random_range(1..=2),
        RoadType::Highway => rng.random_range(3..=4),
        _ => rng.random_range(2..=3),
    };
    let sidewalk_present = road_type != RoadType::Highway && rng.random_bool(0.85);
    let road = RoadContext {
        road_type,
        lane_count,
        sidewalk_present,
    };
    let environment = EnvironmentContext {
        weather: pick(rng, &spec.weather),
        illumination: pick(rng, &spec.illumination),
    };
    let half_width = f64::from(lane_count) * LANE_WIDTH_M / 2.0;

    let mut speed: f64 = rng.random_range(0.3..0.8) * spec.max_speed_mps;
    let mut actors: Vec<Actor> = Vec::new();
    let mut next_id: u32 = 0;
    let mut states = Vec::with_capacity(spec.duration_s as usize);

    for step in 0..spec.duration_s {
        let t = spec.start_t + i64::from(step);

        let accel: f64 = rng.random_range(-1.5..1.5);
        speed = (speed + accel).clamp(0.0, spec.max_speed_mps);
        let brake = if accel < -0.5 {
            (-accel / 3.0).min(1.0)
        } else {
            0.0
        };
        let steering: f64 = rng.random_range(-4.0..4.0);

        for a in &mut actors {
            a.x += a.vx - speed;
            a.y += a.vy;
        }
        actors.retain(|a| a.x > -8.0 && a.x < 80.0 && a.y.abs() < 20.0);

        if rng.random_bool(spec.person_rate) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let crossing = rng.random_bool(0.3);
            actors.push(Actor {
                id: next_id,
                class: ObjectClass::Person,
                x: rng.random_range(6.0..35.0),
                y: side * (half_width + rng.random_range(0.8..3.0)),
                vx: rng.random_range(-0.5..0.5),
                vy: if crossing {
                    -side * rng.random_range(0.8..1.6)
                } else {
                    0.0
                },
                confidence: rng.random_range(0.55..0.98),
            });
            next_id += 1;
        }
        if rng.random_bool(spec.cyclist_rate) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            actors.push(Actor {
                id: next_id,
                class: ObjectClass::Cyclist,
                x: rng.random_range(8.0..40.0),
                y: side * (half_width - 0.6),
                vx: rng.random_range(2.0..6.0),
                vy: 0.0,
                confidence: rng.random_range(0.5..0.95),
            });
            next_id += 1;
        }
        if rng.random_bool(spec.vehicle_rate) {
            let lane: i32 = rng.random_range(-1..=1).min(i32::from(lane_count) - 1);
            let class = match rng.random_range(0..10) {
                0 => ObjectClass::Truck,
                1 => ObjectClass::Bus,
                2 => ObjectClass::Motorcycle,
                _ => ObjectClass::Car,
            };
            actors.push(Actor {
                id: next_id,
                class,
                x: rng.random_range(12.0..60.0),
                y: -f64::from(lane) * LANE_WIDTH_M,
                vx: (speed + rng.random_range(-3.0..3.0)).max(0.0),
                vy: 0.0,
                confidence: rng.random_range(0.6..0.99),
            });
            next_id += 1;
        }

        let mut objects: Vec<TrackedObject> = actors
            .iter()
            .filter(|a| a.x > -2.0)
            .map(|a| {
                let lane_rel = if a.y.abs() > half_width + 0.5 {
                    LANE_REL_OFF_ROAD
                } else {
                    lane_rel_from_offset(a.y)
                };
                TrackedObject {
                    track_id: a.id,
                    class_code: a.class,
                    dist_m: round_to(a.x.hypot(a.y), 1),
                    lane_rel,
                    confidence: round_to(a.confidence, 2),
                }
            })
            .filter(|o| o.dist_m <= 60.0)
            .collect();
        objects.sort_by_key(|o| o.track_id);

        states.push(SceneState {
            acquisition_id: acq.to_string(),
            t,
            ego: EgoDynamics {
                speed_mps: round_to(speed, 2),
                steering_deg: round_to(steering, 1),
                brake: round_to(brake, 2),
                accel_mps2: round_to(accel, 2),
            },
            objects,
            road,
            environment,
            image_ref: spec
                .image_prefix
                .as_ref()
                .map(|p| format!("{p}/{acq}/{t}.jpg")),
        });
    }

    ensure_near_person(rng, spec, &mut states, next_id);
    states
}

/// Injects a short close pedestrian pass when the random draw produced none.
fn ensure_near_person(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    states: &mut [SceneState],
    track_id: u32,
) {
    let near = states.iter().any(|s| {
        s.objects
            .iter()
            .any(|o| o.class_code == ObjectClass::Person && o.dist_m <= spec.near_person_m)
    });
    if near {
        return;
    }
    let centre = rng.random_range(3..states.len() - 3);
    let closest = spec.near_person_m * rng.random_range(0.3..0.9);
    for (offset, scale) in [(-1i64, 1.6), (0, 1.0), (1, 1.4)] {
        let idx = (centre as i64 + offset) as usize;
        let state = &mut states[idx];
        state.objects.push(TrackedObject {
            track_id,
            class_code: ObjectClass::Person,
            dist_m: round_to(closest * scale, 1).min(spec.near_person_m),
            lane_rel: LANE_REL_OFF_ROAD,
            confidence: 0.9,
        });
        state.objects.sort_by_key(|o| o.track_id);
    }
}
