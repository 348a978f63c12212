//! Structured scenario queries over the scene store.
//!
//! A query is a conjunction over the fields that are present; an object
//! filter holds when *some* object in the state satisfies all of its parts.
//! Execution is a pure linear scan, so identical `(store, query)` pairs give
//! identical hit lists.

use crate::digest::{canonical_json, sha256_hex};
use crate::scene::{Illumination, ObjectClass, RoadType, SceneState, Weather, LANE_REL_CODES};
use crate::store::SceneStore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("`{field}`: inverted range (min > max)")]
    InvertedRange { field: String },
    #[error("`{field}`: {message}")]
    InvalidValue { field: String, message: String },
}

impl QueryError {
    pub fn field(&self) -> &str {
        match self {
            QueryError::InvertedRange { field } | QueryError::InvalidValue { field, .. } => field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectFilter {
    #[serde(rename = "class")]
    pub class_code: ObjectClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dist_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_rel: Option<BTreeSet<i8>>,
}

impl ObjectFilter {
    pub fn class(class_code: ObjectClass) -> Self {
        Self {
            class_code,
            max_dist_m: None,
            lane_rel: None,
        }
    }

    pub fn within(mut self, max_dist_m: f64) -> Self {
        self.max_dist_m = Some(max_dist_m);
        self
    }

    pub fn holds(&self, state: &SceneState) -> bool {
        state.objects.iter().any(|o| {
            o.class_code == self.class_code
                && self.max_dist_m.is_none_or(|d| o.dist_m <= d)
                && self
                    .lane_rel
                    .as_ref()
                    .is_none_or(|set| set.contains(&o.lane_rel))
        })
    }
}

/// Constraint set over semantic, spatial, behavioral and temporal fields.
/// Every field is optional; the empty query matches every state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioQuery {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub object_filters: Vec<ObjectFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_speed_mps: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<BTreeSet<Weather>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illumination: Option<BTreeSet<Illumination>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_type: Option<BTreeSet<RoadType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisitions: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<[i64; 2]>,
}

fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

impl ScenarioQuery {
    /// Persons within `max_dist_m` of the ego vehicle.
    pub fn near_people(max_dist_m: f64) -> Self {
        Self {
            object_filters: vec![ObjectFilter::class(ObjectClass::Person).within(max_dist_m)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        for (i, f) in self.object_filters.iter().enumerate() {
            if let Some(d) = f.max_dist_m {
                if !d.is_finite() || d < 0.0 {
                    return Err(QueryError::InvalidValue {
                        field: format!("object_filters[{i}].max_dist_m"),
                        message: format!("{d} is not a non-negative finite distance"),
                    });
                }
            }
            if let Some(set) = &f.lane_rel {
                if let Some(bad) = set.iter().find(|c| !LANE_REL_CODES.contains(c)) {
                    return Err(QueryError::InvalidValue {
                        field: format!("object_filters[{i}].lane_rel"),
                        message: format!("{bad} not in closed code set {{-2, -1, 0, 1, 2, 9}}"),
                    });
                }
            }
        }
        if let Some([lo, hi]) = self.ego_speed_mps {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(QueryError::InvalidValue {
                    field: "ego_speed_mps".into(),
                    message: "bounds must be finite".into(),
                });
            }
            if lo > hi {
                return Err(QueryError::InvertedRange {
                    field: "ego_speed_mps".into(),
                });
            }
        }
        if let Some([lo, hi]) = self.time_range {
            if lo > hi {
                return Err(QueryError::InvertedRange {
                    field: "time_range".into(),
                });
            }
        }
        Ok(())
    }

    /// Canonical form: filters sorted and deduplicated, signed zeros folded.
    /// Set-valued fields are ordered by construction.
    pub fn canonical(&self) -> ScenarioQuery {
        let mut q = self.clone();
        for f in &mut q.object_filters {
            f.max_dist_m = f.max_dist_m.map(normalize_zero);
        }
        q.ego_speed_mps = q
            .ego_speed_mps
            .map(|[a, b]| [normalize_zero(a), normalize_zero(b)]);
        let mut keyed: Vec<(String, ObjectFilter)> = q
            .object_filters
            .into_iter()
            .map(|f| (canonical_json(&f), f))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        q.object_filters = keyed.into_iter().map(|(_, f)| f).collect();
        q
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(&self.canonical())
    }

    pub fn matches(&self, state: &SceneState) -> bool {
        self.acquisitions
            .as_ref()
            .is_none_or(|set| set.contains(&state.acquisition_id))
            && self
                .time_range
                .is_none_or(|[lo, hi]| (lo..=hi).contains(&state.t))
            && self
                .ego_speed_mps
                .is_none_or(|[lo, hi]| state.ego.speed_mps >= lo && state.ego.speed_mps <= hi)
            && self
                .weather
                .as_ref()
                .is_none_or(|set| set.contains(&state.environment.weather))
            && self
                .illumination
                .as_ref()
                .is_none_or(|set| set.contains(&state.environment.illumination))
            && self
                .road_type
                .as_ref()
                .is_none_or(|set| set.contains(&state.road.road_type))
            && self.object_filters.iter().all(|f| f.holds(state))
    }
}

/// Digest of the canonical query serialization.
pub fn canonical_query_hash(query: &ScenarioQuery) -> String {
    sha256_hex(query.canonical_json().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hit {
    pub acquisition_id: String,
    pub t: i64,
}

/// Result of executing a query: the matching instants in stored order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioContext {
    pub query: ScenarioQuery,
    pub hits: Vec<Hit>,
    /// Set by callers that persist the context; never part of the query hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub query_hash: String,
}

impl ScenarioContext {
    pub fn stamped(mut self, created_at: String) -> Self {
        self.created_at = Some(created_at);
        self
    }
}

pub fn execute_query(
    store: &SceneStore,
    query: &ScenarioQuery,
) -> Result<ScenarioContext, QueryError> {
    query.validate()?;
    let canonical = query.canonical();
    let hits = store
        .iter()
        .filter(|s| canonical.matches(s))
        .map(|s| Hit {
            acquisition_id: s.acquisition_id.clone(),
            t: s.t,
        })
        .collect();
    Ok(ScenarioContext {
        query_hash: canonical_query_hash(&canonical),
        query: canonical,
        hits,
        created_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frozen from the first computation; changes only if the canonical
    /// serialization or the digest algorithm changes.
    const EMPTY_QUERY_DIGEST: &str =
        "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a";

    #[test]
    fn empty_query_golden_digest() {
        assert_eq!(ScenarioQuery::default().canonical_json(), "{}");
        assert_eq!(
            canonical_query_hash(&ScenarioQuery::default()),
            EMPTY_QUERY_DIGEST
        );
    }

    #[test]
    fn field_order_does_not_change_hash() {
        let a: ScenarioQuery =
            serde_json::from_str(r#"{"weather":["rain","clear"],"time_range":[1,5]}"#).unwrap();
        let b: ScenarioQuery =
            serde_json::from_str(r#"{"time_range":[1,5],"weather":["clear","rain"]}"#).unwrap();
        assert_eq!(canonical_query_hash(&a), canonical_query_hash(&b));
    }

    #[test]
    fn filter_order_does_not_change_hash() {
        let a = ScenarioQuery {
            object_filters: vec![
                ObjectFilter::class(ObjectClass::Person).within(10.0),
                ObjectFilter::class(ObjectClass::Car),
            ],
            ..Default::default()
        };
        let mut b = a.clone();
        b.object_filters.reverse();
        assert_eq!(canonical_query_hash(&a), canonical_query_hash(&b));
    }

    #[test]
    fn integer_and_float_spellings_agree() {
        let a: ScenarioQuery =
            serde_json::from_str(r#"{"object_filters":[{"class":"person","max_dist_m":10}]}"#)
                .unwrap();
        let b: ScenarioQuery =
            serde_json::from_str(r#"{"object_filters":[{"class":"person","max_dist_m":10.0}]}"#)
                .unwrap();
        assert_eq!(canonical_query_hash(&a), canonical_query_hash(&b));
    }

    #[test]
    fn different_distance_changes_hash() {
        assert_ne!(
            canonical_query_hash(&ScenarioQuery::near_people(10.0)),
            canonical_query_hash(&ScenarioQuery::near_people(10.5))
        );
    }

    #[test]
    fn inverted_ranges_rejected() {
        let q = ScenarioQuery {
            ego_speed_mps: Some([5.0, 1.0]),
            ..Default::default()
        };
        assert_eq!(
            execute_query(&SceneStore::new(), &q).unwrap_err(),
            QueryError::InvertedRange {
                field: "ego_speed_mps".into()
            }
        );
        let q = ScenarioQuery {
            time_range: Some([9, 3]),
            ..Default::default()
        };
        assert_eq!(q.validate().unwrap_err().field(), "time_range");
    }

    #[test]
    fn unknown_query_field_rejected() {
        assert!(serde_json::from_str::<ScenarioQuery>(r#"{"density":3}"#).is_err());
    }

    #[test]
    fn empty_store_has_no_hits() {
        let ctx = execute_query(&SceneStore::new(), &ScenarioQuery::near_people(10.0)).unwrap();
        assert!(ctx.hits.is_empty());
    }

    #[test]
    fn empty_query_matches_everything_in_order() {
        let input: String = (97..=103)
            .rev()
            .map(|t| {
                format!(
                    r#"{{"acq":"A","t":{t},"ego":{{"speed_mps":5.0,"steering_deg":0.0,"brake":0.0,"accel_mps2":0.0}},"objects":[],"road":{{"type":"residential","lanes":2,"sidewalk":true}},"env":{{"weather":"clear","illumination":"day"}}}}"#
                ) + "\n"
            })
            .collect();
        let store = SceneStore::ingest_str(&input).unwrap();
        let ctx = execute_query(&store, &ScenarioQuery::default()).unwrap();
        let ts: Vec<i64> = ctx.hits.iter().map(|h| h.t).collect();
        assert_eq!(ts, (97..=103).collect::<Vec<_>>());
    }
}
