//! Scenario windows and collections.
//!
//! A window expands an anchor second `t0` into the interval `[t0 - k, t0 + m]`
//! and freezes the stored states inside it. Its id is a digest of the window
//! content (anchor, extents, states), so rebuilding from the same store always
//! yields the same id.

use crate::digest::canonical_json_digest;
use crate::query::ScenarioContext;
use crate::scene::SceneState;
use crate::store::{SceneStore, StoreError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_PRE_S: i64 = 3;
pub const DEFAULT_POST_S: i64 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("anchor (acq={acquisition_id}, t0={t0}) not found in store")]
    AnchorNotFound { acquisition_id: String, t0: i64 },
    #[error("window extent `{field}` must be non-negative, got {value}")]
    NegativeExtent { field: &'static str, value: i64 },
    #[error("collection references unknown window `{0}`")]
    DanglingWindow(String),
    #[error("window `{0}` no longer matches the store content")]
    IntegrityMismatch(String),
    #[error("invalid collection name `{0}`")]
    InvalidName(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub acquisition_id: String,
    pub t0: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Anchor {
    pub fn new(acquisition_id: impl Into<String>, t0: i64) -> Self {
        Self {
            acquisition_id: acquisition_id.into(),
            t0,
            label: None,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Serialize)]
struct WindowContent<'a> {
    anchor: &'a Anchor,
    k: u32,
    m: u32,
    states: &'a [SceneState],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioWindow {
    pub window_id: String,
    pub anchor: Anchor,
    pub k: u32,
    pub m: u32,
    pub states: Vec<SceneState>,
    /// Frame images of the states that carry one, in state order.
    #[serde(default)]
    pub image_refs: Vec<String>,
    /// Seconds of the interval with no stored state.
    #[serde(default)]
    pub missing_seconds: Vec<i64>,
}

impl ScenarioWindow {
    pub fn t_from(&self) -> i64 {
        self.anchor.t0 - i64::from(self.k)
    }

    pub fn t_to(&self) -> i64 {
        self.anchor.t0 + i64::from(self.m)
    }

    pub fn span_seconds(&self) -> usize {
        (self.k + self.m + 1) as usize
    }

    /// Fraction of the interval's seconds present in the window.
    pub fn completeness(&self) -> f64 {
        self.states.len() as f64 / self.span_seconds() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.missing_seconds.is_empty()
    }

    pub fn compute_id(&self) -> String {
        canonical_json_digest(&WindowContent {
            anchor: &self.anchor,
            k: self.k,
            m: self.m,
            states: &self.states,
        })
    }

    pub fn id_is_consistent(&self) -> bool {
        self.compute_id() == self.window_id
    }
}

fn extent(field: &'static str, value: i64) -> Result<u32, WindowError> {
    u32::try_from(value).map_err(|_| WindowError::NegativeExtent { field, value })
}

/// Materializes `[t0 - k, t0 + m]` around `anchor`.
pub fn build_window(
    store: &SceneStore,
    anchor: &Anchor,
    k: i64,
    m: i64,
) -> Result<ScenarioWindow, WindowError> {
    let k = extent("k", k)?;
    let m = extent("m", m)?;
    if !store.contains(&anchor.acquisition_id, anchor.t0) {
        return Err(WindowError::AnchorNotFound {
            acquisition_id: anchor.acquisition_id.clone(),
            t0: anchor.t0,
        });
    }
    let t_from = anchor.t0 - i64::from(k);
    let t_to = anchor.t0 + i64::from(m);
    let states: Vec<SceneState> = store
        .get_states(&anchor.acquisition_id, t_from, t_to)?
        .into_iter()
        .cloned()
        .collect();
    let present: Vec<i64> = states.iter().map(|s| s.t).collect();
    let missing_seconds = (t_from..=t_to)
        .filter(|t| present.binary_search(t).is_err())
        .collect();
    let image_refs = states.iter().filter_map(|s| s.image_ref.clone()).collect();
    let mut window = ScenarioWindow {
        window_id: String::new(),
        anchor: anchor.clone(),
        k,
        m,
        states,
        image_refs,
        missing_seconds,
    };
    window.window_id = window.compute_id();
    Ok(window)
}

/// Picks up to `limit` anchors from query hits, in hit order.
///
/// A hit qualifies when its whole `[t0 - k, t0 + m]` interval is stored and
/// does not overlap an already chosen window of the same acquisition.
/// Anchors are labelled `S1, S2, ...` in selection order.
pub fn promote_hits(
    context: &ScenarioContext,
    store: &SceneStore,
    k: i64,
    m: i64,
    limit: usize,
) -> Result<Vec<Anchor>, WindowError> {
    let k = i64::from(extent("k", k)?);
    let m = i64::from(extent("m", m)?);
    let mut chosen: Vec<Anchor> = Vec::new();
    let mut last_end: BTreeMap<&str, i64> = BTreeMap::new();
    for hit in &context.hits {
        if chosen.len() == limit {
            break;
        }
        let (from, to) = (hit.t - k, hit.t + m);
        if last_end
            .get(hit.acquisition_id.as_str())
            .is_some_and(|&end| from <= end)
        {
            continue;
        }
        let complete = (from..=to).all(|t| store.contains(&hit.acquisition_id, t));
        if !complete {
            continue;
        }
        last_end.insert(&hit.acquisition_id, to);
        chosen.push(
            Anchor::new(hit.acquisition_id.clone(), hit.t)
                .labeled(format!("S{}", chosen.len() + 1)),
        );
    }
    Ok(chosen)
}

/// A named, ordered group of windows, persisted with the windows embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collection {
    pub collection_id: String,
    pub name: String,
    /// Curated anchors not yet expanded into windows.
    #[serde(default)]
    pub anchors: Vec<Anchor>,
    /// Window ids in authored order.
    pub window_ids: Vec<String>,
    #[serde(default)]
    pub windows: Vec<ScenarioWindow>,
}

/// Derives a filesystem- and URL-safe collection id from a name.
pub fn collection_id_for(name: &str) -> Result<String, WindowError> {
    let id: String = name
        .trim()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    if id.is_empty() || id.chars().all(|c| c == '-') {
        return Err(WindowError::InvalidName(name.to_string()));
    }
    Ok(id)
}

impl Collection {
    pub fn new(name: &str) -> Result<Self, WindowError> {
        Ok(Self {
            collection_id: collection_id_for(name)?,
            name: name.to_string(),
            anchors: Vec::new(),
            window_ids: Vec::new(),
            windows: Vec::new(),
        })
    }

    /// Appends a window; returns false when its id is already present.
    pub fn push_window(&mut self, window: ScenarioWindow) -> bool {
        if self.window_ids.contains(&window.window_id) {
            return false;
        }
        self.window_ids.push(window.window_id.clone());
        self.windows.push(window);
        true
    }

    /// Expands every pending anchor with the given extents and clears the
    /// pending list. Returns the ids of the windows built, in anchor order.
    pub fn expand_anchors(
        &mut self,
        store: &SceneStore,
        k: i64,
        m: i64,
    ) -> Result<Vec<String>, WindowError> {
        let built: Vec<ScenarioWindow> = self
            .anchors
            .iter()
            .map(|a| build_window(store, a, k, m))
            .collect::<Result<_, _>>()?;
        let ids = built.iter().map(|w| w.window_id.clone()).collect();
        for w in built {
            self.push_window(w);
        }
        self.anchors.clear();
        Ok(ids)
    }

    pub fn window(&self, window_id: &str) -> Option<&ScenarioWindow> {
        self.windows.iter().find(|w| w.window_id == window_id)
    }
}

/// Materializes a collection's windows in authored order, checking each one
/// against the current store.
pub fn consume_collection(
    collection: &Collection,
    store: &SceneStore,
) -> Result<Vec<ScenarioWindow>, WindowError> {
    collection
        .window_ids
        .iter()
        .map(|id| {
            let embedded = collection
                .window(id)
                .ok_or_else(|| WindowError::DanglingWindow(id.clone()))?;
            let rebuilt = build_window(
                store,
                &embedded.anchor,
                i64::from(embedded.k),
                i64::from(embedded.m),
            )
            .map_err(|_| WindowError::IntegrityMismatch(id.clone()))?;
            if rebuilt.window_id != *id || rebuilt != *embedded {
                return Err(WindowError::IntegrityMismatch(id.clone()));
            }
            Ok(rebuilt)
        })
        .collect()
}
