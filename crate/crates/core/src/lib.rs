//! Scenario-centric auditing of LLM risk interpretation.
//!
//! A 1 Hz scene store is queried for scenarios, which are cut into
//! content-addressed windows, rendered into a fixed prompt with a closed
//! numeric risk schema, sent to several model backends, parsed strictly,
//! and compared per model and per window.
//!
//! The metric modules are generic over [`scalar::Scalar`]; the aliases below
//! fix the scalar to `f64` for reporting and to `Ratio<i64>` for exact checks.

pub mod ambiguity;
pub mod analysis;
pub mod digest;
pub mod parser;
pub mod prompt;
pub mod query;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod scene;
pub mod schema;
pub mod store;
pub mod synth;
pub mod tracking;
pub mod window;
pub mod workspace;

/// Exact rational scalar.
pub type Exact = num_rational::Ratio<i64>;

pub type ModelProfile = analysis::ModelProfile<f64>;
pub type ExactModelProfile = analysis::ModelProfile<Exact>;
pub type ScenarioDisagreement = ambiguity::ScenarioDisagreement<f64>;
pub type ExactScenarioDisagreement = ambiguity::ScenarioDisagreement<Exact>;
pub type HeatmapMatrix = ambiguity::HeatmapMatrix<f64>;
pub type Weights = ambiguity::Weights<f64>;

pub use parser::{ParseRejection, RejectReason, RiskAssessment};
pub use query::{ScenarioContext, ScenarioQuery};
pub use runner::{ModelSpec, RunRecord, RunStatus};
pub use scene::SceneState;
pub use store::SceneStore;
pub use window::{Anchor, Collection, ScenarioWindow};
pub use workspace::Workspace;
