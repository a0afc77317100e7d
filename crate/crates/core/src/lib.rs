//! Multi-agent refinement of zero-shot geospatial predictions.
//!
//! An initial zero-shot score per location is refined over several rounds
//! using covariates at the location and the previous round's scores at
//! selected reference locations.

pub mod agents;
pub mod backend;
pub mod config;
pub mod context;
pub mod covariates;
pub mod dataset;
pub mod evaluation;
pub mod field;
pub mod geo;
pub mod index;
pub mod orchestrator;
pub mod synth;
pub mod transport;

pub use agents::{RefineDecision, Score, ScoreValue, TaskContext};
pub use config::{RunConfig, Variant};
pub use dataset::Dataset;
pub use geo::GeoPoint;
