//! Post-disaster population-activity recovery analytics.
//!
//! The pipeline turns mobility-derived event tables (visits to points of
//! interest, evacuation counts, weekly home-location tags, flood damage
//! claims, income) into per-unit recovery milestones, classifies the order
//! in which milestones unfold, quantifies how milestone lags depend on each
//! other via robust regression, and relates trajectories to physical and
//! social vulnerability. A seeded scenario generator with planted ground
//! truth backs the test suite.

pub mod ingest;
pub mod milestones;
pub mod model;
pub mod regress;
pub mod report;
pub mod stats;
pub mod svg;
pub mod synth;
pub mod trajectory;
pub mod vulnerability;

pub use model::{MilestoneKind, MilestoneSet, SequenceLabel, StudyConfig, UnitId};
