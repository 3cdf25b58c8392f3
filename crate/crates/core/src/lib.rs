//! Exact prescription of per-region, per-day intervention-plan levels.
//!
//! The pipeline parses tracker histories ([`ingest`]), estimates per-plan
//! case impacts through a pluggable [`predictor`] ([`impact`]), solves the
//! per-day integer program ([`prescriber`]) inside a day-by-day loop
//! ([`rollout`]), and benchmarks the result against baseline heuristics
//! ([`heuristics`], [`evaluate`]).

pub mod catalog;
pub mod costs;
pub mod evaluate;
pub mod heuristics;
pub mod impact;
pub mod ingest;
pub mod pipeline;
pub mod predictor;
pub mod prescriber;
pub mod prescription_csv;
pub mod rollout;
pub mod service;

pub use catalog::{default_catalog, validate_assignment, Assignment, PlanCatalog, PlanId, PlanSpec};
pub use ingest::{RegionHistory, RegionKey};
pub use predictor::{Predictor, SurrogateParams, SurrogatePredictor};
