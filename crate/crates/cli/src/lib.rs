//! Experiment harness around `neighborfl-core`: configuration, CSV
//! ingestion, runs with persisted artifacts, pretraining, summary tables and
//! SVG charts.

pub mod artifacts;
pub mod chart;
pub mod compare;
pub mod config;
pub mod ingest;
pub mod run;

pub use config::SimConfig;
pub use run::{pretrain, rerun, run, RunOutcome};
