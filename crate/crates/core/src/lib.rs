//! Streaming, personalized federated learning for per-sensor forecasting.
//!
//! Every device keeps a bounded window of its own readings, predicts while it
//! collects, trains a local model once per round and then averages that model
//! with the local models of a personal set of *favorite neighbors*. Neighbors
//! are admitted one at a time, nearest first, and only when including their
//! model lowers the device's real-time prediction error. Favorite neighbors
//! can be dropped again when the error keeps rising.
//!
//! The crate is split along those lines:
//!
//! - [`geo`]: sensor registry, great-circle distances and candidate maps.
//! - [`data`]: the per-device sliding window and training-instance extraction.
//! - [`learner`]: the pluggable online learner (LSTM and linear autoregressor),
//!   RMSProp and FedAvg.
//! - [`protocol`]: per-device state machine and the round orchestrator,
//!   including the Central / NaiveFL / r-NaiveFL baselines.
//! - [`metrics`]: pooled MSE, device-averaged MSE and round-range smoothing.

pub mod data;
pub mod geo;
pub mod learner;
pub mod metrics;
pub mod protocol;
pub mod seed;

pub use data::{DataWindow, TrainingInstance};
pub use geo::{CandidateMap, DeviceId, GpsCoord, SensorRegistry};
pub use learner::{fedavg, Learner, LinearLearner, LstmLearner, ModelParams, RmsProp};
pub use protocol::{DeviceState, Mode, ModelTag, RemovalPolicy, RoundLog, SimParams, Simulation};
