//! The per-device favorite-neighbor protocol and its round orchestrator.
//!
//! A round for one device runs, in order:
//!
//! 1. predict with `A` (and with `A_eval` when a candidate is on trial) while
//!    collecting the round's readings;
//! 2. score the trial, admitting the candidate only on a strict error drop;
//! 3. train the chosen model locally into `L`;
//! 4. (after a barrier across devices) aggregate `L` with the favorite
//!    neighbors' fresh local models into the next `A`;
//! 5. drop a favorite neighbor if the error rose for `nu` rounds in a row;
//! 6. pick the next candidate and build `A_eval` for it.
//!
//! The Central, NaiveFL and r-NaiveFL baselines are the same machine with a
//! frozen favorite-neighbor set.

mod device;
mod round;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::data::MinMaxScaler;
use crate::geo::{DeviceId, GeoError};
use crate::learner::{LearnerError, RmsPropConfig};
use crate::metrics::MetricError;

pub use device::{removal_triggered, DeviceState, Evaluation};
pub use round::{align_for_eval, align_round, predict_round, AlignedRound, StepRecord};
pub use sim::{DeviceRound, InitialModels, RoundLog, Simulation};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stream exhausted in round {round}: need {needed} points, {available} available")]
    StreamExhausted { round: usize, needed: usize, available: usize },
    #[error("no stream for device `{0}`")]
    MissingStream(DeviceId),
    #[error("no initial model for device `{0}`")]
    MissingModel(DeviceId),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("device `{device}`, round {round}: {source}")]
    Learner {
        device: DeviceId,
        round: usize,
        #[source]
        source: LearnerError,
    },
    #[error("device `{device}`, round {round}: {source}")]
    Data {
        device: DeviceId,
        round: usize,
        #[source]
        source: DataError,
    },
    #[error("device `{device}`, round {round}: {source}")]
    Metric {
        device: DeviceId,
        round: usize,
        #[source]
        source: MetricError,
    },
}

/// Federation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "neighborfl")]
    NeighborFl,
    #[serde(rename = "central")]
    Central,
    #[serde(rename = "naivefl")]
    NaiveFl,
    #[serde(rename = "r_naivefl")]
    RNaiveFl,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::NeighborFl => "NeighborFL",
            Mode::Central => "Central",
            Mode::NaiveFl => "NaiveFL",
            Mode::RNaiveFl => "r-NaiveFL",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neighborfl" => Ok(Mode::NeighborFl),
            "central" => Ok(Mode::Central),
            "naivefl" => Ok(Mode::NaiveFl),
            "r_naivefl" => Ok(Mode::RNaiveFl),
            other => Err(format!("unknown mode `{other}` (neighborfl, central, naivefl, r_naivefl)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalPolicy {
    ByReputation,
    LastAdded,
}

impl RemovalPolicy {
    pub fn letter(&self) -> char {
        match self {
            RemovalPolicy::ByReputation => 'R',
            RemovalPolicy::LastAdded => 'L',
        }
    }
}

impl std::str::FromStr for RemovalPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "by_reputation" => Ok(RemovalPolicy::ByReputation),
            "last_added" => Ok(RemovalPolicy::LastAdded),
            other => Err(format!("unknown removal policy `{other}` (by_reputation, last_added)")),
        }
    }
}

/// Which devices populate a device's candidate map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Devices within the configured radius.
    Radius,
    /// Every other device.
    Everyone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialFavorites {
    Empty,
    AllCandidates,
}

/// Behavior switches a [`Mode`] expands to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub scope: CandidateScope,
    pub initial_favorites: InitialFavorites,
    /// Candidate selection, evaluation and removal enabled.
    pub dynamic: bool,
}

pub fn configure_mode(mode: Mode) -> ProtocolConfig {
    use CandidateScope::*;
    use InitialFavorites::*;
    let (scope, initial_favorites, dynamic) = match mode {
        Mode::NeighborFl => (Radius, Empty, true),
        Mode::Central => (Radius, Empty, false),
        Mode::NaiveFl => (Everyone, AllCandidates, false),
        Mode::RNaiveFl => (Radius, AllCandidates, false),
    };
    ProtocolConfig { scope, initial_favorites, dynamic }
}

/// Which aggregated model a device trained from in a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "A_eval")]
    AEval,
}

/// Simulation hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub mode: Mode,
    pub removal: RemovalPolicy,
    /// Consecutive strict error increases that trigger a removal.
    pub nu: usize,
    pub radius_km: f64,
    pub input_len: usize,
    pub output_len: usize,
    pub tau_first: usize,
    pub tau_rest: usize,
    pub max_data_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: RmsPropConfig,
    /// Zero the RMSProp accumulator at the start of every local training.
    pub reset_optimizer: bool,
    pub normalization: Option<MinMaxScaler>,
    /// Replaces the switches derived from `mode`.
    pub protocol_override: Option<ProtocolConfig>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            mode: Mode::NeighborFl,
            removal: RemovalPolicy::LastAdded,
            nu: 1,
            radius_km: crate::geo::KM_PER_MILE,
            input_len: 12,
            output_len: 1,
            tau_first: 24,
            tau_rest: 12,
            max_data_size: 72,
            epochs: 5,
            seed: 40,
            optimizer: RmsPropConfig::default(),
            reset_optimizer: false,
            normalization: None,
            protocol_override: None,
        }
    }
}

impl SimParams {
    pub fn protocol(&self) -> ProtocolConfig {
        self.protocol_override.unwrap_or_else(|| configure_mode(self.mode))
    }

    pub fn tau(&self, round: usize) -> usize {
        if round == 1 { self.tau_first } else { self.tau_rest }
    }

    /// Points consumed by the first `rounds` rounds.
    pub fn points_needed(&self, rounds: usize) -> usize {
        if rounds == 0 { 0 } else { self.tau_first + (rounds - 1) * self.tau_rest }
    }

    /// Method label such as `NeighborFL L1` or `NaiveFL`.
    pub fn method_label(&self) -> String {
        match self.mode {
            Mode::NeighborFl => format!("NeighborFL {}{}", self.removal.letter(), self.nu),
            other => other.label().to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let fail = |msg: String| Err(ProtocolError::Config(msg));
        let (i, o) = (self.input_len, self.output_len);
        if i == 0 || o == 0 {
            return fail(format!("input_len and output_len must be >= 1 (I={i}, O={o})"));
        }
        if self.tau_first < i + o {
            return fail(format!("tau_first ({}) must be >= I + O ({})", self.tau_first, i + o));
        }
        if self.tau_rest < o {
            return fail(format!("tau_rest ({}) must be >= O ({o})", self.tau_rest));
        }
        if self.max_data_size < i + o {
            return fail(format!("max_data_size ({}) must be >= I + O ({})", self.max_data_size, i + o));
        }
        if self.nu == 0 {
            return fail("nu must be >= 1".into());
        }
        if !(self.radius_km > 0.0) {
            return fail(format!("radius must be positive, got {} km", self.radius_km));
        }
        let opt = self.optimizer;
        if !(opt.learning_rate > 0.0 && (0.0..1.0).contains(&opt.rho) && opt.epsilon > 0.0) {
            return fail(format!("invalid RMSProp settings {opt:?}"));
        }
        Ok(())
    }
}
