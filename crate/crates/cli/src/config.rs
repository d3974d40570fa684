//! Run configuration, loaded from TOML and patched by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use neighborfl_core::data::MinMaxScaler;
use neighborfl_core::geo::KM_PER_MILE;
use neighborfl_core::learner::RmsPropConfig;
use neighborfl_core::protocol::{Mode, ProtocolConfig, RemovalPolicy, SimParams};
use neighborfl_core::{Learner, LinearLearner, LstmLearner};
use serde::{Deserialize, Serialize};

/// Env var naming the directory relative output paths are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "NEIGHBORFL_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RadiusUnit {
    Miles,
    Km,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Lstm,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { hidden: 128, layers: 2, dropout: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// `device_id,lat,lon`
    pub metadata: Option<PathBuf>,
    /// `timestamp,<device ids...>`
    pub stream: Option<PathBuf>,
    /// Historical stream used by `pretrain`.
    pub pretrain: Option<PathBuf>,
    /// Per-device starting checkpoints; written by `pretrain`, read by `run`.
    pub checkpoints: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub removal_policy: RemovalPolicy,
    pub nu: usize,
    pub radius: f64,
    pub radius_unit: RadiusUnit,
    pub input_len: usize,
    pub output_len: usize,
    pub tau_first: usize,
    pub tau_rest: usize,
    pub max_data_size: usize,
    pub epochs: usize,
    pub learner: LearnerKind,
    pub lstm: LstmConfig,
    pub optimizer: RmsPropConfig,
    pub reset_optimizer: bool,
    pub seed: u64,
    pub rounds: usize,
    pub normalization: Option<Normalization>,
    /// Overrides the candidate scope / favorite initialization / dynamics
    /// implied by `mode`.
    pub protocol: Option<ProtocolConfig>,
    /// Width of the trailing window scored in the summaries.
    pub summary_rounds: usize,
    /// Smoothed-MSE partition: leading range, then ranges of `smoothing_width`.
    pub smoothing_first: usize,
    pub smoothing_width: usize,
    pub paths: Paths,
}

impl Default for SimConfig {
    fn default() -> Self {
        let p = SimParams::default();
        SimConfig {
            mode: p.mode,
            removal_policy: p.removal,
            nu: p.nu,
            radius: 1.0,
            radius_unit: RadiusUnit::Miles,
            input_len: p.input_len,
            output_len: p.output_len,
            tau_first: p.tau_first,
            tau_rest: p.tau_rest,
            max_data_size: p.max_data_size,
            epochs: p.epochs,
            learner: LearnerKind::Lstm,
            lstm: LstmConfig::default(),
            optimizer: p.optimizer,
            reset_optimizer: p.reset_optimizer,
            seed: p.seed,
            rounds: 250,
            normalization: None,
            protocol: None,
            summary_rounds: 24,
            smoothing_first: 23,
            smoothing_width: 24,
            paths: Paths::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> anyhow::Result<Self> {
        toml::from_str(s).context("invalid config")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn radius_km(&self) -> f64 {
        match self.radius_unit {
            RadiusUnit::Miles => self.radius * KM_PER_MILE,
            RadiusUnit::Km => self.radius,
        }
    }

    pub fn sim_params(&self) -> anyhow::Result<SimParams> {
        let normalization = self.normalization.map(|n| MinMaxScaler::new(n.lo, n.hi)).transpose()?;
        let params = SimParams {
            mode: self.mode,
            removal: self.removal_policy,
            nu: self.nu,
            radius_km: self.radius_km(),
            input_len: self.input_len,
            output_len: self.output_len,
            tau_first: self.tau_first,
            tau_rest: self.tau_rest,
            max_data_size: self.max_data_size,
            epochs: self.epochs,
            seed: self.seed,
            optimizer: self.optimizer,
            reset_optimizer: self.reset_optimizer,
            normalization,
            protocol_override: self.protocol,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks every constraint, naming the first one violated.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.sim_params()?;
        if self.rounds == 0 {
            bail!("rounds must be >= 1");
        }
        if self.summary_rounds == 0 || self.smoothing_first == 0 || self.smoothing_width == 0 {
            bail!("summary_rounds, smoothing_first and smoothing_width must be >= 1");
        }
        if self.learner == LearnerKind::Lstm {
            let l = self.lstm;
            if l.hidden == 0 || l.layers == 0 || !(0.0..1.0).contains(&l.dropout) {
                bail!("lstm needs hidden >= 1, layers >= 1 and dropout in [0, 1), got {l:?}");
            }
        }
        Ok(())
    }

    pub fn build_learner(&self) -> Arc<dyn Learner> {
        match self.learner {
            LearnerKind::Linear => Arc::new(LinearLearner::new(self.input_len, self.output_len)),
            LearnerKind::Lstm => {
                let l = self.lstm;
                Arc::new(LstmLearner::new(self.input_len, self.output_len, l.hidden, l.layers, l.dropout))
            }
        }
    }

    /// Label used in summary tables, e.g. `NeighborFL L1`.
    pub fn method_label(&self) -> String {
        SimParams { mode: self.mode, removal: self.removal_policy, nu: self.nu, ..SimParams::default() }.method_label()
    }

    pub fn require(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
        path.clone().with_context(|| format!("no {what} path configured (set paths.{what} or pass the flag)"))
    }
}

/// Resolves a relative output path against `NEIGHBORFL_OUTPUT_ROOT` when set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
