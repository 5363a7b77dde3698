//! Occluded-hazard gridworld, the communication paradigms and episode
//! scoring.

mod metrics;
mod run;
mod spec;
mod sweep;
mod world;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use metrics::{
    agent_metrics, episode_metrics, infraction_score, metrics_columns, outcome_name, AgentMetrics,
    AgentTally, EpisodeMetrics, Infraction,
};
pub use run::{agent_payload, run_episode, run_tick, AgentTick, EpisodeResult, TickReport};
pub use spec::{AgentSpec, ScenarioSpec};
pub use sweep::{sweep, sweep_header, SweepParam};
pub use world::{
    Cell, EventKind, Grid, Heading, Pedestrian, Status, Vehicle, World, WorldEvent, MAX_SPEED,
};

use crate::channel::ChannelConfig;
use crate::chsa::ChsaError;
use crate::fusion::FusionError;
use crate::ild::IldError;
use crate::model::ModelError;
use crate::sskd::{Dtype, SskdError};
use crate::wire::WireError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ild(#[from] IldError),
    #[error(transparent)]
    Chsa(#[from] ChsaError),
    #[error(transparent)]
    Sskd(#[from] SskdError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("agent {agent} decoded token {token}, which is not an action")]
    InvalidAction { agent: u32, token: u32 },
    #[error("no agent with id {0}")]
    UnknownAgent(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(String),
}

/// What agents exchange each tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Paradigm {
    NonCollab,
    /// `m` greedily decoded token ids.
    Language,
    /// The full prefill cache at every layer.
    Visual,
    /// Prefill plus latent cache at every layer, no pruning.
    NaiveLatent,
    /// Salient prefill plus latent cache, first `L_comm` layers.
    Laco,
}

impl Paradigm {
    pub const ALL: [Paradigm; 5] = [
        Paradigm::NonCollab,
        Paradigm::Language,
        Paradigm::Visual,
        Paradigm::NaiveLatent,
        Paradigm::Laco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::NonCollab => "noncollab",
            Paradigm::Language => "language",
            Paradigm::Visual => "visual",
            Paradigm::NaiveLatent => "naive-latent",
            Paradigm::Laco => "laco",
        }
    }

    /// Runs latent deliberation before messaging.
    pub fn deliberates(self) -> bool {
        matches!(self, Paradigm::NaiveLatent | Paradigm::Laco)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noncollab" | "non-collab" | "ego" => Ok(Paradigm::NonCollab),
            "language" => Ok(Paradigm::Language),
            "visual" => Ok(Paradigm::Visual),
            "naive-latent" | "naivelatent" | "naive" => Ok(Paradigm::NaiveLatent),
            "laco" => Ok(Paradigm::Laco),
            other => Err(format!(
                "unknown paradigm {other:?} (noncollab, language, visual, naive-latent, laco)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paradigm: Paradigm,
    /// Latent steps; also the message length of `Language`.
    pub m: usize,
    pub rho: f64,
    pub l_comm_fraction: f64,
    pub dtype: Dtype,
    pub channel: ChannelConfig,
    /// Metres per grid cell, for channel range checks.
    pub cell_m: f64,
    pub max_ticks: u32,
    /// Keep attention rows for `laco analyze`.
    pub record_telemetry: bool,
    /// Also keep one record per prefill position (large).
    pub record_prefill: bool,
}

impl RunConfig {
    pub fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            m: 10,
            rho: 0.3,
            l_comm_fraction: 0.1,
            dtype: Dtype::F32,
            channel: ChannelConfig::default(),
            cell_m: 10.0,
            max_ticks: 200,
            record_telemetry: false,
            record_prefill: false,
        }
    }
}
