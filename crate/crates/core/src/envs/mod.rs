//! Fully observable grid worlds: Level-Based Foraging and Wolfpack.

pub mod grid;
pub mod lbf;
pub mod wolfpack;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::osbg::{AgentId, JointAgentAction};

pub use grid::{Move, Pos};
pub use lbf::{LbfConfig, LbfState, LBF_ACTIONS, LOAD};
pub use wolfpack::{prey_act, WolfConfig, WolfState, WOLF_ACTIONS};

/// Filler for absent or collected entities in observations.
pub const SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("agent {0} is not in the environment")]
    UnknownAgent(AgentId),
    #[error("agent {0} is already in the environment")]
    AlreadyPresent(AgentId),
    #[error("agent {agent} chose action {action}, which is out of range")]
    BadAction { agent: AgentId, action: usize },
    #[error("no free cell left on the grid")]
    GridFull,
}

/// Shared component `u` and per-agent components `x`, in the requested order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub u: Vec<f64>,
    pub agents: Vec<(AgentId, Vec<f64>)>,
}

impl Observation {
    pub fn x(&self, id: AgentId) -> Option<&[f64]> {
        self.agents.iter().find(|(a, _)| *a == id).map(|(_, x)| x.as_slice())
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|(a, _)| *a).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub prey: usize,
    pub pack: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// LBF: object slot and the loaders that collected it.
    pub collected: Vec<(usize, Vec<AgentId>)>,
    /// Wolfpack: captured prey and the capturing pack.
    pub captures: Vec<Capture>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Lbf,
    Wolfpack,
}

impl EnvKind {
    pub fn tag(self) -> &'static str {
        match self {
            EnvKind::Lbf => "lbf",
            EnvKind::Wolfpack => "wolf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Lbf(LbfConfig),
    Wolfpack(WolfConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::Lbf(_) => EnvKind::Lbf,
            EnvConfig::Wolfpack(_) => EnvKind::Wolfpack,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvConfig::Lbf(_) => LBF_ACTIONS,
            EnvConfig::Wolfpack(_) => WOLF_ACTIONS,
        }
    }

    pub fn u_dim(&self) -> usize {
        match self {
            EnvConfig::Lbf(c) => 3 * c.objects,
            EnvConfig::Wolfpack(c) => 2 * c.prey,
        }
    }

    pub fn x_dim(&self) -> usize {
        match self {
            EnvConfig::Lbf(_) => 3,
            EnvConfig::Wolfpack(_) => 2,
        }
    }

    pub fn horizon(&self) -> u32 {
        match self {
            EnvConfig::Lbf(c) => c.horizon,
            EnvConfig::Wolfpack(c) => c.horizon,
        }
    }

    pub fn build(&self) -> Env {
        match self {
            EnvConfig::Lbf(c) => Env::Lbf(LbfState::empty(c.clone())),
            EnvConfig::Wolfpack(c) => Env::Wolfpack(WolfState::empty(c.clone())),
        }
    }
}

/// Either environment behind one interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Env {
    Lbf(LbfState),
    Wolfpack(WolfState),
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Lbf(_) => EnvKind::Lbf,
            Env::Wolfpack(_) => EnvKind::Wolfpack,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Env::Lbf(_) => LBF_ACTIONS,
            Env::Wolfpack(_) => WOLF_ACTIONS,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, agents: &[AgentId], rng: &mut R) -> Result<(), EnvError> {
        match self {
            Env::Lbf(s) => s.reset(agents, rng),
            Env::Wolfpack(s) => s.reset(agents, rng),
        }
    }

    pub fn add_agent<R: Rng + ?Sized>(&mut self, id: AgentId, rng: &mut R) -> Result<(), EnvError> {
        match self {
            Env::Lbf(s) => s.add_agent(id, rng),
            Env::Wolfpack(s) => s.add_agent(id, rng),
        }
    }

    pub fn remove_agent(&mut self, id: AgentId) {
        match self {
            Env::Lbf(s) => s.remove_agent(id),
            Env::Wolfpack(s) => s.remove_agent(id),
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        actions: &JointAgentAction,
        learner: AgentId,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        match self {
            Env::Lbf(s) => s.step(actions, learner),
            Env::Wolfpack(s) => s.step(actions, learner, rng),
        }
    }

    pub fn encode(&self, order: &[AgentId]) -> Result<Observation, EnvError> {
        match self {
            Env::Lbf(s) => s.encode(order),
            Env::Wolfpack(s) => s.encode(order),
        }
    }

    pub fn steps(&self) -> u32 {
        match self {
            Env::Lbf(s) => s.step,
            Env::Wolfpack(s) => s.step,
        }
    }
}
