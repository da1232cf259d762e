//! The learner: type embeddings under openness, coordination-graph action
//! values, the agent model, and the padded-input baselines.

pub mod baseline;
pub mod cg;
pub mod embed;
pub mod learner;
pub mod model;
pub mod policy;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::nn::NnError;
use crate::osbg::AgentId;
use crate::tensor::TensorError;
use crate::world::WorldError;

pub use cg::{joint_q_var, UtilityTables};
pub use embed::{input_batch, preprocess, EmbeddingStore, Embedder, HiddenStates};
pub use learner::{Forward, Learner, Memory};
pub use model::{AgentModel, NetConfig, ValueNet};
pub use policy::{spi_policy, td_target, EpsilonSchedule, TargetMode};
pub use train::{TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum GplError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("no action for agent {0}")]
    MissingAction(AgentId),
    #[error("agent {0} already has a stored state")]
    AlreadyTracked(AgentId),
    #[error("stored states {states:?} do not match observed agents {observed:?}")]
    Misaligned { states: Vec<AgentId>, observed: Vec<AgentId> },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T> = std::result::Result<T, GplError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "GPL-Q")]
    GplQ,
    #[serde(rename = "GPL-SPI")]
    GplSpi,
    #[serde(rename = "QL")]
    Ql,
    #[serde(rename = "QL-AM")]
    QlAm,
}

impl Algorithm {
    pub fn mode(self) -> TargetMode {
        match self {
            Algorithm::GplSpi => TargetMode::Spi,
            _ => TargetMode::Ql,
        }
    }

    pub fn is_gpl(self) -> bool {
        matches!(self, Algorithm::GplQ | Algorithm::GplSpi)
    }

    pub fn has_agent_model(self) -> bool {
        self != Algorithm::Ql
    }
}
