//! Parameterised blocks built on the tape: MLPs, an LSTM cell, a fully
//! connected message-passing block, and the Adam / Polyak updates.

mod adam;
mod graph;
mod lstm;
mod mlp;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, polyak_update, AdamState};
pub use graph::GraphBlock;
pub use lstm::LstmCell;
pub use mlp::Mlp;
pub use params::{uniform_weight, Bound, Grads, ParamStore};

use crate::tensor::{Result as TensorResult, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown parameter {0:?}")]
    MissingParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("empty block specification")]
    EmptySpec,
    #[error("mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> TensorResult<Var<'t>> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// Something that owns named parameters.
pub trait Block {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()>;
}

/// Fresh parameters for a set of blocks: weights uniform in
/// `±1/sqrt(fan_in)`, biases zero.
pub fn init_params<R: Rng>(blocks: &[&dyn Block], rng: &mut R) -> Result<ParamStore> {
    if blocks.is_empty() {
        return Err(NnError::EmptySpec);
    }
    let mut store = ParamStore::new();
    for b in blocks {
        b.init(&mut store, rng)?;
    }
    Ok(store)
}
