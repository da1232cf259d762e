//! Fixed-length input baselines: teammates are written into randomly assigned
//! slots of a padded vector that feeds a single recurrent value network.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::{Embedder, HiddenStates};
use super::model::{NetConfig, VALUE_PREFIX};
use super::{GplError, Result};
use crate::envs::{Observation, SENTINEL};
use crate::nn::{Activation, Block, Bound, Mlp, ParamStore};
use crate::osbg::{AgentId, LEARNER};
use crate::tensor::{Tensor, Var};

/// Teammate to slot assignment. A slot is drawn uniformly from the free ones
/// on arrival and held until departure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMap {
    slots: Vec<Option<AgentId>>,
}

impl SlotMap {
    /// Room for `max_agents - 1` teammates.
    pub fn new(max_agents: usize) -> Self {
        Self {
            slots: vec![None; max_agents.saturating_sub(1)],
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_of(&self, id: AgentId) -> Option<usize> {
        self.slots.iter().position(|s| *s == Some(id))
    }

    pub fn occupant(&self, slot: usize) -> Option<AgentId> {
        self.slots.get(slot).copied().flatten()
    }

    pub fn assign<R: Rng + ?Sized>(&mut self, id: AgentId, rng: &mut R) -> Result<usize> {
        if self.slot_of(id).is_some() {
            return Err(GplError::AlreadyTracked(id));
        }
        let free: Vec<usize> = (0..self.slots.len()).filter(|&s| self.slots[s].is_none()).collect();
        if free.is_empty() {
            return Err(GplError::Config(format!(
                "no free slot for {id}: input is sized for {} teammates",
                self.slots.len()
            )));
        }
        let s = free[rng.gen_range(0..free.len())];
        self.slots[s] = Some(id);
        Ok(s)
    }

    pub fn release(&mut self, id: AgentId) {
        if let Some(s) = self.slot_of(id) {
            self.slots[s] = None;
        }
    }

    pub fn apply_change<R: Rng + ?Sized>(&mut self, departures: &[AgentId], arrivals: &[AgentId], rng: &mut R) -> Result<()> {
        for &id in departures {
            self.release(id);
        }
        for &id in arrivals {
            if id != LEARNER {
                self.assign(id, rng)?;
            }
        }
        Ok(())
    }

    /// Empties every slot and assigns the teammates among `ids`.
    pub fn reset<R: Rng + ?Sized>(&mut self, ids: &[AgentId], rng: &mut R) -> Result<()> {
        self.slots.iter_mut().for_each(|s| *s = None);
        self.apply_change(&[], ids, rng)
    }
}

/// `[x_learner, slot_1, ..., slot_{max-1}, u]` with absent slots set to −1.
pub fn pad_observation(obs: &Observation, slots: &SlotMap) -> Result<Vec<f64>> {
    let learner = obs
        .x(LEARNER)
        .ok_or_else(|| GplError::Shape("observation without the learner".into()))?;
    let width = learner.len();
    let mut out = learner.to_vec();
    for (id, _) in obs.agents.iter().filter(|(id, _)| *id != LEARNER) {
        if slots.slot_of(*id).is_none() {
            return Err(GplError::Shape(format!("teammate {id} has no slot")));
        }
    }
    for s in 0..slots.capacity() {
        match slots.occupant(s).and_then(|id| obs.x(id)) {
            Some(x) => out.extend_from_slice(x),
            None => out.extend(std::iter::repeat_n(SENTINEL, width)),
        }
    }
    out.extend_from_slice(&obs.u);
    Ok(out)
}

/// Per-slot predicted action distributions, −1 for empty slots.
pub fn pad_probs(probs: &BTreeMap<AgentId, Vec<f64>>, slots: &SlotMap, n_actions: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(slots.capacity() * n_actions);
    for s in 0..slots.capacity() {
        match slots.occupant(s).and_then(|id| probs.get(&id)) {
            Some(p) => out.extend_from_slice(p),
            None => out.extend(std::iter::repeat_n(SENTINEL, n_actions)),
        }
    }
    out
}

/// Padded input width.
pub fn padded_len(max_agents: usize, x_dim: usize, u_dim: usize, n_actions: usize, with_probs: bool) -> usize {
    let probs = if with_probs { (max_agents - 1) * n_actions } else { 0 };
    max_agents * x_dim + u_dim + probs
}

/// Embedding network over the padded vector followed by an action value MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct QlNet {
    embed: Embedder,
    q: Mlp,
}

impl QlNet {
    pub fn new(cfg: &NetConfig, input: usize, n_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.embed_hidden;
        let mut sizes = vec![h];
        sizes.extend_from_slice(&cfg.beta_hidden);
        sizes.push(n_actions);
        Ok(Self {
            embed: Embedder::new(&format!("{VALUE_PREFIX}.embed"), input, &cfg.embed_fc, h, cfg.activation)?,
            q: Mlp::new(format!("{VALUE_PREFIX}.q"), &sizes, cfg.activation, Activation::Identity)?,
        })
    }

    pub fn input(&self) -> usize {
        self.embed.input()
    }

    pub fn hidden(&self) -> usize {
        self.embed.hidden()
    }

    /// Returns `([1, |A|] action values, h', c')`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &[f64], state: &HiddenStates) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        if x.len() != self.input() {
            return Err(GplError::Shape(format!(
                "padded input of length {}, expected {}",
                x.len(),
                self.input()
            )));
        }
        let batch = Tensor::new(&[1, x.len()], x.to_vec())?;
        let (h, c) = self.embed.embed(p, &batch, state)?;
        Ok((self.q.forward(p, h)?, h, c))
    }

    /// One recurrent step on tape-held input `[1, input]` and state.
    pub fn step<'t>(&self, p: &Bound<'t>, x: Var<'t>, h: Var<'t>, c: Var<'t>) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let (h, c) = self.embed.forward(p, x, h, c)?;
        Ok((self.q.forward(p, h)?, h, c))
    }
}

impl Block for QlNet {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> crate::nn::Result<()> {
        self.embed.init(store, rng)?;
        self.q.init(store, rng)
    }
}
