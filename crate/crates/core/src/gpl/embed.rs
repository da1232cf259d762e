//! Type embedding under openness: per-agent recurrent state bookkeeping and
//! the FC-FC-LSTM embedding network.

use serde::{Deserialize, Serialize};

use super::{GplError, Result};
use crate::envs::Observation;
use crate::nn::{Activation, Block, Bound, LstmCell, Mlp, ParamStore};
use crate::osbg::AgentId;
use crate::tensor::{Tensor, Var};

/// `(h, c)` for every agent present, in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    dim: usize,
    ids: Vec<AgentId>,
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl HiddenStates {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            h: Vec::new(),
            c: Vec::new(),
        }
    }

    /// Zero states for `ids`.
    pub fn zeros(dim: usize, ids: &[AgentId]) -> Self {
        let mut s = Self::new(dim);
        for &id in ids {
            s.ids.push(id);
            s.h.push(vec![0.0; dim]);
            s.c.push(vec![0.0; dim]);
        }
        s
    }

    pub fn ids(&self) -> &[AgentId] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: AgentId) -> Option<(&[f64], &[f64])> {
        let i = self.ids.iter().position(|&x| x == id)?;
        Some((&self.h[i], &self.c[i]))
    }

    /// Drops departed agents, then appends zero states for arrivals.
    pub fn apply_change(&mut self, departures: &[AgentId], arrivals: &[AgentId]) -> Result<()> {
        for id in departures {
            if let Some(i) = self.ids.iter().position(|x| x == id) {
                self.ids.remove(i);
                self.h.remove(i);
                self.c.remove(i);
            }
        }
        for &id in arrivals {
            if self.ids.contains(&id) {
                return Err(GplError::AlreadyTracked(id));
            }
            self.ids.push(id);
            self.h.push(vec![0.0; self.dim]);
            self.c.push(vec![0.0; self.dim]);
        }
        Ok(())
    }

    pub fn h_tensor(&self) -> Tensor {
        Tensor::new(&[self.ids.len(), self.dim], self.h.concat()).expect("rows of equal width")
    }

    pub fn c_tensor(&self) -> Tensor {
        Tensor::new(&[self.ids.len(), self.dim], self.c.concat()).expect("rows of equal width")
    }

    /// Replaces every state with the rows of `h` and `c`.
    pub fn overwrite(&mut self, h: &Tensor, c: &Tensor) -> Result<()> {
        let n = self.ids.len();
        if h.shape() != [n, self.dim] || c.shape() != [n, self.dim] {
            return Err(GplError::Shape(format!(
                "state update {:?}/{:?} for {n} agents of width {}",
                h.shape(),
                c.shape(),
                self.dim
            )));
        }
        for i in 0..n {
            self.h[i] = h.row(i).to_vec();
            self.c[i] = c.row(i).to_vec();
        }
        Ok(())
    }
}

/// The recurrent states kept by the learner: value pathway, agent-model
/// pathway, and the target copy of the value pathway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub value: HiddenStates,
    pub model: HiddenStates,
    pub target: HiddenStates,
}

impl EmbeddingStore {
    pub fn new(value_dim: usize, model_dim: usize, ids: &[AgentId]) -> Self {
        Self {
            value: HiddenStates::zeros(value_dim, ids),
            model: HiddenStates::zeros(model_dim, ids),
            target: HiddenStates::zeros(value_dim, ids),
        }
    }

    /// Episode end: every state dropped, the next roster starts from zero.
    pub fn reset(&mut self, ids: &[AgentId]) {
        *self = Self::new(self.value.dim, self.model.dim, ids);
    }
}

/// Row `j`: `concat(x^j, u)` for every agent of `obs`, in observation order.
pub fn input_batch(obs: &Observation) -> Result<Tensor> {
    let n = obs.agents.len();
    if n == 0 {
        return Err(GplError::Shape("observation without agents".into()));
    }
    let width = obs.agents[0].1.len() + obs.u.len();
    let mut data = Vec::with_capacity(n * width);
    for (_, x) in &obs.agents {
        data.extend_from_slice(x);
        data.extend_from_slice(&obs.u);
    }
    Ok(Tensor::new(&[n, width], data)?)
}

/// Applies the membership change to `states` and returns the input batch
/// aligned with them.
pub fn preprocess(
    obs: &Observation,
    states: &mut HiddenStates,
    departures: &[AgentId],
    arrivals: &[AgentId],
) -> Result<Tensor> {
    states.apply_change(departures, arrivals)?;
    if states.ids() != obs.ids().as_slice() {
        return Err(GplError::Misaligned {
            states: states.ids().to_vec(),
            observed: obs.ids(),
        });
    }
    input_batch(obs)
}

/// Two fully connected layers followed by an LSTM cell, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    fc: Mlp,
    lstm: LstmCell,
}

impl Embedder {
    pub fn new(prefix: &str, input: usize, fc: &[usize], hidden: usize, act: Activation) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(fc);
        let fc_out = *sizes.last().unwrap();
        Ok(Self {
            fc: Mlp::new(format!("{prefix}.fc"), &sizes, act, act)?,
            lstm: LstmCell::new(format!("{prefix}.lstm"), fc_out, hidden)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn input(&self) -> usize {
        self.fc.input_dim()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, b: Var<'t>, h: Var<'t>, c: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let z = self.fc.forward(p, b)?;
        Ok(self.lstm.step(p, z, h, c)?)
    }

    /// Embeds a batch against stored states, returning `(h', c')`.
    pub fn embed<'t>(&self, p: &Bound<'t>, b: &Tensor, states: &HiddenStates) -> Result<(Var<'t>, Var<'t>)> {
        if b.rows() != states.ids().len() {
            return Err(GplError::Shape(format!(
                "batch of {} rows for {} stored states",
                b.rows(),
                states.ids().len()
            )));
        }
        let tape = p.get(&self.lstm.bias_name("i"))?.tape();
        self.forward(
            p,
            tape.constant(b.clone()),
            tape.constant(states.h_tensor()),
            tape.constant(states.c_tensor()),
        )
    }
}

impl Block for Embedder {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> crate::nn::Result<()> {
        self.fc.init(store, rng)?;
        self.lstm.init(store, rng)
    }
}
