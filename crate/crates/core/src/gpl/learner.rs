//! One interface over the four learners: action values for acting, the
//! predicted joint value and agent-model likelihood for the losses, target
//! values, and the recurrent state bookkeeping between steps.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::baseline::{pad_observation, pad_probs, padded_len, QlNet, SlotMap};
use super::cg::{joint_q_var, UtilityTables};
use super::embed::{input_batch, HiddenStates};
use super::model::{nll_var, AgentModel, NetConfig, Prediction, Utilities, ValueNet, VALUE_PREFIX};
use super::{Algorithm, GplError, Result};
use crate::envs::{EnvConfig, Observation};
use crate::nn::{init_params, Block, Bound, ParamStore};
use crate::osbg::{AgentId, JointAgentAction, MembershipChange, LEARNER};
use crate::tensor::Var;

#[derive(Debug, Clone, PartialEq)]
enum Nets {
    Gpl { value: ValueNet, model: AgentModel },
    Ql { net: QlNet, model: Option<AgentModel> },
}

/// Recurrent state of one learner in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    /// Value pathway: every agent for GPL, the learner alone for the baselines.
    pub value: HiddenStates,
    /// Target copy of `value`.
    pub target: HiddenStates,
    /// Agent model pathway, every agent present.
    pub model: HiddenStates,
    pub slots: SlotMap,
}

enum ValueOut<'t> {
    Gpl(Utilities<'t>),
    Ql { q: Var<'t>, h: Var<'t>, c: Var<'t> },
}

/// Result of one forward pass on an observation.
pub struct Forward<'t> {
    pub ids: Vec<AgentId>,
    /// Action values the learner acts on.
    pub qbar: Vec<f64>,
    /// Predicted teammate distributions, in observation order without the
    /// learner. Empty for the plain baseline.
    pub probs: Vec<Vec<f64>>,
    value: ValueOut<'t>,
    prediction: Option<Prediction<'t>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    algorithm: Algorithm,
    nets: Nets,
    n_actions: usize,
    max_agents: usize,
}

impl Learner {
    /// `max_agents` sizes the padded baseline input; GPL ignores it.
    pub fn new(algorithm: Algorithm, cfg: &NetConfig, env: &EnvConfig, max_agents: usize) -> Result<Self> {
        let n_actions = env.n_actions();
        let per_agent = env.x_dim() + env.u_dim();
        let nets = if algorithm.is_gpl() {
            Nets::Gpl {
                value: ValueNet::new(cfg, per_agent, n_actions)?,
                model: AgentModel::new(cfg, per_agent, n_actions)?,
            }
        } else {
            if max_agents < 1 {
                return Err(GplError::Config("baseline input needs room for the learner".into()));
            }
            let with_probs = algorithm == Algorithm::QlAm;
            let input = padded_len(max_agents, env.x_dim(), env.u_dim(), n_actions, with_probs);
            Nets::Ql {
                net: QlNet::new(cfg, input, n_actions)?,
                model: if with_probs {
                    Some(AgentModel::new(cfg, per_agent, n_actions)?)
                } else {
                    None
                },
            }
        };
        Ok(Self {
            algorithm,
            nets,
            n_actions,
            max_agents,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn max_agents(&self) -> usize {
        self.max_agents
    }

    pub fn value_net(&self) -> Option<&ValueNet> {
        match &self.nets {
            Nets::Gpl { value, .. } => Some(value),
            Nets::Ql { .. } => None,
        }
    }

    pub fn agent_model(&self) -> Option<&AgentModel> {
        match &self.nets {
            Nets::Gpl { model, .. } => Some(model),
            Nets::Ql { model, .. } => model.as_ref(),
        }
    }

    pub fn init_params<R: RngCore>(&self, rng: &mut R) -> Result<ParamStore> {
        let blocks: Vec<&dyn Block> = match &self.nets {
            Nets::Gpl { value, model } => vec![value, model],
            Nets::Ql { net, model } => {
                let mut b: Vec<&dyn Block> = vec![net];
                if let Some(m) = model {
                    b.push(m);
                }
                b
            }
        };
        Ok(init_params(&blocks, rng)?)
    }

    /// The parameters that have a target copy.
    pub fn target_params(params: &ParamStore) -> ParamStore {
        params.with_prefix(&format!("{VALUE_PREFIX}."))
    }

    fn value_dim(&self) -> usize {
        match &self.nets {
            Nets::Gpl { value, .. } => value.hidden(),
            Nets::Ql { net, .. } => net.hidden(),
        }
    }

    /// Zero state for the agents of an episode's first observation.
    pub fn memory<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<Memory> {
        let ids = obs.ids();
        let value_ids = if self.algorithm.is_gpl() { ids.clone() } else { vec![LEARNER] };
        let model_ids = if self.agent_model().is_some() { ids.clone() } else { Vec::new() };
        let mut slots = SlotMap::new(if self.algorithm.is_gpl() { 1 } else { self.max_agents });
        if !self.algorithm.is_gpl() {
            slots.reset(&ids, rng)?;
        }
        Ok(Memory {
            value: HiddenStates::zeros(self.value_dim(), &value_ids),
            target: HiddenStates::zeros(self.value_dim(), &value_ids),
            model: HiddenStates::zeros(self.agent_model().map_or(0, AgentModel::hidden), &model_ids),
            slots,
        })
    }

    fn check_aligned(states: &HiddenStates, obs: &Observation) -> Result<()> {
        if states.ids() != obs.ids().as_slice() {
            return Err(GplError::Misaligned {
                states: states.ids().to_vec(),
                observed: obs.ids(),
            });
        }
        Ok(())
    }

    fn predict<'t>(&self, p: &Bound<'t>, obs: &Observation, states: &HiddenStates) -> Result<Option<Prediction<'t>>> {
        match self.agent_model() {
            None => Ok(None),
            Some(m) => {
                Self::check_aligned(states, obs)?;
                Ok(Some(m.forward(p, &input_batch(obs)?, states)?))
            }
        }
    }

    fn padded(&self, obs: &Observation, mem: &Memory, probs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut x = pad_observation(obs, &mem.slots)?;
        if self.algorithm == Algorithm::QlAm {
            let by_id: BTreeMap<AgentId, Vec<f64>> = obs.ids().into_iter().skip(1).zip(probs.iter().cloned()).collect();
            let pp = pad_probs(&by_id, &mem.slots, self.n_actions);
            let u = x.split_off(x.len() - obs.u.len());
            x.extend(pp);
            x.extend(u);
        }
        Ok(x)
    }

    /// Action values and everything the losses need, with value parameters
    /// `value` and agent model parameters `model` (usually the same binding).
    fn evaluate<'t>(
        &self,
        value: &Bound<'t>,
        model: &Bound<'t>,
        obs: &Observation,
        value_states: &HiddenStates,
        mem: &Memory,
    ) -> Result<Forward<'t>> {
        if obs.agents.first().map(|(id, _)| *id) != Some(LEARNER) {
            return Err(GplError::Shape("the learner must come first in the observation".into()));
        }
        let prediction = self.predict(model, obs, &mem.model)?;
        let probs = prediction.as_ref().map(Prediction::prob_rows).unwrap_or_default();
        let (qbar, value_out) = match &self.nets {
            Nets::Gpl { value: net, .. } => {
                Self::check_aligned(value_states, obs)?;
                let u = net.forward(value, &input_batch(obs)?, value_states)?;
                let qbar = net.tables(obs.ids(), &u)?.marginal_q(&probs)?;
                (qbar, ValueOut::Gpl(u))
            }
            Nets::Ql { net, .. } => {
                let x = self.padded(obs, mem, &probs)?;
                let (q, h, c) = net.forward(value, &x, value_states)?;
                (q.value().to_vec(), ValueOut::Ql { q, h, c })
            }
        };
        Ok(Forward {
            ids: obs.ids(),
            qbar,
            probs,
            value: value_out,
            prediction,
        })
    }

    /// Online forward pass on the current observation.
    pub fn forward<'t>(&self, p: &Bound<'t>, obs: &Observation, mem: &Memory) -> Result<Forward<'t>> {
        self.evaluate(p, p, obs, &mem.value, mem)
    }

    /// Plain utility tables of a GPL forward pass; `None` for the baselines.
    pub fn tables(&self, fwd: &Forward<'_>) -> Result<Option<UtilityTables>> {
        match (&self.nets, &fwd.value) {
            (Nets::Gpl { value, .. }, ValueOut::Gpl(u)) => Ok(Some(value.tables(fwd.ids.clone(), u)?)),
            _ => Ok(None),
        }
    }

    /// Predicted value of the joint action actually taken.
    pub fn joint_value<'t>(&self, fwd: &Forward<'t>, joint: &JointAgentAction) -> Result<Var<'t>> {
        match &fwd.value {
            ValueOut::Gpl(u) => {
                let acts = fwd
                    .ids
                    .iter()
                    .map(|&id| joint.get(id).ok_or(GplError::MissingAction(id)))
                    .collect::<Result<Vec<_>>>()?;
                joint_q_var(u.singular, u.factors, &acts, u.factors.shape()[1] / self.n_actions)
            }
            ValueOut::Ql { q, .. } => {
                let a = joint.get(LEARNER).ok_or(GplError::MissingAction(LEARNER))?;
                Ok(q.reshape(&[self.n_actions, 1])?.select_rows(vec![a])?.sum()?)
            }
        }
    }

    /// Negative log-likelihood of the teammates' observed actions and the
    /// number of floored probabilities; `None` without teammates or model.
    pub fn model_loss<'t>(&self, fwd: &Forward<'t>, joint: &JointAgentAction) -> Result<Option<(Var<'t>, usize)>> {
        let Some(probs) = fwd.prediction.as_ref().and_then(|p| p.probs) else {
            return Ok(None);
        };
        let acts = fwd.ids[1..]
            .iter()
            .map(|&id| joint.get(id).ok_or(GplError::MissingAction(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(nll_var(probs, &acts)?))
    }

    /// Stores the updated recurrent states and applies the roster change.
    pub fn advance<R: Rng + ?Sized>(
        &self,
        mem: &mut Memory,
        fwd: &Forward<'_>,
        change: &MembershipChange,
        rng: &mut R,
    ) -> Result<()> {
        let departed: Vec<AgentId> = change.departed().collect();
        let arrived: Vec<AgentId> = change.arrived().collect();
        match &fwd.value {
            ValueOut::Gpl(u) => {
                mem.value.overwrite(&u.h.value(), &u.c.value())?;
                mem.value.apply_change(&departed, &arrived)?;
                mem.target.apply_change(&departed, &arrived)?;
            }
            ValueOut::Ql { h, c, .. } => {
                mem.value.overwrite(&h.value(), &c.value())?;
                mem.slots.apply_change(&departed, &arrived, rng)?;
            }
        }
        if let Some(p) = &fwd.prediction {
            mem.model.overwrite(&p.h.value(), &p.c.value())?;
            mem.model.apply_change(&departed, &arrived)?;
        }
        Ok(())
    }

    /// Action values of the next observation under the target parameters,
    /// advancing the target state. `online` supplies the agent model.
    pub fn target_qbar(&self, target: &Bound<'_>, online: &Bound<'_>, next: &Observation, mem: &mut Memory) -> Result<Vec<f64>> {
        let fwd = self.evaluate(target, online, next, &mem.target, mem)?;
        let (h, c) = match &fwd.value {
            ValueOut::Gpl(u) => (u.h.value(), u.c.value()),
            ValueOut::Ql { h, c, .. } => (h.value(), c.value()),
        };
        mem.target.overwrite(&h, &c)?;
        Ok(fwd.qbar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, WolfConfig};
    use crate::osbg::OpennessConfig;
    use crate::teammates::TypeId;
    use crate::tensor::Tape;
    use crate::world::OpenWorld;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> (OpenWorld, Observation, EnvConfig) {
        let env = EnvConfig::Wolfpack(WolfConfig::default());
        let open = OpennessConfig::wolfpack(4, TypeId::pool(EnvKind::Wolfpack));
        let (w, o) = OpenWorld::new(env.clone(), open, 3).unwrap();
        (w, o, env)
    }

    fn rollout(algo: Algorithm) {
        let (mut w, mut obs, env) = world();
        let l = Learner::new(algo, &NetConfig::uniform(8), &env, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = l.init_params(&mut rng).unwrap();
        let tp = Learner::target_params(&p);
        let mut mem = l.memory(&obs, &mut rng).unwrap();
        for t in 0..300 {
            let tape = Tape::new();
            let b = p.bind(&tape);
            let fwd = l.forward(&b, &obs, &mem).unwrap();
            assert_eq!(fwd.qbar.len(), 5);
            let s = w.step(t % 5).unwrap();
            let q = l.joint_value(&fwd, &s.joint).unwrap();
            assert!(q.item().is_finite());
            let nll = l.model_loss(&fwd, &s.joint).unwrap();
            assert_eq!(nll.is_some(), algo.has_agent_model() && obs.agents.len() > 1);
            l.advance(&mut mem, &fwd, &s.change, &mut rng).unwrap();
            if s.outcome.done {
                obs = w.reset().unwrap();
                mem = l.memory(&obs, &mut rng).unwrap();
                continue;
            }
            let tt = Tape::new();
            let next = l.target_qbar(&tp.bind_const(&tt), &p.bind_const(&tt), &s.next, &mut mem).unwrap();
            assert_eq!(next.len(), 5);
            obs = s.next;
        }
    }

    #[test]
    fn every_algorithm_rolls_out() {
        for algo in [Algorithm::GplQ, Algorithm::GplSpi, Algorithm::Ql, Algorithm::QlAm] {
            rollout(algo);
        }
    }

    #[test]
    fn gpl_qbar_is_marginal_of_tables() {
        let (_, obs, env) = world();
        let l = Learner::new(Algorithm::GplQ, &NetConfig::uniform(8), &env, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = l.init_params(&mut rng).unwrap();
        let mem = l.memory(&obs, &mut rng).unwrap();
        let tape = Tape::new();
        let fwd = l.forward(&p.bind_const(&tape), &obs, &mem).unwrap();
        let ValueOut::Gpl(u) = &fwd.value else { panic!() };
        let tables = l.value_net().unwrap().tables(obs.ids(), u).unwrap();
        assert_eq!(tables.marginal_q(&fwd.probs).unwrap(), fwd.qbar);
        assert_eq!(fwd.probs.len(), obs.agents.len() - 1);
    }

    #[test]
    fn target_store_holds_value_params_only() {
        let (_, _, env) = world();
        let l = Learner::new(Algorithm::GplQ, &NetConfig::uniform(8), &env, 5).unwrap();
        let p = l.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = Learner::target_params(&p);
        assert!(t.names().all(|n| n.starts_with("value.")));
        assert_eq!(t.len() + p.with_prefix("model.").len(), p.len());
    }
}
