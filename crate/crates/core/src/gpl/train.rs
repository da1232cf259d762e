//! Synchronous training over parallel environments, plus supervised fitting
//! of the agent model alone.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{input_batch, HiddenStates};
use super::learner::{Learner, Memory};
use super::model::{nll_var, AgentModel, NetConfig};
use super::policy::{act, td_target, EpsilonSchedule};
use super::{Algorithm, GplError, Result};
use crate::envs::{EnvConfig, Observation};
use crate::nn::{adam_step, polyak_update, AdamState, Grads, ParamStore};
use crate::osbg::{JointAgentAction, MembershipChange, OpennessConfig};
use crate::tensor::Tape;
use crate::world::OpenWorld;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub net: NetConfig,
    pub gamma: f64,
    /// Boltzmann temperature for SPI.
    pub tau: f64,
    pub epsilon: EpsilonSchedule,
    pub lr: f64,
    /// Environment iterations between optimiser steps.
    pub update_every: u64,
    /// Target averaging rate, applied every iteration.
    pub polyak: f64,
    pub num_envs: usize,
    /// Environment transitions summed over all environments.
    pub total_steps: u64,
    /// Must be a multiple of `num_envs`.
    pub checkpoint_interval: u64,
    /// Team size the padded baseline input is built for.
    pub max_agents: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::GplQ,
            net: NetConfig::default(),
            gamma: 0.99,
            tau: 0.1,
            epsilon: EpsilonSchedule::default(),
            lr: 2.5e-4,
            update_every: 4,
            polyak: 1e-3,
            num_envs: 16,
            total_steps: 200_000,
            checkpoint_interval: 10_000,
            max_agents: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GplError::Config(m.into()));
        self.net.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        let e = &self.epsilon;
        if ![e.start, e.end, e.fraction].iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad("epsilon schedule entries must lie in [0, 1]");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if self.update_every == 0 {
            return bad("update_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak rate must lie in [0, 1]");
        }
        if self.num_envs == 0 {
            return bad("num_envs must be positive");
        }
        if self.checkpoint_interval == 0 || !self.checkpoint_interval.is_multiple_of(self.num_envs as u64) {
            return bad("checkpoint_interval must be a positive multiple of num_envs");
        }
        if self.max_agents < 2 {
            return bad("max_agents must allow at least one teammate");
        }
        Ok(())
    }
}

/// Running statistics since the last [`Trainer::take_window`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Undiscounted learner returns of episodes finished in the window.
    pub returns: Vec<f64>,
    pub value_loss: f64,
    pub nll: f64,
    /// Teammate actions scored by the agent model.
    pub predictions: u64,
    pub floored: u64,
    pub qbar: f64,
    pub steps: u64,
}

struct Slot {
    world: OpenWorld,
    obs: Observation,
    mem: Memory,
    ret: f64,
}

/// Derives independent seeds from one run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

pub struct Trainer {
    cfg: TrainConfig,
    learner: Learner,
    params: ParamStore,
    target: ParamStore,
    adam: AdamState,
    grads: Grads,
    slots: Vec<Slot>,
    rng: ChaCha8Rng,
    step: u64,
    iteration: u64,
    window: Window,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env: EnvConfig, openness: OpennessConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let learner = Learner::new(cfg.algorithm, &cfg.net, &env, cfg.max_agents)?;
        if !cfg.algorithm.is_gpl() && openness.team_limit > cfg.max_agents {
            return Err(GplError::Config(format!(
                "team limit {} exceeds the baseline input size {}",
                openness.team_limit, cfg.max_agents
            )));
        }
        let params = learner.init_params(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, 1)))?;
        let target = Learner::target_params(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
        let mut slots = Vec::with_capacity(cfg.num_envs);
        for i in 0..cfg.num_envs {
            let (world, obs) = OpenWorld::new(env.clone(), openness.clone(), sub_seed(seed, 100 + i as u64))?;
            let mem = learner.memory(&obs, &mut rng)?;
            slots.push(Slot { world, obs, mem, ret: 0.0 });
        }
        Ok(Self {
            adam: AdamState::new(cfg.lr),
            cfg,
            learner,
            params,
            target,
            grads: Grads::new(),
            slots,
            rng,
            step: 0,
            iteration: 0,
            window: Window::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn target(&self) -> &ParamStore {
        &self.target
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn take_window(&mut self) -> Window {
        std::mem::take(&mut self.window)
    }

    /// Runs iterations until `step >= until`; the last iteration steps only
    /// as many environments as remain.
    pub fn train_until(&mut self, until: u64) -> Result<()> {
        while self.step < until {
            let active = ((until - self.step) as usize).min(self.cfg.num_envs);
            self.iterate(active)?;
        }
        Ok(())
    }

    /// One transition in each of the first `active` environments, then the
    /// optimiser and target updates.
    pub fn iterate(&mut self, active: usize) -> Result<()> {
        for e in 0..active.min(self.slots.len()) {
            let g = self.env_step(e)?;
            self.grads.accumulate(&g)?;
        }
        self.iteration += 1;
        if self.iteration.is_multiple_of(self.cfg.update_every) {
            adam_step(&mut self.params, &self.grads, &mut self.adam)?;
            self.grads = Grads::new();
        }
        polyak_update(&mut self.target, &Learner::target_params(&self.params), self.cfg.polyak)?;
        Ok(())
    }

    fn env_step(&mut self, e: usize) -> Result<Grads> {
        let mode = self.cfg.algorithm.mode();
        let eps = self.cfg.epsilon.at(self.step, self.cfg.total_steps);
        let learner = &self.learner;
        let slot = &mut self.slots[e];
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let fwd = learner.forward(&bound, &slot.obs, &slot.mem)?;
        let a = act(&fwd.qbar, mode, eps, self.cfg.tau, &mut self.rng)?;
        let s = slot.world.step(a)?;
        let joint = learner.joint_value(&fwd, &s.joint)?;
        let nll = learner.model_loss(&fwd, &s.joint)?;
        learner.advance(&mut slot.mem, &fwd, &s.change, &mut self.rng)?;
        let r = s.outcome.reward;
        let y = if s.outcome.done {
            r
        } else {
            let ttape = Tape::new();
            let next = learner.target_qbar(
                &self.target.bind_const(&ttape),
                &self.params.bind_const(&ttape),
                &s.next,
                &mut slot.mem,
            )?;
            td_target(r, &next, mode, self.cfg.gamma, self.cfg.tau, false)?
        };
        let diff = joint.sub(tape.scalar(y))?;
        let value_loss = diff.mul(diff)?.scale(0.5)?;
        let mut loss = value_loss;
        let w = &mut self.window;
        if let Some((l, floored)) = nll {
            w.nll += l.item();
            w.predictions += fwd.probs.len() as u64;
            w.floored += floored as u64;
            loss = loss.add(l)?;
        }
        w.value_loss += value_loss.item();
        w.qbar += fwd.qbar.iter().sum::<f64>() / fwd.qbar.len() as f64;
        w.steps += 1;
        let grads = bound.grads(&tape.backward(loss)?);

        slot.ret += r;
        if s.outcome.done {
            w.returns.push(slot.ret);
            slot.ret = 0.0;
            slot.obs = slot.world.reset()?;
            slot.mem = learner.memory(&slot.obs, &mut self.rng)?;
        } else {
            slot.obs = s.next;
        }
        self.step += 1;
        Ok(grads)
    }
}

/// One learner-side step of a recorded rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs: Observation,
    pub joint: JointAgentAction,
    pub learner_action: usize,
    pub reward: f64,
    pub change: MembershipChange,
    pub next: Observation,
    pub done: bool,
}

/// Episodes of a uniformly random learner among scripted teammates, with
/// at least `transitions` records in total.
pub fn collect_random(
    env: EnvConfig,
    openness: OpennessConfig,
    transitions: usize,
    seed: u64,
) -> Result<Vec<Vec<TransitionRecord>>> {
    let (mut world, mut obs) = OpenWorld::new(env, openness, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let mut episodes = Vec::new();
    let mut current = Vec::new();
    let mut total = 0;
    while total < transitions {
        let a = rng.gen_range(0..world.n_actions());
        let s = world.step(a)?;
        total += 1;
        current.push(TransitionRecord {
            obs: obs.clone(),
            joint: s.joint,
            learner_action: a,
            reward: s.outcome.reward,
            change: s.change,
            next: s.next.clone(),
            done: s.outcome.done,
        });
        if s.outcome.done {
            episodes.push(std::mem::take(&mut current));
            obs = world.reset()?;
        } else {
            obs = s.next;
        }
    }
    if !current.is_empty() {
        episodes.push(current);
    }
    Ok(episodes)
}

/// Agent model forward pass on one recorded step, advancing `states`.
/// Returns the loss, the number of scored actions and, with `grad`, the
/// parameter gradients; `None` when the learner was alone.
fn model_step(
    model: &AgentModel,
    params: &ParamStore,
    t: &TransitionRecord,
    states: &mut HiddenStates,
    grad: bool,
) -> Result<Option<(f64, usize, Option<Grads>)>> {
    let tape = Tape::new();
    let bound = if grad { params.bind(&tape) } else { params.bind_const(&tape) };
    let pred = model.forward(&bound, &input_batch(&t.obs)?, states)?;
    let out = match pred.probs {
        None => None,
        Some(probs) => {
            let ids = t.obs.ids();
            let acts = ids[1..]
                .iter()
                .map(|&id| t.joint.get(id).ok_or(GplError::MissingAction(id)))
                .collect::<Result<Vec<_>>>()?;
            let (loss, _) = nll_var(probs, &acts)?;
            let g = if grad { Some(bound.grads(&tape.backward(loss)?)) } else { None };
            Some((loss.item(), acts.len(), g))
        }
    };
    states.overwrite(&pred.h.value(), &pred.c.value())?;
    let departed: Vec<_> = t.change.departed().collect();
    let arrived: Vec<_> = t.change.arrived().collect();
    states.apply_change(&departed, &arrived)?;
    Ok(out)
}

fn start_states(model: &AgentModel, ep: &[TransitionRecord]) -> HiddenStates {
    HiddenStates::zeros(model.hidden(), &ep.first().map(|t| t.obs.ids()).unwrap_or_default())
}

/// Mean negative log-likelihood per predicted teammate action.
pub fn model_nll(model: &AgentModel, params: &ParamStore, episodes: &[Vec<TransitionRecord>]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for ep in episodes {
        let mut states = start_states(model, ep);
        for t in ep {
            if let Some((l, n, _)) = model_step(model, params, t, &mut states, false)? {
                sum += l;
                count += n;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// One pass of supervised agent model training: gradients accumulate over
/// `update_every` scored steps between Adam updates.
pub fn fit_model(
    model: &AgentModel,
    params: &mut ParamStore,
    adam: &mut AdamState,
    episodes: &[Vec<TransitionRecord>],
    update_every: usize,
) -> Result<()> {
    let mut acc = Grads::new();
    let mut pending = 0;
    for ep in episodes {
        let mut states = start_states(model, ep);
        for t in ep {
            if let Some((_, _, Some(g))) = model_step(model, params, t, &mut states, true)? {
                acc.accumulate(&g)?;
                pending += 1;
                if pending == update_every.max(1) {
                    adam_step(params, &acc, adam)?;
                    acc = Grads::new();
                    pending = 0;
                }
            }
        }
    }
    if pending > 0 {
        adam_step(params, &acc, adam)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, WolfConfig};
    use crate::teammates::TypeId;

    fn small(algo: Algorithm) -> TrainConfig {
        TrainConfig {
            algorithm: algo,
            net: NetConfig::uniform(8),
            num_envs: 2,
            total_steps: 100,
            checkpoint_interval: 50,
            ..TrainConfig::default()
        }
    }

    fn wolf() -> (EnvConfig, OpennessConfig) {
        (
            EnvConfig::Wolfpack(WolfConfig::default()),
            OpennessConfig::wolfpack(3, TypeId::pool(EnvKind::Wolfpack)),
        )
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.num_envs, c.update_every, c.lr, c.polyak), (16, 4, 2.5e-4, 1e-3));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = small(Algorithm::GplSpi);
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = small(Algorithm::GplQ);
        c.checkpoint_interval = 51;
        assert!(c.validate().is_err());
        let (env, mut open) = wolf();
        open.team_limit = 6;
        assert!(Trainer::new(small(Algorithm::Ql), env, open, 0).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (env, open) = wolf();
        let mut c = small(Algorithm::GplQ);
        c.lr = 0.0;
        let mut t = Trainer::new(c, env, open, 5).unwrap();
        let before = t.params().clone();
        t.train_until(16).unwrap();
        assert_eq!(t.params(), &before);
    }

    #[test]
    fn runs_are_bit_identical() {
        for algo in [Algorithm::GplQ, Algorithm::GplSpi, Algorithm::Ql, Algorithm::QlAm] {
            let run = || {
                let (env, open) = wolf();
                let mut t = Trainer::new(small(algo), env, open, 9).unwrap();
                t.train_until(100).unwrap();
                (t.params().clone(), t.target().clone(), t.take_window())
            };
            let (a, b) = (run(), run());
            assert_eq!(a, b);
            assert_eq!(a.2.steps, 100);
        }
    }

    #[test]
    fn partial_last_iteration() {
        let (env, open) = wolf();
        let mut c = small(Algorithm::GplQ);
        c.num_envs = 4;
        c.checkpoint_interval = 4;
        let mut t = Trainer::new(c, env, open, 1).unwrap();
        t.train_until(10).unwrap();
        assert_eq!(t.step(), 10);
    }

    #[test]
    fn supervised_fit_lowers_training_nll() {
        let (env, open) = wolf();
        let data = collect_random(env.clone(), open, 600, 4).unwrap();
        assert!(data.iter().map(Vec::len).sum::<usize>() >= 600);
        let model = AgentModel::new(&NetConfig::uniform(16), env.x_dim() + env.u_dim(), env.n_actions()).unwrap();
        let mut p = crate::nn::init_params(&[&model], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = model_nll(&model, &p, &data).unwrap();
        let mut adam = AdamState::new(3e-3);
        for _ in 0..3 {
            fit_model(&model, &mut p, &mut adam, &data, 4).unwrap();
        }
        let after = model_nll(&model, &p, &data).unwrap();
        assert!(after < before, "{before} -> {after}");
    }
}
