//! An environment, its open roster, and the scripted teammates, stepped as a
//! single-agent problem from the learner's side.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvConfig, EnvError, Observation, StepOutcome};
use crate::osbg::{reset_roster, AgentId, JointAgentAction, MembershipChange, OpennessConfig, OsbgError, Roster, LEARNER};
use crate::teammates::{teammate_act, TeammateError, TeammateMemory};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Osbg(#[from] OsbgError),
    #[error(transparent)]
    Teammate(#[from] TeammateError),
    #[error("type {ty} does not belong to this environment")]
    PoolMismatch { ty: String },
    #[error("learner action {0} is out of range")]
    BadAction(usize),
}

/// Result of one learner step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub joint: JointAgentAction,
    pub outcome: StepOutcome,
    /// Roster change applied after the move; `next` already reflects it.
    pub change: MembershipChange,
    pub next: Observation,
}

#[derive(Debug, Clone)]
pub struct OpenWorld {
    env_cfg: EnvConfig,
    openness: OpennessConfig,
    env: Env,
    roster: Roster,
    memories: BTreeMap<AgentId, TeammateMemory>,
    rng: ChaCha8Rng,
    episode_step: u64,
}

impl OpenWorld {
    /// Builds the world and starts the first episode.
    pub fn new(env_cfg: EnvConfig, openness: OpennessConfig, seed: u64) -> Result<(Self, Observation), WorldError> {
        openness.validate()?;
        if let Some(t) = openness.type_pool.iter().find(|t| t.env != env_cfg.kind()) {
            return Err(WorldError::PoolMismatch { ty: t.to_string() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (roster, _) = reset_roster(&mut rng, &openness);
        let mut w = Self {
            env: env_cfg.build(),
            env_cfg,
            openness,
            roster,
            memories: BTreeMap::new(),
            rng,
            episode_step: 0,
        };
        let obs = w.reset()?;
        Ok((w, obs))
    }

    /// New episode with a freshly sampled roster.
    pub fn reset(&mut self) -> Result<Observation, WorldError> {
        let (roster, arrivals) = reset_roster(&mut self.rng, &self.openness);
        self.roster = roster;
        self.memories.clear();
        for a in &arrivals {
            self.memories.insert(a.id, TeammateMemory::sample(&mut self.rng));
        }
        self.env.reset(&self.roster.agents(), &mut self.rng)?;
        self.episode_step = 0;
        self.observe()
    }

    pub fn observe(&self) -> Result<Observation, WorldError> {
        Ok(self.env.encode(&self.roster.agents())?)
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_cfg
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn n_actions(&self) -> usize {
        self.env.n_actions()
    }

    pub fn episode_step(&self) -> u64 {
        self.episode_step
    }

    /// Teammates pick their actions on the current state, everybody moves, and
    /// then the openness process runs (skipped on the final step).
    pub fn step(&mut self, learner_action: usize) -> Result<Step, WorldError> {
        if learner_action >= self.n_actions() {
            return Err(WorldError::BadAction(learner_action));
        }
        let mut pairs = vec![(LEARNER, learner_action)];
        for &id in self.roster.teammates() {
            let ty = self.roster.member(id).expect("listed teammate").type_id;
            let a = teammate_act(ty, &self.env, id, &self.memories[&id], &mut self.rng)?;
            pairs.push((id, a));
        }
        let joint = JointAgentAction::new(pairs)?;
        joint.check_covers(&self.roster.agents())?;
        let outcome = self.env.step(&joint, LEARNER, &mut self.rng)?;
        self.episode_step += 1;

        let change = if outcome.done {
            MembershipChange::default()
        } else {
            let change = self.roster.step(&mut self.rng, &self.openness, self.episode_step);
            for id in change.departed() {
                self.env.remove_agent(id);
                self.memories.remove(&id);
            }
            for a in &change.arrivals {
                self.env.add_agent(a.id, &mut self.rng)?;
                self.memories.insert(a.id, TeammateMemory::sample(&mut self.rng));
            }
            change
        };
        let next = self.observe()?;
        Ok(Step {
            joint,
            outcome,
            change,
            next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, LbfConfig, WolfConfig};
    use crate::teammates::TypeId;

    fn wolf(limit: usize) -> (OpenWorld, Observation) {
        let cfg = OpennessConfig::wolfpack(limit, TypeId::pool(EnvKind::Wolfpack));
        OpenWorld::new(EnvConfig::Wolfpack(WolfConfig::default()), cfg, 4).unwrap()
    }

    #[test]
    fn observation_tracks_roster() {
        let (mut w, mut obs) = wolf(4);
        for t in 0..2000 {
            assert_eq!(obs.ids(), w.roster().agents());
            assert!(w.roster().size() <= 4);
            let s = w.step(t % 5).unwrap();
            assert_eq!(s.joint.len(), obs.agents.len());
            obs = if s.outcome.done { w.reset().unwrap() } else { s.next };
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let (mut w, _) = wolf(3);
            (0..300).map(|t| w.step(t % 5).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pool_must_match_environment() {
        let cfg = OpennessConfig::lbf(3, TypeId::pool(EnvKind::Wolfpack));
        assert!(OpenWorld::new(EnvConfig::Lbf(LbfConfig::default()), cfg, 0).is_err());
    }

    #[test]
    fn out_of_range_learner_action() {
        let (mut w, _) = wolf(2);
        assert!(matches!(w.step(5), Err(WorldError::BadAction(5))));
    }
}
