use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{resolve_moves, Move, Pos};
use super::{EnvError, Observation, StepOutcome, SENTINEL};
use crate::osbg::{AgentId, JointAgentAction};

pub const LBF_ACTIONS: usize = 6;
pub const LOAD: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfConfig {
    pub size: i32,
    pub horizon: u32,
    pub objects: usize,
    pub max_level: u32,
}

impl Default for LbfConfig {
    fn default() -> Self {
        Self {
            size: 8,
            horizon: 50,
            objects: 3,
            max_level: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfAgent {
    pub pos: Pos,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfObject {
    pub pos: Pos,
    pub level: u32,
    pub collected: bool,
}

/// Level-based foraging. Objects are listed in creation order and keep their
/// slot after being collected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfState {
    pub cfg: LbfConfig,
    pub agents: BTreeMap<AgentId, LbfAgent>,
    pub objects: Vec<LbfObject>,
    pub step: u32,
}

impl LbfState {
    pub fn empty(cfg: LbfConfig) -> Self {
        Self {
            cfg,
            agents: BTreeMap::new(),
            objects: Vec::new(),
            step: 0,
        }
    }

    fn occupied(&self, p: Pos) -> bool {
        self.agents.values().any(|a| a.pos == p)
            || self.objects.iter().any(|o| !o.collected && o.pos == p)
    }

    fn random_free_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Pos, EnvError> {
        let n = self.cfg.size;
        let free: Vec<Pos> = (0..n)
            .flat_map(|r| (0..n).map(move |c| Pos::new(r, c)))
            .filter(|&p| !self.occupied(p))
            .collect();
        if free.is_empty() {
            return Err(EnvError::GridFull);
        }
        Ok(free[rng.gen_range(0..free.len())])
    }

    /// New episode: objects and agents at distinct uniformly drawn cells,
    /// levels uniform in `1..=max_level`.
    pub fn reset<R: Rng + ?Sized>(&mut self, agents: &[AgentId], rng: &mut R) -> Result<(), EnvError> {
        self.agents.clear();
        self.objects.clear();
        self.step = 0;
        for _ in 0..self.cfg.objects {
            let pos = self.random_free_cell(rng)?;
            let level = rng.gen_range(1..=self.cfg.max_level);
            self.objects.push(LbfObject {
                pos,
                level,
                collected: false,
            });
        }
        for &id in agents {
            self.add_agent(id, rng)?;
        }
        Ok(())
    }

    pub fn add_agent<R: Rng + ?Sized>(&mut self, id: AgentId, rng: &mut R) -> Result<(), EnvError> {
        if self.agents.contains_key(&id) {
            return Err(EnvError::AlreadyPresent(id));
        }
        let pos = self.random_free_cell(rng)?;
        let level = rng.gen_range(1..=self.cfg.max_level);
        self.agents.insert(id, LbfAgent { pos, level });
        Ok(())
    }

    pub fn remove_agent(&mut self, id: AgentId) {
        self.agents.remove(&id);
    }

    pub fn remaining_objects(&self) -> usize {
        self.objects.iter().filter(|o| !o.collected).count()
    }

    /// Moves resolve first; then every uncollected object whose 4-adjacent
    /// loaders have a combined level at least its own is collected. The learner
    /// earns the level of each object it helped collect.
    pub fn step(&mut self, actions: &JointAgentAction, learner: AgentId) -> Result<StepOutcome, EnvError> {
        for (id, a) in actions.iter() {
            if !self.agents.contains_key(&id) {
                return Err(EnvError::UnknownAgent(id));
            }
            if a >= LBF_ACTIONS {
                return Err(EnvError::BadAction { agent: id, action: a });
            }
        }
        let positions: BTreeMap<AgentId, Pos> = self.agents.iter().map(|(&k, a)| (k, a.pos)).collect();
        let intents: BTreeMap<AgentId, Move> = actions
            .iter()
            .filter_map(|(id, a)| Move::from_index(a).map(|m| (id, m)))
            .collect();
        let blocked: Vec<Pos> = self.objects.iter().filter(|o| !o.collected).map(|o| o.pos).collect();
        for (id, p) in resolve_moves(&positions, &intents, &blocked, self.cfg.size) {
            self.agents.get_mut(&id).unwrap().pos = p;
        }

        let loaders: Vec<AgentId> = actions.iter().filter(|&(_, a)| a == LOAD).map(|(id, _)| id).collect();
        let mut reward = 0.0;
        let mut collected = Vec::new();
        for (slot, obj) in self.objects.iter_mut().enumerate() {
            if obj.collected {
                continue;
            }
            let around: Vec<AgentId> = loaders
                .iter()
                .copied()
                .filter(|id| self.agents[id].pos.is_adjacent(obj.pos))
                .collect();
            let total: u32 = around.iter().map(|id| self.agents[id].level).sum();
            if !around.is_empty() && total >= obj.level {
                obj.collected = true;
                if around.contains(&learner) {
                    reward += f64::from(obj.level);
                }
                collected.push((slot, around));
            }
        }
        self.step += 1;
        let done = self.remaining_objects() == 0 || self.step >= self.cfg.horizon;
        Ok(StepOutcome {
            reward,
            done,
            collected,
            ..Default::default()
        })
    }

    /// `u`: `(row, col, level)` per object slot, `-1` once collected.
    /// `x`: `(row, col, level)` per agent.
    pub fn encode(&self, order: &[AgentId]) -> Result<Observation, EnvError> {
        let mut u = Vec::with_capacity(3 * self.cfg.objects);
        for slot in 0..self.cfg.objects {
            match self.objects.get(slot) {
                Some(o) if !o.collected => {
                    u.extend([f64::from(o.pos.row), f64::from(o.pos.col), f64::from(o.level)])
                }
                _ => u.extend([SENTINEL; 3]),
            }
        }
        let agents = order
            .iter()
            .map(|id| {
                let a = self.agents.get(id).ok_or(EnvError::UnknownAgent(*id))?;
                Ok((*id, vec![f64::from(a.pos.row), f64::from(a.pos.col), f64::from(a.level)]))
            })
            .collect::<Result<_, EnvError>>()?;
        Ok(Observation { u, agents })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osbg::LEARNER;

    const MATE: AgentId = AgentId(1);

    fn state(agents: &[(AgentId, (i32, i32), u32)], objects: &[((i32, i32), u32)]) -> LbfState {
        let mut s = LbfState::empty(LbfConfig::default());
        for &(id, (r, c), level) in agents {
            s.agents.insert(id, LbfAgent { pos: Pos::new(r, c), level });
        }
        for &((r, c), level) in objects {
            s.objects.push(LbfObject {
                pos: Pos::new(r, c),
                level,
                collected: false,
            });
        }
        s
    }

    fn act(pairs: &[(AgentId, usize)]) -> JointAgentAction {
        JointAgentAction::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn lone_learner_collects_equal_level() {
        let mut s = state(&[(LEARNER, (2, 2), 2)], &[((2, 3), 2), ((7, 7), 1), ((0, 7), 1)]);
        let out = s.step(&act(&[(LEARNER, LOAD)]), LEARNER).unwrap();
        assert_eq!(out.reward, 2.0);
        assert!(s.objects[0].collected);
    }

    #[test]
    fn lone_learner_too_weak() {
        let mut s = state(&[(LEARNER, (2, 2), 1)], &[((2, 3), 3)]);
        let out = s.step(&act(&[(LEARNER, LOAD)]), LEARNER).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!s.objects[0].collected);
    }

    #[test]
    fn joint_collection_sums_levels() {
        let mut s = state(&[(LEARNER, (2, 2), 1), (MATE, (3, 3), 2)], &[((2, 3), 3)]);
        let out = s.step(&act(&[(LEARNER, LOAD), (MATE, LOAD)]), LEARNER).unwrap();
        assert_eq!(out.reward, 3.0);
        assert!(s.objects[0].collected);
    }

    #[test]
    fn diagonal_loader_does_not_count() {
        let mut s = state(&[(LEARNER, (2, 2), 1), (MATE, (3, 4), 3)], &[((2, 3), 3)]);
        let out = s.step(&act(&[(LEARNER, LOAD), (MATE, LOAD)]), LEARNER).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn teammate_collection_gives_learner_nothing() {
        let mut s = state(&[(LEARNER, (0, 0), 1), (MATE, (3, 3), 2)], &[((3, 4), 2), ((6, 6), 1)]);
        let out = s.step(&act(&[(LEARNER, 4), (MATE, LOAD)]), LEARNER).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(s.objects[0].collected);
        assert!(!out.done);
    }

    #[test]
    fn done_when_all_collected_or_horizon() {
        let mut s = state(&[(LEARNER, (2, 2), 3)], &[((2, 3), 1)]);
        assert!(s.step(&act(&[(LEARNER, LOAD)]), LEARNER).unwrap().done);
        let mut s = state(&[(LEARNER, (2, 2), 3)], &[((5, 5), 1)]);
        for t in 1..=50 {
            let done = s.step(&act(&[(LEARNER, 4)]), LEARNER).unwrap().done;
            assert_eq!(done, t == 50);
        }
    }

    #[test]
    fn unknown_agent_rejected() {
        let mut s = state(&[(LEARNER, (2, 2), 3)], &[]);
        assert!(matches!(
            s.step(&act(&[(MATE, 0)]), LEARNER),
            Err(EnvError::UnknownAgent(_))
        ));
    }

    #[test]
    fn encoding() {
        let mut s = state(&[(LEARNER, (3, 4), 2)], &[((0, 0), 1), ((1, 1), 2), ((2, 2), 3)]);
        let o = s.encode(&[LEARNER]).unwrap();
        assert_eq!(o.agents[0].1, vec![3., 4., 2.]);
        assert_eq!(o.u, vec![0., 0., 1., 1., 1., 2., 2., 2., 3.]);
        for obj in &mut s.objects {
            obj.collected = true;
        }
        assert_eq!(s.encode(&[LEARNER]).unwrap().u, vec![-1.0; 9]);
    }
}
