use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{resolve_moves, Move, Pos};
use super::{Capture, EnvError, Observation, StepOutcome};
use crate::osbg::{AgentId, JointAgentAction};

pub const WOLF_ACTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WolfConfig {
    pub size: i32,
    pub horizon: u32,
    pub prey: usize,
    /// Per-pack-member capture reward.
    pub capture_reward: f64,
    /// Reward for standing next to a prey with no other hunter beside it.
    pub lone_penalty: f64,
}

impl Default for WolfConfig {
    fn default() -> Self {
        Self {
            size: 10,
            horizon: 200,
            prey: 2,
            capture_reward: 2.0,
            lone_penalty: -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WolfState {
    pub cfg: WolfConfig,
    pub hunters: BTreeMap<AgentId, Pos>,
    pub prey: Vec<Pos>,
    pub step: u32,
}

impl WolfState {
    pub fn empty(cfg: WolfConfig) -> Self {
        Self {
            cfg,
            hunters: BTreeMap::new(),
            prey: Vec::new(),
            step: 0,
        }
    }

    pub fn occupied(&self, p: Pos) -> bool {
        self.hunters.values().any(|&h| h == p) || self.prey.contains(&p)
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

    pub fn reset<R: Rng + ?Sized>(&mut self, agents: &[AgentId], rng: &mut R) -> Result<(), EnvError> {
        self.hunters.clear();
        self.prey.clear();
        self.step = 0;
        for _ in 0..self.cfg.prey {
            let p = self.random_free_cell(rng)?;
            self.prey.push(p);
        }
        for &id in agents {
            self.add_agent(id, rng)?;
        }
        Ok(())
    }

    pub fn add_agent<R: Rng + ?Sized>(&mut self, id: AgentId, rng: &mut R) -> Result<(), EnvError> {
        if self.hunters.contains_key(&id) {
            return Err(EnvError::AlreadyPresent(id));
        }
        let p = self.random_free_cell(rng)?;
        self.hunters.insert(id, p);
        Ok(())
    }

    pub fn remove_agent(&mut self, id: AgentId) {
        self.hunters.remove(&id);
    }

    /// Hunters 4-adjacent to `prey`, in id order.
    pub fn adjacent_hunters(&self, prey: Pos) -> Vec<AgentId> {
        self.hunters
            .iter()
            .filter(|(_, &h)| h.is_adjacent(prey))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Hunters move; prey with at least two adjacent hunters are captured and
    /// respawn at a random empty cell; remaining prey then flee. Rewards are
    /// settled on the post-move hunter positions.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        actions: &JointAgentAction,
        learner: AgentId,
        rng: &mut R,
    ) -> Result<StepOutcome, EnvError> {
        for (id, a) in actions.iter() {
            if !self.hunters.contains_key(&id) {
                return Err(EnvError::UnknownAgent(id));
            }
            if a >= WOLF_ACTIONS {
                return Err(EnvError::BadAction { agent: id, action: a });
            }
        }
        let intents: BTreeMap<AgentId, Move> = actions
            .iter()
            .filter_map(|(id, a)| Move::from_index(a).map(|m| (id, m)))
            .collect();
        self.hunters = resolve_moves(&self.hunters, &intents, &self.prey, self.cfg.size);

        let mut reward = 0.0;
        let mut captures = Vec::new();
        for (i, &p) in self.prey.iter().enumerate() {
            let pack = self.adjacent_hunters(p);
            if pack.len() >= 2 {
                if pack.contains(&learner) {
                    reward += self.cfg.capture_reward * pack.len() as f64;
                }
                captures.push(Capture { prey: i, pack });
            } else if pack == [learner] {
                reward += self.cfg.lone_penalty;
            }
        }
        for c in &captures {
            // vacate first so the old cell is eligible
            self.prey[c.prey] = Pos::new(-1, -1);
            self.prey[c.prey] = self.random_free_cell(rng)?;
        }

        let mut prey_pos = BTreeMap::new();
        let mut prey_moves = BTreeMap::new();
        for i in 0..self.prey.len() {
            if captures.iter().any(|c| c.prey == i) {
                continue;
            }
            prey_pos.insert(i, self.prey[i]);
            prey_moves.insert(i, prey_act(self, i, rng));
        }
        let hunters: Vec<Pos> = self
            .hunters
            .values()
            .copied()
            .chain(captures.iter().map(|c| self.prey[c.prey]))
            .collect();
        for (i, p) in resolve_moves(&prey_pos, &prey_moves, &hunters, self.cfg.size) {
            self.prey[i] = p;
        }

        self.step += 1;
        Ok(StepOutcome {
            reward,
            done: self.step >= self.cfg.horizon,
            captures,
            ..Default::default()
        })
    }

    /// `u`: `(row, col)` per prey. `x`: `(row, col)` per hunter.
    pub fn encode(&self, order: &[AgentId]) -> Result<Observation, EnvError> {
        let u = self
            .prey
            .iter()
            .flat_map(|p| [f64::from(p.row), f64::from(p.col)])
            .collect();
        let agents = order
            .iter()
            .map(|id| {
                let p = self.hunters.get(id).ok_or(EnvError::UnknownAgent(*id))?;
                Ok((*id, vec![f64::from(p.row), f64::from(p.col)]))
            })
            .collect::<Result<_, EnvError>>()?;
        Ok(Observation { u, agents })
    }
}

/// Flee heuristic: among stay and the legal moves into free cells, pick one
/// that maximises the minimum Chebyshev distance to any hunter, ties uniform.
pub fn prey_act<R: Rng + ?Sized>(state: &WolfState, prey: usize, rng: &mut R) -> Move {
    let here = state.prey[prey];
    let score = |p: Pos| {
        state
            .hunters
            .values()
            .map(|&h| h.chebyshev(p))
            .min()
            .unwrap_or(i32::MAX)
    };
    let mut best = Vec::with_capacity(5);
    let mut best_score = i32::MIN;
    for m in Move::ALL {
        let t = here.offset(m);
        if m != Move::Stay && (!t.in_bounds(state.cfg.size) || state.occupied(t)) {
            continue;
        }
        let s = score(t);
        if s > best_score {
            best_score = s;
            best.clear();
        }
        if s == best_score {
            best.push(m);
        }
    }
    best[rng.gen_range(0..best.len())]
}
