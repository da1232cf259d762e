//! Agent bookkeeping for open teams: agent ids, joint agent-actions, and the
//! duration-driven process that admits and removes teammates.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::teammates::TypeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// The controlled agent. Always present.
pub const LEARNER: AgentId = AgentId(0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OsbgError {
    #[error("agent {0} given more than one action")]
    DuplicateAction(AgentId),
    #[error("agent {0} is not in the roster")]
    NotInRoster(AgentId),
    #[error("agent {0} has no action")]
    MissingAction(AgentId),
    #[error("invalid openness config: {0}")]
    Config(String),
}

/// One action per participating agent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JointAgentAction {
    actions: BTreeMap<AgentId, usize>,
}

impl JointAgentAction {
    pub fn new(pairs: impl IntoIterator<Item = (AgentId, usize)>) -> Result<Self, OsbgError> {
        let mut actions = BTreeMap::new();
        for (id, a) in pairs {
            if actions.insert(id, a).is_some() {
                return Err(OsbgError::DuplicateAction(id));
            }
        }
        Ok(Self { actions })
    }

    pub fn get(&self, id: AgentId) -> Option<usize> {
        self.actions.get(&id).copied()
    }

    pub fn action(&self, id: AgentId) -> Result<usize, OsbgError> {
        self.get(id).ok_or(OsbgError::MissingAction(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentId, usize)> + '_ {
        self.actions.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Every acting agent is a member and every member acts.
    pub fn check_covers(&self, members: &[AgentId]) -> Result<(), OsbgError> {
        if let Some(id) = self.actions.keys().find(|id| !members.contains(id)) {
            return Err(OsbgError::NotInRoster(*id));
        }
        if let Some(id) = members.iter().find(|id| !self.actions.contains_key(id)) {
            return Err(OsbgError::MissingAction(*id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessConfig {
    /// Inclusive range of steps a teammate stays once admitted.
    pub active: (u32, u32),
    /// Inclusive range of steps a departed teammate waits before re-entry.
    pub waiting: (u32, u32),
    /// Maximum number of agents present, learner included.
    pub team_limit: usize,
    pub type_pool: Vec<TypeId>,
}

impl OpennessConfig {
    pub fn wolfpack(team_limit: usize, type_pool: Vec<TypeId>) -> Self {
        Self {
            active: (25, 35),
            waiting: (15, 25),
            team_limit,
            type_pool,
        }
    }

    pub fn lbf(team_limit: usize, type_pool: Vec<TypeId>) -> Self {
        Self {
            active: (15, 25),
            waiting: (10, 20),
            team_limit,
            type_pool,
        }
    }

    pub fn validate(&self) -> Result<(), OsbgError> {
        let bad = |m: &str| Err(OsbgError::Config(m.to_string()));
        if self.active.0 > self.active.1 || self.waiting.0 > self.waiting.1 {
            return bad("duration range with lo > hi");
        }
        if self.active.0 == 0 {
            return bad("active duration must be at least one step");
        }
        if self.team_limit == 0 {
            return bad("team limit must be at least 1");
        }
        if self.team_limit > 1 && self.type_pool.is_empty() {
            return bad("empty type pool");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub type_id: TypeId,
    pub arrival: u64,
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: AgentId,
    pub type_id: TypeId,
    /// Sampled active duration.
    pub active: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub id: AgentId,
    /// Sampled waiting duration before the slot may be refilled.
    pub waiting: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MembershipChange {
    pub departures: Vec<Departure>,
    pub arrivals: Vec<Arrival>,
}

impl MembershipChange {
    pub fn is_empty(&self) -> bool {
        self.departures.is_empty() && self.arrivals.is_empty()
    }

    pub fn departed(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.departures.iter().map(|d| d.id)
    }

    pub fn arrived(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.arrivals.iter().map(|a| a.id)
    }
}

/// Agents currently present plus the queue of teammates waiting to re-enter.
///
/// Ids are never reused within an episode: a re-entering teammate is a new
/// individual with a fresh type draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    order: Vec<AgentId>,
    members: BTreeMap<AgentId, Member>,
    /// Release steps, in queue order.
    waiting: VecDeque<u64>,
    next_id: u32,
    limit: usize,
}

impl Roster {
    /// Learner first, then teammates in arrival order.
    pub fn agents(&self) -> Vec<AgentId> {
        std::iter::once(LEARNER).chain(self.order.iter().copied()).collect()
    }

    pub fn teammates(&self) -> &[AgentId] {
        &self.order
    }

    pub fn member(&self, id: AgentId) -> Option<&Member> {
        self.members.get(&id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        id == LEARNER || self.members.contains_key(&id)
    }

    /// Agents present, learner included.
    pub fn size(&self) -> usize {
        1 + self.order.len()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }

    fn admit<R: Rng + ?Sized>(&mut self, rng: &mut R, cfg: &OpennessConfig, step: u64) -> Arrival {
        let id = AgentId(self.next_id);
        self.next_id += 1;
        let type_id = cfg.type_pool[rng.gen_range(0..cfg.type_pool.len())];
        let active = rng.gen_range(cfg.active.0..=cfg.active.1);
        self.order.push(id);
        self.members.insert(
            id,
            Member {
                type_id,
                arrival: step,
                remaining: active,
            },
        );
        Arrival { id, type_id, active }
    }

    /// Advances the openness process to `step`: teammates whose active time is
    /// used up leave and queue for re-entry; queued teammates whose wait is over
    /// re-enter in FIFO order while the team limit allows.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        cfg: &OpennessConfig,
        step: u64,
    ) -> MembershipChange {
        let mut change = MembershipChange::default();
        let mut leaving = Vec::new();
        for id in &self.order {
            let m = self.members.get_mut(id).expect("order and members agree");
            m.remaining -= 1;
            if m.remaining == 0 {
                leaving.push(*id);
            }
        }
        for id in leaving {
            self.order.retain(|x| *x != id);
            self.members.remove(&id);
            let waiting = rng.gen_range(cfg.waiting.0..=cfg.waiting.1);
            self.waiting.push_back(step + u64::from(waiting));
            change.departures.push(Departure { id, waiting });
        }
        while self.size() < self.limit {
            match self.waiting.front() {
                Some(&release) if release <= step => {
                    self.waiting.pop_front();
                    change.arrivals.push(self.admit(rng, cfg, step));
                }
                _ => break,
            }
        }
        change
    }
}

/// Start-of-episode roster: the learner plus `Uniform{0..limit-1}` teammates.
/// The remaining `limit - 1 - count` teammates start in the waiting queue with
/// freshly sampled waiting durations.
pub fn reset_roster<R: Rng + ?Sized>(rng: &mut R, cfg: &OpennessConfig) -> (Roster, Vec<Arrival>) {
    let mut roster = Roster {
        order: Vec::new(),
        members: BTreeMap::new(),
        waiting: VecDeque::new(),
        next_id: LEARNER.0 + 1,
        limit: cfg.team_limit,
    };
    let slots = cfg.team_limit.saturating_sub(1);
    let initial = if slots == 0 { 0 } else { rng.gen_range(0..=slots) };
    let arrivals = (0..initial).map(|_| roster.admit(rng, cfg, 0)).collect();
    let mut releases: Vec<u64> = (initial..slots)
        .map(|_| u64::from(rng.gen_range(cfg.waiting.0..=cfg.waiting.1)))
        .collect();
    releases.sort_unstable();
    roster.waiting.extend(releases);
    (roster, arrivals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool() -> Vec<TypeId> {
        vec!["wolf.H2".parse().unwrap(), "wolf.H3".parse().unwrap()]
    }

    #[test]
    fn joint_action_rejects_duplicates() {
        let err = JointAgentAction::new([(LEARNER, 1), (AgentId(2), 0), (LEARNER, 3)]).unwrap_err();
        assert_eq!(err, OsbgError::DuplicateAction(LEARNER));
    }

    #[test]
    fn joint_action_coverage() {
        let a = JointAgentAction::new([(LEARNER, 1), (AgentId(2), 0)]).unwrap();
        assert!(a.check_covers(&[LEARNER, AgentId(2)]).is_ok());
        assert_eq!(a.check_covers(&[LEARNER]), Err(OsbgError::NotInRoster(AgentId(2))));
        assert_eq!(
            a.check_covers(&[LEARNER, AgentId(2), AgentId(3)]),
            Err(OsbgError::MissingAction(AgentId(3)))
        );
    }

    #[test]
    fn limit_one_is_learner_only() {
        let cfg = OpennessConfig::wolfpack(1, pool());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut r, arrivals) = reset_roster(&mut rng, &cfg);
        assert!(arrivals.is_empty());
        for t in 1..500 {
            assert!(r.step(&mut rng, &cfg, t).is_empty());
            assert_eq!(r.agents(), vec![LEARNER]);
        }
    }

    #[test]
    fn initial_count_bounded() {
        let cfg = OpennessConfig::wolfpack(3, pool());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [0usize; 3];
        for _ in 0..10_000 {
            let (r, _) = reset_roster(&mut rng, &cfg);
            assert!(r.size() <= 3);
            seen[r.size() - 1] += 1;
            assert_eq!(r.teammates().len() + r.waiting(), 2);
        }
        assert!(seen.iter().all(|&c| c > 0));
    }

    #[test]
    fn remaining_decrements_once_per_step() {
        let cfg = OpennessConfig::wolfpack(3, pool());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut r, _) = reset_roster(&mut rng, &cfg);
        for t in 1..300u64 {
            let before: BTreeMap<AgentId, u32> =
                r.teammates().iter().map(|&id| (id, r.member(id).unwrap().remaining)).collect();
            let change = r.step(&mut rng, &cfg, t);
            for (id, rem) in before {
                match r.member(id) {
                    Some(m) => assert_eq!(m.remaining, rem - 1),
                    None => {
                        assert_eq!(rem, 1);
                        assert!(change.departed().any(|d| d == id));
                    }
                }
            }
        }
    }

    #[test]
    fn blocked_reentry_waits_fifo() {
        let cfg = OpennessConfig {
            active: (3, 3),
            waiting: (1, 1),
            team_limit: 2,
            type_pool: pool(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut r, _) = reset_roster(&mut rng, &cfg);
        // put two extra teammates in the queue, both released immediately
        r.waiting.extend([0, 0]);
        let mut max = 0;
        for t in 1..100 {
            r.step(&mut rng, &cfg, t);
            max = max.max(r.size());
        }
        assert_eq!(max, 2);
    }

    #[test]
    fn ids_never_reused() {
        let cfg = OpennessConfig::lbf(3, vec!["lbf.H1".parse().unwrap()]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut r, first) = reset_roster(&mut rng, &cfg);
        let mut seen: Vec<AgentId> = first.iter().map(|a| a.id).collect();
        for t in 1..1000 {
            for a in r.step(&mut rng, &cfg, t).arrivals {
                assert!(!seen.contains(&a.id));
                seen.push(a.id);
            }
        }
    }
}
