//! WebAssembly bindings for a single static page: play the learner in an
//! open Wolfpack team, check the marginal action values against enumeration,
//! and score a pairwise utility table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use openteam::envs::{Env, EnvConfig, EnvKind, WolfConfig};
use openteam::gpl::UtilityTables;
use openteam::harness::analysis::{c_jk, qbar_jk};
use openteam::harness::suites::brute_force_marginal;
use openteam::osbg::{AgentId, OpennessConfig, LEARNER};
use openteam::teammates::TypeId;
use openteam::world::OpenWorld;

#[derive(Serialize)]
struct Hunter {
    id: u32,
    kind: String,
    row: i32,
    col: i32,
}

#[derive(Serialize)]
struct Snapshot {
    size: i32,
    step: u64,
    horizon: u32,
    hunters: Vec<Hunter>,
    prey: Vec<(i32, i32)>,
    reward: f64,
    total: f64,
    done: bool,
    events: Vec<String>,
}

/// The learner's seat in an open Wolfpack episode with scripted teammates.
#[wasm_bindgen]
pub struct WolfpackGame {
    world: OpenWorld,
    horizon: u32,
    reward: f64,
    total: f64,
    done: bool,
    events: Vec<String>,
}

#[wasm_bindgen]
impl WolfpackGame {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: i32, team_limit: usize) -> Result<WolfpackGame, String> {
        if !(5..=20).contains(&size) {
            return Err("grid size must lie in 5..=20".into());
        }
        let cfg = WolfConfig {
            size,
            horizon: 100,
            ..WolfConfig::default()
        };
        let horizon = cfg.horizon;
        let open = OpennessConfig::wolfpack(team_limit, TypeId::pool(EnvKind::Wolfpack));
        open.validate().map_err(|e| e.to_string())?;
        let (world, _) = OpenWorld::new(EnvConfig::Wolfpack(cfg), open, u64::from(seed)).map_err(|e| e.to_string())?;
        Ok(Self {
            world,
            horizon,
            reward: 0.0,
            total: 0.0,
            done: false,
            events: Vec::new(),
        })
    }

    /// Moves the learner (0 up, 1 down, 2 left, 3 right, 4 stay) and returns
    /// the new state as JSON. A finished episode restarts first.
    pub fn step(&mut self, action: usize) -> Result<String, String> {
        if self.done {
            self.reset()?;
        }
        let s = self.world.step(action).map_err(|e| e.to_string())?;
        self.reward = s.outcome.reward;
        self.total += s.outcome.reward;
        self.done = s.outcome.done;
        self.events.clear();
        for c in &s.outcome.captures {
            let pack: Vec<String> = c.pack.iter().map(|id| id.0.to_string()).collect();
            self.events.push(format!("prey {} captured by {}", c.prey, pack.join(", ")));
        }
        for d in &s.change.departures {
            self.events.push(format!("agent {} left", d.id.0));
        }
        for a in &s.change.arrivals {
            self.events.push(format!("agent {} ({}) joined", a.id.0, a.type_id));
        }
        Ok(self.snapshot())
    }

    pub fn reset(&mut self) -> Result<String, String> {
        self.world.reset().map_err(|e| e.to_string())?;
        self.reward = 0.0;
        self.total = 0.0;
        self.done = false;
        self.events = vec!["new episode".into()];
        Ok(self.snapshot())
    }

    pub fn snapshot(&self) -> String {
        let Env::Wolfpack(state) = self.world.env() else {
            unreachable!("the game only builds wolfpack worlds")
        };
        let roster = self.world.roster();
        let kind = |id: AgentId| match roster.member(id) {
            _ if id == LEARNER => "learner".to_string(),
            Some(m) => m.type_id.to_string(),
            None => "?".to_string(),
        };
        let snap = Snapshot {
            size: state.cfg.size,
            step: self.world.episode_step(),
            horizon: self.horizon,
            hunters: state
                .hunters
                .iter()
                .map(|(&id, p)| Hunter {
                    id: id.0,
                    kind: kind(id),
                    row: p.row,
                    col: p.col,
                })
                .collect(),
            prey: state.prey.iter().map(|p| (p.row, p.col)).collect(),
            reward: self.reward,
            total: self.total,
            done: self.done,
            events: self.events.clone(),
        };
        serde_json::to_string(&snap).expect("snapshot serialises")
    }
}

#[derive(Serialize)]
struct MarginalReport {
    closed: Vec<f64>,
    brute: Vec<f64>,
    probs: Vec<Vec<f64>>,
    max_rel_error: f64,
}

/// Random utilities and teammate distributions; the closed-form marginal
/// action values next to explicit enumeration, as JSON.
#[wasm_bindgen]
pub fn marginal_check(seed: u32, teammates: usize, n_actions: usize, rank: usize) -> Result<String, String> {
    if !(1..=4).contains(&teammates) || !(2..=6).contains(&n_actions) || !(1..=5).contains(&rank) {
        return Err("teammates 1..=4, actions 2..=6, rank 1..=5".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let n = teammates + 1;
    let mut draw = |len: usize, scale: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-scale..scale)).collect() };
    let singular: Vec<Vec<f64>> = (0..n).map(|_| draw(n_actions, 2.0)).collect();
    let factors: Vec<Vec<f64>> = (0..n).map(|_| draw(n_actions * rank, 1.0)).collect();
    let probs: Vec<Vec<f64>> = (0..teammates)
        .map(|_| {
            let w: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let ids = (0..n as u32).map(AgentId).collect();
    let tables = UtilityTables::new(ids, n_actions, rank, singular.clone(), factors.clone()).map_err(|e| e.to_string())?;
    let closed = tables.marginal_q(&probs).map_err(|e| e.to_string())?;
    let brute = brute_force_marginal(&singular, &factors, rank, &probs);
    let max_rel_error = closed
        .iter()
        .zip(&brute)
        .map(|(c, b)| (c - b).abs() / 1f64.max(b.abs()))
        .fold(0.0, f64::max);
    let report = MarginalReport {
        closed,
        brute,
        probs,
        max_rel_error,
    };
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

#[derive(Serialize)]
struct PairReport {
    qbar: f64,
    c: f64,
    c_literal: f64,
}

/// Pairwise metrics of a square table given as a JSON array of rows.
#[wasm_bindgen]
pub fn pair_metrics(table_json: &str, aj: usize, ak: usize) -> Result<String, String> {
    let table: Vec<Vec<f64>> = serde_json::from_str(table_json).map_err(|e| format!("table: {e}"))?;
    let n = table.len();
    if n < 2 || table.iter().any(|r| r.len() != n) {
        return Err("table must be square with at least two actions".into());
    }
    if aj >= n || ak >= n {
        return Err(format!("actions must be below {n}"));
    }
    let report = PairReport {
        qbar: qbar_jk(&table, aj),
        c: c_jk(&table, aj, ak, false),
        c_literal: c_jk(&table, aj, ak, true),
    };
    Ok(serde_json::to_string(&report).expect("report serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn game_plays_an_episode() {
        let mut g = WolfpackGame::new(3, 6, 3).unwrap();
        let mut last = serde_json::Value::Null;
        for t in 0..100 {
            last = serde_json::from_str(&g.step(t % 5).unwrap()).unwrap();
        }
        assert_eq!(last["done"], true);
        assert_eq!(last["step"], 100);
        let hunters = last["hunters"].as_array().unwrap();
        assert!(!hunters.is_empty() && hunters.len() <= 3);
        assert_eq!(hunters[0]["kind"], "learner");
        let next: serde_json::Value = serde_json::from_str(&g.step(4).unwrap()).unwrap();
        assert_eq!(next["step"], 1);
        assert!(g.step(9).is_err());
        assert!(WolfpackGame::new(0, 3, 2).is_err());
    }

    #[test]
    fn marginal_matches_enumeration() {
        for seed in 0..20 {
            let r: serde_json::Value = serde_json::from_str(&marginal_check(seed, 3, 4, 2).unwrap()).unwrap();
            assert!(r["max_rel_error"].as_f64().unwrap() < 1e-9);
        }
        assert!(marginal_check(0, 0, 4, 2).is_err());
    }

    #[test]
    fn pair_metrics_of_constant_table() {
        let r: serde_json::Value = serde_json::from_str(&pair_metrics("[[2,2],[2,2]]", 0, 1).unwrap()).unwrap();
        assert_eq!(r["qbar"], 2.0);
        assert_eq!(r["c"], 0.0);
        assert!(pair_metrics("[[1,2]]", 0, 0).is_err());
        assert!(pair_metrics("[[1,2],[3,4]]", 2, 0).is_err());
    }
}
