use rand::Rng;

use super::{Heuristic, TeammateError, TeammateMemory, TypeId};
use crate::envs::{EnvKind, LbfState, Move, Pos, LBF_ACTIONS, LOAD};
use crate::osbg::AgentId;

#[derive(Debug, Clone, Copy)]
struct Seen {
    pos: Pos,
    level: u32,
}

/// What one agent sees through its observation square.
struct Window {
    me: Seen,
    objects: Vec<Seen>,
    others: Vec<Seen>,
}

impl Window {
    fn new(s: &LbfState, me: AgentId, view: i32) -> Option<Self> {
        let a = s.agents.get(&me)?;
        let half = view / 2;
        let inside = |p: Pos| p.chebyshev(a.pos) <= half;
        Some(Window {
            me: Seen { pos: a.pos, level: a.level },
            objects: s
                .objects
                .iter()
                .filter(|o| !o.collected && inside(o.pos))
                .map(|o| Seen { pos: o.pos, level: o.level })
                .collect(),
            others: s
                .agents
                .iter()
                .filter(|(&id, b)| id != me && inside(b.pos))
                .map(|(_, b)| Seen { pos: b.pos, level: b.level })
                .collect(),
        })
    }

    fn centroid(&self) -> (f64, f64) {
        let all: Vec<Pos> = std::iter::once(self.me.pos).chain(self.others.iter().map(|o| o.pos)).collect();
        let n = all.len() as f64;
        (
            all.iter().map(|p| f64::from(p.row)).sum::<f64>() / n,
            all.iter().map(|p| f64::from(p.col)).sum::<f64>() / n,
        )
    }
}

/// Minimum under `key`, row-major position on ties.
fn pick_min<K: PartialOrd>(items: impl Iterator<Item = Seen>, key: impl Fn(&Seen) -> K) -> Option<Seen> {
    let mut best: Option<(K, Seen)> = None;
    for s in items {
        let k = key(&s);
        let better = match &best {
            None => true,
            Some((bk, b)) => k < *bk || (k == *bk && (s.pos.row, s.pos.col) < (b.pos.row, b.pos.col)),
        };
        if better {
            best = Some((k, s));
        }
    }
    best.map(|(_, s)| s)
}

fn dist_to(c: (f64, f64), p: Pos) -> f64 {
    (f64::from(p.row) - c.0).abs() + (f64::from(p.col) - c.1).abs()
}

/// Highest-level object strictly below `level`, nearest to `from` among equals;
/// otherwise the highest-level object.
fn below_own_level(objects: &[Seen], from: Pos, level: u32) -> Option<Seen> {
    let key = |o: &Seen| (std::cmp::Reverse(o.level), o.pos.manhattan(from));
    pick_min(objects.iter().copied().filter(|o| o.level < level), key)
        .or_else(|| pick_min(objects.iter().copied(), key))
}

fn farthest(objects: &[Seen], from: Pos) -> Option<Seen> {
    pick_min(objects.iter().copied(), |o| std::cmp::Reverse(o.pos.manhattan(from)))
}

fn closest(objects: impl Iterator<Item = Seen>, from: Pos) -> Option<Seen> {
    pick_min(objects, |o| o.pos.manhattan(from))
}

enum Target {
    Object(Pos),
    Agent(Pos),
}

fn leader_target(w: &Window, leader: Option<Seen>, rule: Heuristic) -> Option<Target> {
    let leader = leader?;
    let obj = match rule {
        Heuristic::H3 => below_own_level(&w.objects, leader.pos, leader.level),
        _ => farthest(&w.objects, leader.pos),
    };
    Some(match obj {
        Some(o) => Target::Object(o.pos),
        None => Target::Agent(leader.pos),
    })
}

fn choose(ty: Heuristic, w: &Window) -> Option<Target> {
    let me = w.me;
    let obj = |o: Option<Seen>| o.map(|o| Target::Object(o.pos));
    match ty {
        Heuristic::H1 => {
            let higher = pick_min(
                w.others.iter().copied().filter(|o| o.level > me.level),
                |o| (std::cmp::Reverse(o.level), o.pos.manhattan(me.pos)),
            );
            let leader = higher.or_else(|| farthest(&w.others, me.pos));
            leader_target(w, leader, Heuristic::H3)
        }
        Heuristic::H2 => leader_target(w, farthest(&w.others, me.pos), Heuristic::H4),
        Heuristic::H3 => obj(below_own_level(&w.objects, me.pos, me.level)),
        Heuristic::H4 => obj(farthest(&w.objects, me.pos)),
        Heuristic::H6 => obj(closest(w.objects.iter().copied(), me.pos)),
        Heuristic::H7 => {
            let c = w.centroid();
            obj(pick_min(w.objects.iter().copied(), |o| dist_to(c, o.pos)))
        }
        Heuristic::H8 => obj(closest(w.objects.iter().copied().filter(|o| o.level <= me.level), me.pos)),
        Heuristic::H9 => {
            let total: u32 = me.level + w.others.iter().map(|o| o.level).sum::<u32>();
            let c = w.centroid();
            obj(pick_min(
                w.objects.iter().copied().filter(|o| o.level <= total),
                |o| dist_to(c, o.pos),
            ))
        }
    }
}

/// Heads for the target object by row-first greedy descent and loads once
/// 4-adjacent; a leader target is approached and then waited beside. Empty
/// target sets fall back to a uniform action.
pub fn lbf_act<R: Rng + ?Sized>(
    ty: TypeId,
    s: &LbfState,
    me: AgentId,
    mem: &TeammateMemory,
    rng: &mut R,
) -> Result<usize, TeammateError> {
    if ty.env != EnvKind::Lbf {
        return Err(TeammateError::WrongEnv { ty, env: EnvKind::Lbf });
    }
    let w = Window::new(s, me, mem.view).ok_or(TeammateError::MissingAgent(me))?;
    let pos = w.me.pos;
    Ok(match choose(ty.heuristic, &w) {
        None => rng.gen_range(0..LBF_ACTIONS),
        Some(Target::Object(o)) if pos.is_adjacent(o) => LOAD,
        Some(Target::Agent(a)) if pos.is_adjacent(a) => Move::Stay.index(),
        Some(Target::Object(t) | Target::Agent(t)) => Move::toward(pos, t).index(),
    })
}
