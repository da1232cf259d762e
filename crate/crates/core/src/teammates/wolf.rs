use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use super::{Heuristic, TeammateError, TeammateMemory, TypeId};
use crate::envs::{EnvKind, Move, Pos, WolfState, WOLF_ACTIONS};
use crate::osbg::AgentId;

/// Nearest prey by Manhattan distance, lowest index on ties.
fn nearest_prey(s: &WolfState, from: Pos) -> Option<Pos> {
    s.prey.iter().copied().min_by_key(|p| p.manhattan(from))
}

/// Closest free cell 4-adjacent to `prey`; the prey cell itself if all are
/// taken. `free` decides which cells count as available.
fn destination(s: &WolfState, from: Pos, prey: Pos, free: impl Fn(Pos) -> bool) -> Pos {
    prey.neighbours(s.cfg.size)
        .filter(|&c| c == from || free(c))
        .min_by_key(|c| (c.manhattan(from), c.row, c.col))
        .unwrap_or(prey)
}

fn axis_moves(from: Pos, to: Pos) -> (Option<Move>, Option<Move>) {
    let row = match to.row.cmp(&from.row) {
        std::cmp::Ordering::Less => Some(Move::Up),
        std::cmp::Ordering::Greater => Some(Move::Down),
        std::cmp::Ordering::Equal => None,
    };
    let col = match to.col.cmp(&from.col) {
        std::cmp::Ordering::Less => Some(Move::Left),
        std::cmp::Ordering::Greater => Some(Move::Right),
        std::cmp::Ordering::Equal => None,
    };
    (row, col)
}

fn first_open(s: &WolfState, from: Pos, order: [Option<Move>; 2]) -> Move {
    order
        .into_iter()
        .flatten()
        .find(|&m| {
            let t = from.offset(m);
            t.in_bounds(s.cfg.size) && !s.occupied(t)
        })
        .unwrap_or(Move::Stay)
}

fn greedy_target(s: &WolfState, me: Pos) -> Option<Pos> {
    let prey = nearest_prey(s, me)?;
    Some(destination(s, me, prey, |c| !s.occupied(c)))
}

/// Moves along the axis with the larger remaining distance (rows on ties),
/// switching axis if that cell is taken.
fn greedy(s: &WolfState, me: Pos) -> Move {
    let Some(dest) = greedy_target(s, me) else {
        return Move::Stay;
    };
    let (row, col) = axis_moves(me, dest);
    let dr = (dest.row - me.row).abs();
    let dc = (dest.col - me.col).abs();
    if dr >= dc {
        first_open(s, me, [row, col])
    } else {
        first_open(s, me, [col, row])
    }
}

/// Like [`greedy`], but the axis is drawn from a Boltzmann distribution over
/// the two axis distances (temperature 1).
fn greedy_probabilistic<R: Rng + ?Sized>(s: &WolfState, me: Pos, rng: &mut R) -> Move {
    let Some(dest) = greedy_target(s, me) else {
        return Move::Stay;
    };
    let (row, col) = axis_moves(me, dest);
    let dr = f64::from((dest.row - me.row).abs());
    let dc = f64::from((dest.col - me.col).abs());
    let row_first = match (row, col) {
        (Some(_), Some(_)) => {
            let p_row = 1.0 / (1.0 + (dc - dr).exp());
            rng.gen::<f64>() < p_row
        }
        (Some(_), None) => true,
        _ => false,
    };
    if row_first {
        first_open(s, me, [row, col])
    } else {
        first_open(s, me, [col, row])
    }
}

/// First step of a shortest path from `from` to `to` avoiding `blocked`.
fn bfs_first_step(size: i32, from: Pos, to: Pos, blocked: &BTreeSet<Pos>) -> Option<Move> {
    if from == to {
        return Some(Move::Stay);
    }
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::new();
    for m in Move::CARDINAL {
        let p = from.offset(m);
        if p.in_bounds(size) && !blocked.contains(&p) && seen.insert(p) {
            queue.push_back((p, m));
        }
    }
    while let Some((p, first)) = queue.pop_front() {
        if p == to {
            return Some(first);
        }
        for q in p.neighbours(size) {
            if !blocked.contains(&q) && seen.insert(q) {
                queue.push_back((q, first));
            }
        }
    }
    None
}

/// Every hunter is assumed to run this same rule. Hunters are ranked by
/// distance to their nearest prey, farthest first, ties by id. In rank order
/// each claims a free cell next to its prey and plans a shortest path around
/// the prey, the reserved next cells of hunters ranked above it, and the
/// current cells of hunters ranked below it.
fn teammate_aware(s: &WolfState, me: AgentId) -> Move {
    let mut ranked: Vec<(AgentId, Pos, Pos, i32)> = s
        .hunters
        .iter()
        .filter_map(|(&id, &p)| nearest_prey(s, p).map(|prey| (id, p, prey, prey.manhattan(p))))
        .collect();
    ranked.sort_by_key(|&(id, _, _, d)| (std::cmp::Reverse(d), id));

    let mut claimed: BTreeSet<Pos> = BTreeSet::new();
    let mut reserved: BTreeSet<Pos> = BTreeSet::new();
    for (rank, &(id, pos, prey, _)) in ranked.iter().enumerate() {
        let below: BTreeSet<Pos> = ranked[rank + 1..].iter().map(|r| r.1).collect();
        let taken = |c: Pos| s.prey.contains(&c) || claimed.contains(&c) || below.contains(&c);
        let dest = destination(s, pos, prey, |c| !taken(c));
        claimed.insert(dest);
        let mut blocked: BTreeSet<Pos> = s.prey.iter().copied().collect();
        blocked.extend(&reserved);
        blocked.extend(&below);
        let step = bfs_first_step(s.cfg.size, pos, dest, &blocked).unwrap_or(Move::Stay);
        if id == me {
            return step;
        }
        reserved.insert(pos.offset(step));
    }
    Move::Stay
}

/// True when the hunter is inside its waiting radius of the nearest prey and
/// no other hunter is.
fn should_wait(s: &WolfState, me: AgentId, pos: Pos, radius: i32) -> bool {
    let Some(prey) = nearest_prey(s, pos) else {
        return false;
    };
    pos.manhattan(prey) <= radius
        && !s
            .hunters
            .iter()
            .any(|(&id, &h)| id != me && h.manhattan(prey) <= radius)
}

pub fn wolf_act<R: Rng + ?Sized>(
    ty: TypeId,
    s: &WolfState,
    me: AgentId,
    mem: &TeammateMemory,
    rng: &mut R,
) -> Result<usize, TeammateError> {
    if ty.env != EnvKind::Wolfpack || ty.heuristic == Heuristic::H6 {
        return Err(TeammateError::WrongEnv { ty, env: EnvKind::Wolfpack });
    }
    let pos = *s.hunters.get(&me).ok_or(TeammateError::MissingAgent(me))?;
    let waiting = matches!(ty.heuristic, Heuristic::H7 | Heuristic::H8 | Heuristic::H9)
        && should_wait(s, me, pos, mem.radius);
    let m = match ty.heuristic {
        Heuristic::H1 => return Ok(rng.gen_range(0..WOLF_ACTIONS)),
        _ if waiting => return Ok(rng.gen_range(0..WOLF_ACTIONS)),
        Heuristic::H2 | Heuristic::H7 => greedy(s, pos),
        Heuristic::H3 | Heuristic::H8 => greedy_probabilistic(s, pos, rng),
        Heuristic::H4 | Heuristic::H9 => teammate_aware(s, me),
        Heuristic::H6 => unreachable!(),
    };
    Ok(m.index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::WolfConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn ty(s: &str) -> TypeId {
        s.parse().unwrap()
    }

    fn state(hunters: &[(u32, (i32, i32))], prey: &[(i32, i32)]) -> WolfState {
        let mut s = WolfState::empty(WolfConfig::default());
        for &(id, (r, c)) in hunters {
            s.hunters.insert(AgentId(id), Pos::new(r, c));
        }
        s.prey = prey.iter().map(|&(r, c)| Pos::new(r, c)).collect();
        s
    }

    const MEM: TeammateMemory = TeammateMemory { radius: 4, view: 5 };

    fn chi_square_uniform_p(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    fn histogram(t: TypeId, s: &WolfState, me: u32, draws: usize) -> [usize; 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0; 5];
        for _ in 0..draws {
            counts[wolf_act(t, s, AgentId(me), &MEM, &mut rng).unwrap()] += 1;
        }
        counts
    }

    #[test]
    fn random_type_is_uniform() {
        let s = state(&[(1, (5, 5))], &[(5, 9), (0, 0)]);
        assert!(chi_square_uniform_p(&histogram(ty("wolf.H1"), &s, 1, 10_000)) > 0.01);
    }

    #[test]
    fn greedy_moves_along_larger_axis() {
        let s = state(&[(1, (5, 5))], &[(5, 9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = wolf_act(ty("wolf.H2"), &s, AgentId(1), &MEM, &mut rng).unwrap();
        assert_eq!(a, Move::Right.index());
        let s = state(&[(1, (1, 4))], &[(7, 5)]);
        let a = wolf_act(ty("wolf.H2"), &s, AgentId(1), &MEM, &mut rng).unwrap();
        assert_eq!(a, Move::Down.index());
    }

    #[test]
    fn greedy_switches_axis_when_blocked() {
        let s = state(&[(1, (5, 5)), (2, (5, 6))], &[(5, 9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = wolf_act(ty("wolf.H2"), &s, AgentId(1), &MEM, &mut rng).unwrap();
        // only the column axis has distance; blocked, so stay
        assert_eq!(a, Move::Stay.index());
        let s = state(&[(1, (3, 5)), (2, (3, 6))], &[(5, 9)]);
        let a = wolf_act(ty("wolf.H2"), &s, AgentId(1), &MEM, &mut rng).unwrap();
        assert_eq!(a, Move::Down.index());
    }

    #[test]
    fn greedy_stays_at_destination() {
        let s = state(&[(1, (5, 8))], &[(5, 9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(wolf_act(ty("wolf.H2"), &s, AgentId(1), &MEM, &mut rng).unwrap(), Move::Stay.index());
    }

    #[test]
    fn probabilistic_axis_frequencies() {
        // (4, 9) and (5, 8) are both 5 away; row-major picks (4, 9): row
        // distance 1, column distance 4
        let s = state(&[(1, (3, 5))], &[(5, 9)]);
        let c = histogram(ty("wolf.H3"), &s, 1, 20_000);
        let p_down = 1.0 / (1.0 + 3f64.exp());
        let freq = c[Move::Down.index()] as f64 / 20_000.0;
        assert!((freq - p_down).abs() < 0.006, "{freq} vs {p_down}");
        assert_eq!(c[Move::Down.index()] + c[Move::Right.index()], 20_000);
    }

    #[test]
    fn waiting_type_is_uniform_inside_radius() {
        let s = state(&[(1, (5, 7))], &[(5, 9)]);
        assert!(chi_square_uniform_p(&histogram(ty("wolf.H7"), &s, 1, 10_000)) > 0.01);
    }

    #[test]
    fn waiting_type_goes_greedy_when_another_hunter_is_close() {
        let s = state(&[(1, (5, 5)), (2, (6, 9))], &[(5, 9)]);
        let c = histogram(ty("wolf.H7"), &s, 1, 100);
        assert_eq!(c[Move::Right.index()], 100);
    }

    #[test]
    fn bfs_plans_around_a_wall() {
        // column 6 blocked except row 0
        let blocked: BTreeSet<Pos> = (1..10).map(|r| Pos::new(r, 6)).collect();
        let m = bfs_first_step(10, Pos::new(5, 5), Pos::new(5, 8), &blocked).unwrap();
        assert_eq!(m, Move::Up);
        let blocked: BTreeSet<Pos> = (0..10).map(|r| Pos::new(r, 6)).collect();
        assert_eq!(bfs_first_step(10, Pos::new(5, 5), Pos::new(5, 8), &blocked), None);
    }

    #[test]
    fn teammate_aware_hunters_claim_distinct_cells() {
        // both hunters would pick (5, 8) greedily; the farther one claims it
        let s = state(&[(1, (5, 6)), (2, (5, 2))], &[(5, 9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let far = wolf_act(ty("wolf.H4"), &s, AgentId(2), &MEM, &mut rng).unwrap();
        let near = wolf_act(ty("wolf.H4"), &s, AgentId(1), &MEM, &mut rng).unwrap();
        // several equally short detours around hunter 1 exist
        assert!(far != Move::Left.index() && far != Move::Stay.index(), "{far}");
        // (4, 9) and (6, 9) remain, both 4 away; row-major picks (4, 9)
        assert_eq!(near, Move::Up.index());
    }

    #[test]
    fn teammate_aware_avoids_collisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut s = WolfState::empty(WolfConfig::default());
            let ids: Vec<AgentId> = (0..4).map(AgentId).collect();
            s.reset(&ids, &mut rng).unwrap();
            let targets: Vec<Pos> = ids
                .iter()
                .map(|&id| s.hunters[&id].offset(Move::from_index(wolf_act(ty("wolf.H4"), &s, id, &MEM, &mut rng).unwrap()).unwrap()))
                .collect();
            let mut dedup = targets.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), targets.len());
        }
    }

    #[test]
    fn bfs_step_on_open_grid_is_shortest() {
        let blocked = BTreeSet::new();
        let m = bfs_first_step(10, Pos::new(0, 0), Pos::new(0, 3), &blocked).unwrap();
        assert_eq!(m, Move::Right);
        assert_eq!(bfs_first_step(10, Pos::new(2, 2), Pos::new(2, 2), &blocked), Some(Move::Stay));
    }

    #[test]
    fn entropy_fingerprint() {
        let entropy = |c: &[usize; 5]| {
            let n: usize = c.iter().sum();
            -c.iter()
                .filter(|&&x| x > 0)
                .map(|&x| {
                    let p = x as f64 / n as f64;
                    p * p.ln()
                })
                .sum::<f64>()
        };
        let s = state(&[(1, (2, 2)), (2, (8, 1))], &[(5, 9), (0, 7)]);
        let h1 = entropy(&histogram(ty("wolf.H1"), &s, 1, 1000));
        let h2 = entropy(&histogram(ty("wolf.H2"), &s, 1, 1000));
        assert!(h1 >= h2 + 0.5, "{h1} vs {h2}");
    }

    #[test]
    fn lbf_type_rejected() {
        let s = state(&[(1, (2, 2))], &[(5, 9)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(wolf_act(ty("lbf.H1"), &s, AgentId(1), &MEM, &mut rng).is_err());
        assert!(wolf_act(ty("wolf.H1"), &s, AgentId(9), &MEM, &mut rng).is_err());
    }
}
