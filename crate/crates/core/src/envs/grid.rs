use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, o: Pos) -> i32 {
        (self.row - o.row).abs() + (self.col - o.col).abs()
    }

    pub fn chebyshev(self, o: Pos) -> i32 {
        (self.row - o.row).abs().max((self.col - o.col).abs())
    }

    pub fn offset(self, m: Move) -> Pos {
        let (dr, dc) = m.delta();
        Pos::new(self.row + dr, self.col + dc)
    }

    pub fn in_bounds(self, size: i32) -> bool {
        (0..size).contains(&self.row) && (0..size).contains(&self.col)
    }

    pub fn is_adjacent(self, o: Pos) -> bool {
        self.manhattan(o) == 1
    }

    /// In-bounds 4-neighbours in up, down, left, right order.
    pub fn neighbours(self, size: i32) -> impl Iterator<Item = Pos> {
        Move::CARDINAL
            .into_iter()
            .map(move |m| self.offset(m))
            .filter(move |p| p.in_bounds(size))
    }
}

/// Movement actions. Indices 0..5 are shared by both environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];
    pub const CARDINAL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
            Move::Stay => (0, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }

    /// Mirror image under a left-right flip of the grid.
    pub fn mirrored(self) -> Move {
        match self {
            Move::Left => Move::Right,
            Move::Right => Move::Left,
            m => m,
        }
    }

    /// Single step that reduces the row offset first, then the column offset.
    pub fn toward(from: Pos, to: Pos) -> Move {
        let (dr, dc) = (to.row - from.row, to.col - from.col);
        if dr < 0 {
            Move::Up
        } else if dr > 0 {
            Move::Down
        } else if dc < 0 {
            Move::Left
        } else if dc > 0 {
            Move::Right
        } else {
            Move::Stay
        }
    }
}

/// Simultaneous movement. A move that leaves the grid or targets a cell that
/// is occupied at the start of the step (by a mover or by `blocked`) becomes a
/// stay; when several movers target the same free cell, all of them stay.
pub fn resolve_moves<K: Ord + Copy>(
    movers: &BTreeMap<K, Pos>,
    intents: &BTreeMap<K, Move>,
    blocked: &[Pos],
    size: i32,
) -> BTreeMap<K, Pos> {
    let occupied = |p: Pos| blocked.contains(&p) || movers.values().any(|&q| q == p);
    let mut targets: BTreeMap<K, Pos> = BTreeMap::new();
    for (&k, &pos) in movers {
        let m = intents.get(&k).copied().unwrap_or(Move::Stay);
        let t = pos.offset(m);
        let ok = m != Move::Stay && t.in_bounds(size) && !occupied(t);
        targets.insert(k, if ok { t } else { pos });
    }
    let mut counts: BTreeMap<Pos, usize> = BTreeMap::new();
    for (k, t) in &targets {
        if *t != movers[k] {
            *counts.entry(*t).or_default() += 1;
        }
    }
    targets
        .into_iter()
        .map(|(k, t)| {
            if t != movers[&k] && counts[&t] > 1 {
                (k, movers[&k])
            } else {
                (k, t)
            }
        })
        .collect()
}
