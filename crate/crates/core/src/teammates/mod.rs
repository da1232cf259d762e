//! Scripted teammate types for both environments.

mod lbf;
mod wolf;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvKind};
use crate::osbg::AgentId;

pub use lbf::lbf_act;
pub use wolf::wolf_act;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TeammateError {
    #[error("unknown teammate type {0:?}")]
    UnknownType(String),
    #[error("type {ty} cannot act in {env:?}")]
    WrongEnv { ty: TypeId, env: EnvKind },
    #[error("agent {0} is not in the environment")]
    MissingAgent(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heuristic {
    H1,
    H2,
    H3,
    H4,
    H6,
    H7,
    H8,
    H9,
}

impl Heuristic {
    const ALL: [Heuristic; 8] = [
        Heuristic::H1,
        Heuristic::H2,
        Heuristic::H3,
        Heuristic::H4,
        Heuristic::H6,
        Heuristic::H7,
        Heuristic::H8,
        Heuristic::H9,
    ];

    fn name(self) -> &'static str {
        match self {
            Heuristic::H1 => "H1",
            Heuristic::H2 => "H2",
            Heuristic::H3 => "H3",
            Heuristic::H4 => "H4",
            Heuristic::H6 => "H6",
            Heuristic::H7 => "H7",
            Heuristic::H8 => "H8",
            Heuristic::H9 => "H9",
        }
    }
}

/// Environment tag plus heuristic, written `wolf.H2` or `lbf.H6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId {
    pub env: EnvKind,
    pub heuristic: Heuristic,
}

impl TypeId {
    /// Every implemented type of one environment.
    pub fn pool(env: EnvKind) -> Vec<TypeId> {
        Heuristic::ALL
            .into_iter()
            .map(|heuristic| TypeId { env, heuristic })
            .filter(|t| t.is_implemented())
            .collect()
    }

    fn is_implemented(self) -> bool {
        match self.env {
            EnvKind::Wolfpack => self.heuristic != Heuristic::H6,
            EnvKind::Lbf => true,
        }
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.env.tag(), self.heuristic.name())
    }
}

impl FromStr for TypeId {
    type Err = TeammateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TeammateError::UnknownType(s.to_string());
        let (env, h) = s.split_once('.').ok_or_else(bad)?;
        let env = match env {
            "wolf" => EnvKind::Wolfpack,
            "lbf" => EnvKind::Lbf,
            _ => return Err(bad()),
        };
        let heuristic = Heuristic::ALL.into_iter().find(|x| x.name() == h).ok_or_else(bad)?;
        let t = TypeId { env, heuristic };
        if t.is_implemented() {
            Ok(t)
        } else {
            Err(bad())
        }
    }
}

impl Serialize for TypeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-individual constants drawn once at arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeammateMemory {
    /// Wolfpack waiting radius, in `{3, 4, 5}`.
    pub radius: i32,
    /// LBF observation square side, in `{3, 5, 7}`.
    pub view: i32,
}

impl TeammateMemory {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let radius = rng.gen_range(3..=5);
        let view = [3, 5, 7][rng.gen_range(0..3)];
        Self { radius, view }
    }
}

/// Dispatches to the policy matching the environment.
pub fn teammate_act<R: Rng + ?Sized>(
    ty: TypeId,
    env: &Env,
    me: AgentId,
    mem: &TeammateMemory,
    rng: &mut R,
) -> Result<usize, TeammateError> {
    match env {
        Env::Wolfpack(s) => wolf_act(ty, s, me, mem, rng),
        Env::Lbf(s) => lbf_act(ty, s, me, mem, rng),
    }
}
