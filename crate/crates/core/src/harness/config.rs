use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError, Result};
use crate::envs::{EnvConfig, EnvKind};
use crate::gpl::TrainConfig;
use crate::osbg::OpennessConfig;
use crate::teammates::TypeId;

/// Openness process for training and for evaluation. Durations follow the
/// environment's defaults unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenSpec {
    pub train_team_limit: usize,
    pub eval_team_limit: usize,
    /// Empty means the environment's full pool.
    pub type_pool: Vec<TypeId>,
    pub active: Option<(u32, u32)>,
    pub waiting: Option<(u32, u32)>,
}

impl Default for OpenSpec {
    fn default() -> Self {
        Self {
            train_team_limit: 3,
            eval_team_limit: 5,
            type_pool: Vec::new(),
            active: None,
            waiting: None,
        }
    }
}

impl OpenSpec {
    pub fn build(&self, env: EnvKind, team_limit: usize) -> OpennessConfig {
        let pool = if self.type_pool.is_empty() {
            TypeId::pool(env)
        } else {
            self.type_pool.clone()
        };
        let mut cfg = match env {
            EnvKind::Wolfpack => OpennessConfig::wolfpack(team_limit, pool),
            EnvKind::Lbf => OpennessConfig::lbf(team_limit, pool),
        };
        if let Some(a) = self.active {
            cfg.active = a;
        }
        if let Some(w) = self.waiting {
            cfg.waiting = w;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub openness: OpenSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    /// Episodes of greedy play collected by `analyze`.
    #[serde(default = "default_analysis_episodes")]
    pub analysis_episodes: usize,
}

fn default_analysis_episodes() -> usize {
    20
}

impl RunConfig {
    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            openness: OpenSpec::default(),
            train: TrainConfig::default(),
            seed: 0,
            analysis_episodes: default_analysis_episodes(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let kind = self.env.kind();
        for limit in [self.openness.train_team_limit, self.openness.eval_team_limit] {
            self.openness.build(kind, limit).validate()?;
        }
        if let Some(t) = self.openness.type_pool.iter().find(|t| t.env != kind) {
            return Err(HarnessError::Config(format!("type {t} does not belong to {}", kind.tag())));
        }
        match &self.env {
            EnvConfig::Wolfpack(c) if c.size < 2 || c.horizon == 0 => {
                Err(HarnessError::Config("wolfpack needs size >= 2 and a positive horizon".into()))
            }
            EnvConfig::Lbf(c) if c.size < 2 || c.horizon == 0 || c.max_level == 0 => Err(HarnessError::Config(
                "lbf needs size >= 2, a positive horizon and max_level >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn train_openness(&self) -> OpennessConfig {
        self.openness.build(self.env.kind(), self.openness.train_team_limit)
    }

    pub fn eval_openness(&self, team_limit: usize) -> OpennessConfig {
        self.openness.build(self.env.kind(), team_limit)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
