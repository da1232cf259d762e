//! Pairwise utility metrics on greedy trajectories of a trained GPL learner.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::run::{play, restore, Acting};
use super::{io_err, HarnessError, Result, RunConfig};
use crate::gpl::train::sub_seed;
use crate::osbg::AgentId;
use crate::world::OpenWorld;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mean pairwise value of `aj` over the partner's actions.
pub fn qbar_jk(table: &[Vec<f64>], aj: usize) -> f64 {
    let row = &table[aj];
    row.iter().sum::<f64>() / row.len() as f64
}

/// Pairwise value of `(aj, ak)` minus the mean of the other cells, always
/// divided by `|A|^2 - 1`. With `literal` only cells with `x != aj` and
/// `y != ak` enter the sum.
pub fn c_jk(table: &[Vec<f64>], aj: usize, ak: usize, literal: bool) -> f64 {
    let n = table.len();
    let mut rest = 0.0;
    for (x, row) in table.iter().enumerate() {
        for (y, v) in row.iter().enumerate() {
            let skip = if literal { x == aj || y == ak } else { x == aj && y == ak };
            if !skip {
                rest += v;
            }
        }
    }
    table[aj][ak] - rest / (n * n - 1) as f64
}

/// Sample correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Metrics of one ordered pair at one step, for the actions actually taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub j: AgentId,
    pub k: AgentId,
    pub aj: usize,
    pub ak: usize,
    pub qbar: f64,
    pub c: f64,
    pub c_literal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: u64,
    pub reward: f64,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub global_step: u64,
    pub returns: Vec<f64>,
    /// Per-episode means over every pair and step; `None` when the learner
    /// was alone throughout.
    pub episode_qbar: Vec<Option<f64>>,
    pub episode_c: Vec<Option<f64>>,
    pub pearson_qbar: Option<f64>,
    pub pearson_c: Option<f64>,
    pub steps: Vec<StepRecord>,
}

fn correlate(values: &[Option<f64>], returns: &[f64]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = values
        .iter()
        .zip(returns)
        .filter_map(|(v, r)| v.map(|v| (v, *r)))
        .unzip();
    pearson(&xs, &ys)
}

/// Collects `cfg.analysis_episodes` greedy episodes under the training
/// openness process and scores every ordered pair at every step.
pub fn analyze(ckpt: &Checkpoint, cfg: &RunConfig, seed: u64) -> Result<Analysis> {
    if !ckpt.manifest.algorithm.is_gpl() {
        return Err(HarnessError::Config(format!(
            "pairwise analysis needs a GPL checkpoint, found {:?}",
            ckpt.manifest.algorithm
        )));
    }
    if cfg.analysis_episodes == 0 {
        return Err(HarnessError::Config("analysis_episodes must be positive".into()));
    }
    let learner = restore(ckpt, cfg)?;
    let (mut world, _) = OpenWorld::new(cfg.env.clone(), cfg.train_openness(), sub_seed(seed, 100))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
    let episodes = cfg.analysis_episodes;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut t = 0;
    let returns = play(
        &learner,
        &ckpt.online,
        &mut world,
        episodes,
        Acting::Greedy,
        cfg.train.tau,
        &mut rng,
        |ep, fwd, s| {
            if steps.last().is_some_and(|r| r.episode != ep) {
                t = 0;
            }
            let tables = learner.tables(fwd)?.expect("GPL learner has utility tables");
            let mut pairs = Vec::new();
            for (j, &idj) in tables.ids.iter().enumerate() {
                for (k, &idk) in tables.ids.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let table = tables.pairwise_table(j, k);
                    let (aj, ak) = (s.joint.get(idj).unwrap_or(0), s.joint.get(idk).unwrap_or(0));
                    pairs.push(PairRecord {
                        j: idj,
                        k: idk,
                        aj,
                        ak,
                        qbar: qbar_jk(&table, aj),
                        c: c_jk(&table, aj, ak, false),
                        c_literal: c_jk(&table, aj, ak, true),
                    });
                }
            }
            steps.push(StepRecord {
                episode: ep,
                t,
                reward: s.outcome.reward,
                pairs,
            });
            t += 1;
            Ok(())
        },
    )?;
    let mean_of = |ep: usize, f: fn(&PairRecord) -> f64| {
        let vals: Vec<f64> = steps
            .iter()
            .filter(|s| s.episode == ep)
            .flat_map(|s| s.pairs.iter().map(f))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let episode_qbar: Vec<Option<f64>> = (0..episodes).map(|e| mean_of(e, |p| p.qbar)).collect();
    let episode_c: Vec<Option<f64>> = (0..episodes).map(|e| mean_of(e, |p| p.c)).collect();
    Ok(Analysis {
        global_step: ckpt.manifest.global_step,
        pearson_qbar: correlate(&episode_qbar, &returns),
        pearson_c: correlate(&episode_c, &returns),
        returns,
        episode_qbar,
        episode_c,
        steps,
    })
}

pub fn write_analysis(a: &Analysis, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string(a)? + "\n";
    std::fs::write(out, text).map_err(io_err(out))
}
