use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{check_layout, save_checkpoint, Checkpoint};
use super::metrics::{MetricRecord, MetricsWriter, RecordKind};
use super::{io_err, HarnessError, Result};
use super::RunConfig;
use crate::gpl::train::sub_seed;
use crate::gpl::{policy, Algorithm, Forward, Learner, Trainer};
use crate::nn::ParamStore;
use crate::tensor::Tape;
use crate::world::{OpenWorld, Step};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_stem(step: u64) -> String {
    format!("step-{step:010}")
}

/// Trains under `cfg` into `out`: a config copy, one metric record per
/// checkpoint and one for a trailing partial interval, and a checkpoint at
/// step 0 and every `checkpoint_interval` steps.
pub fn run_training(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let metrics_path = out.join(METRICS_FILE);
    if metrics_path.exists() {
        return Err(HarnessError::Config(format!(
            "{} already holds a run; choose a fresh output directory",
            out.display()
        )));
    }
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_json() + "\n").map_err(io_err(&cfg_path))?;
    let mut metrics = MetricsWriter::open(&metrics_path)?;

    let hash = cfg.hash();
    let algo = cfg.train.algorithm;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.env.clone(), cfg.train_openness(), cfg.seed)?;
    let mut record = |trainer: &mut Trainer, save: bool| -> Result<()> {
        let step = trainer.step();
        metrics.append(&MetricRecord::from_window(step, &trainer.take_window()))?;
        if save {
            save_checkpoint(&ckpt_dir, &checkpoint_stem(step), &hash, step, algo, trainer.params(), trainer.target())?;
        }
        Ok(())
    };
    record(&mut trainer, true)?;
    let total = cfg.train.total_steps;
    let interval = cfg.train.checkpoint_interval;
    let mut next = interval;
    while next <= total {
        trainer.train_until(next)?;
        record(&mut trainer, true)?;
        next += interval;
    }
    if trainer.step() < total {
        trainer.train_until(total)?;
        record(&mut trainer, false)?;
    }
    Ok(out.to_path_buf())
}

/// How the learner picks actions outside training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acting {
    /// Greedy on the action values, or a Boltzmann draw for GPL-SPI.
    Learned,
    Greedy,
}

/// Plays `episodes` full episodes with fixed parameters, calling `visit`
/// after every step with the forward pass that chose the action.
pub(crate) fn play<F>(
    learner: &Learner,
    params: &ParamStore,
    world: &mut OpenWorld,
    episodes: usize,
    acting: Acting,
    tau: f64,
    rng: &mut ChaCha8Rng,
    mut visit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &Forward<'_>, &Step) -> Result<()>,
{
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut obs = world.reset()?;
        let mut mem = learner.memory(&obs, rng)?;
        let mut ret = 0.0;
        loop {
            let tape = Tape::new();
            let bound = params.bind_const(&tape);
            let fwd = learner.forward(&bound, &obs, &mem)?;
            let a = match (acting, learner.algorithm()) {
                (Acting::Learned, Algorithm::GplSpi) => policy::sample(&policy::spi_policy(&fwd.qbar, tau)?, rng),
                _ => policy::greedy(&fwd.qbar, rng),
            };
            let s = world.step(a)?;
            learner.advance(&mut mem, &fwd, &s.change, rng)?;
            visit(ep, &fwd, &s)?;
            ret += s.outcome.reward;
            if s.outcome.done {
                break;
            }
            obs = s.next;
        }
        returns.push(ret);
    }
    Ok(returns)
}

fn eval_world(cfg: &RunConfig, team_limit: usize, seed: u64) -> Result<(OpenWorld, ChaCha8Rng)> {
    let (world, _) = OpenWorld::new(cfg.env.clone(), cfg.eval_openness(team_limit), sub_seed(seed, 100))?;
    Ok((world, ChaCha8Rng::seed_from_u64(sub_seed(seed, 2))))
}

/// Rebuilds the configured learner and checks that the checkpoint fits it.
pub fn restore(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<Learner> {
    let t = &cfg.train;
    if ckpt.manifest.algorithm != t.algorithm {
        return Err(HarnessError::Incompatible(format!(
            "checkpoint holds {:?}, config asks for {:?}",
            ckpt.manifest.algorithm, t.algorithm
        )));
    }
    let learner = Learner::new(t.algorithm, &t.net, &cfg.env, t.max_agents)?;
    let expected = learner.init_params(&mut ChaCha8Rng::seed_from_u64(0))?;
    check_layout(&expected, &ckpt.online)?;
    Ok(learner)
}

fn check_eval_args(cfg: &RunConfig, episodes: usize, team_limit: usize) -> Result<()> {
    if episodes == 0 {
        return Err(HarnessError::Config("episodes must be positive".into()));
    }
    cfg.eval_openness(team_limit).validate()?;
    if !cfg.train.algorithm.is_gpl() && team_limit > cfg.train.max_agents {
        return Err(HarnessError::Config(format!(
            "team limit {team_limit} exceeds the baseline input size {}",
            cfg.train.max_agents
        )));
    }
    Ok(())
}

/// Mean return of the checkpoint's policy over `episodes` episodes under the
/// evaluation openness process with the given team limit.
pub fn evaluate(ckpt: &Checkpoint, cfg: &RunConfig, episodes: usize, team_limit: usize, seed: u64) -> Result<MetricRecord> {
    check_eval_args(cfg, episodes, team_limit)?;
    let learner = restore(ckpt, cfg)?;
    let (mut world, mut rng) = eval_world(cfg, team_limit, seed)?;
    let mut qbar = 0.0;
    let mut steps = 0u64;
    let returns = play(
        &learner,
        &ckpt.online,
        &mut world,
        episodes,
        Acting::Learned,
        cfg.train.tau,
        &mut rng,
        |_, fwd, _| {
            qbar += fwd.qbar.iter().sum::<f64>() / fwd.qbar.len() as f64;
            steps += 1;
            Ok(())
        },
    )?;
    let mut r = MetricRecord::from_returns(RecordKind::Eval, ckpt.manifest.global_step, &returns);
    r.team_limit = Some(team_limit);
    r.mean_qbar = Some(qbar / steps as f64);
    Ok(r)
}

/// The same protocol with a uniformly random learner.
pub fn evaluate_random(cfg: &RunConfig, episodes: usize, team_limit: usize, seed: u64) -> Result<MetricRecord> {
    check_eval_args(cfg, episodes, team_limit)?;
    let (mut world, mut rng) = eval_world(cfg, team_limit, seed)?;
    let n = world.n_actions();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        world.reset()?;
        let mut ret = 0.0;
        loop {
            let s = world.step(rng.gen_range(0..n))?;
            ret += s.outcome.reward;
            if s.outcome.done {
                break;
            }
        }
        returns.push(ret);
    }
    let mut r = MetricRecord::from_returns(RecordKind::Eval, 0, &returns);
    r.team_limit = Some(team_limit);
    Ok(r)
}
