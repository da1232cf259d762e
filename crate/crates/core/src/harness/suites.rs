//! Numerical self-checks: central-difference gradients of every network
//! block and both losses, and the closed-form marginal against brute force.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gpl::embed::{Embedder, HiddenStates};
use crate::gpl::model::nll_var;
use crate::gpl::baseline::QlNet;
use crate::gpl::{joint_q_var, AgentModel, GplError, NetConfig, UtilityTables, ValueNet};
use crate::nn::{init_params, Activation, Block, Bound, GraphBlock, LstmCell, Mlp, ParamStore};
use crate::osbg::AgentId;
use crate::tensor::{Tape, Tensor, Var};

type GResult<T> = std::result::Result<T, GplError>;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;
pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    /// Largest error over every instance.
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// coordinate of every parameter of the scalar `f`.
pub fn param_grad_check<F>(params: &ParamStore, f: F, eps: f64) -> GResult<f64>
where
    F: for<'t> Fn(&Bound<'t>) -> GResult<Var<'t>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = f(&bound)?;
    let grads = bound.grads(&tape.backward(y)?);
    let eval = |p: &ParamStore| -> GResult<f64> {
        let t = Tape::new();
        Ok(f(&p.bind_const(&t))?.item())
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        for i in 0..t.len() {
            let mut shifted = |delta: f64| -> GResult<f64> {
                let mut d = t.to_vec();
                d[i] += delta;
                probe.set(name, Tensor::new(t.shape(), d)?)?;
                eval(&probe)
            };
            let numeric = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
            probe.set(name, t.clone())?;
            let analytic = grads.get(name).map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Initialised parameters with every entry, biases included, redrawn.
fn random_params<R: Rng>(blocks: &[&dyn Block], rng: &mut R) -> GResult<ParamStore> {
    let base = init_params(blocks, rng)?;
    let mut out = ParamStore::new();
    for (k, v) in base.iter() {
        let d = v.data().iter().map(|_| rng.gen_range(-0.6..0.6)).collect();
        out.insert(k, Tensor::new(v.shape(), d)?)?;
    }
    Ok(out)
}

/// Fixed random weighting so the scalar depends on every output entry.
fn weighted<'t>(v: Var<'t>, w: &Tensor) -> GResult<Var<'t>> {
    Ok(v.mul(v.tape().constant(w.clone()))?.sum()?)
}

fn small_net() -> NetConfig {
    NetConfig {
        embed_fc: vec![4],
        embed_hidden: 3,
        beta_hidden: vec![4],
        delta_hidden: vec![4],
        edge: vec![3],
        node: vec![3],
        eta_hidden: vec![3],
        rank: 2,
        activation: Activation::Tanh,
    }
}

fn states<R: Rng>(rng: &mut R, dim: usize, n: usize) -> GResult<HiddenStates> {
    let ids: Vec<AgentId> = (0..n as u32).map(AgentId).collect();
    let mut s = HiddenStates::zeros(dim, &ids);
    s.overwrite(&random_tensor(rng, &[n, dim]), &random_tensor(rng, &[n, dim]))?;
    Ok(s)
}

fn mlp_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let net = Mlp::new("m", &[3, 4, 2], Activation::Tanh, Activation::Identity)?;
    let p = random_params(&[&net], rng)?;
    let x = random_tensor(rng, &[2, 3]);
    let w = random_tensor(rng, &[2, 2]);
    param_grad_check(&p, |b| weighted(net.forward(b, b.tape().constant(x.clone()))?, &w), GRAD_EPS)
}

fn lstm_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let cell = LstmCell::new("l", 3, 4)?;
    let p = random_params(&[&cell], rng)?;
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(rng, &[2, 3])).collect();
    let (h0, c0) = (random_tensor(rng, &[2, 4]), random_tensor(rng, &[2, 4]));
    let (wh, wc) = (random_tensor(rng, &[2, 4]), random_tensor(rng, &[2, 4]));
    param_grad_check(
        &p,
        |b| {
            let t = b.tape();
            let (mut h, mut c) = (t.constant(h0.clone()), t.constant(c0.clone()));
            for x in &xs {
                (h, c) = cell.step(b, t.constant(x.clone()), h, c)?;
            }
            Ok(weighted(h, &wh)?.add(weighted(c, &wc)?)?)
        },
        GRAD_EPS,
    )
}

fn graph_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let g = GraphBlock::new("g", 3, &[4], &[3], Activation::Tanh)?;
    let p = random_params(&[&g], rng)?;
    let n = rng.gen_range(1..=4);
    let x = random_tensor(rng, &[n, 3]);
    let w = random_tensor(rng, &[n, 3]);
    param_grad_check(&p, |b| weighted(g.forward(b, b.tape().constant(x.clone()))?, &w), GRAD_EPS)
}

fn embedder_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let e = Embedder::new("e", 4, &[5], 3, Activation::Tanh)?;
    let p = random_params(&[&e], rng)?;
    let n = rng.gen_range(1..=3);
    let xs: Vec<Tensor> = (0..2).map(|_| random_tensor(rng, &[n, 4])).collect();
    let (h0, c0) = (random_tensor(rng, &[n, 3]), random_tensor(rng, &[n, 3]));
    let w = random_tensor(rng, &[n, 3]);
    param_grad_check(
        &p,
        |b| {
            let t = b.tape();
            let (mut h, mut c) = (t.constant(h0.clone()), t.constant(c0.clone()));
            for x in &xs {
                (h, c) = e.forward(b, t.constant(x.clone()), h, c)?;
            }
            weighted(h.add(c)?, &w)
        },
        GRAD_EPS,
    )
}

const IN: usize = 4;
const ACTIONS: usize = 3;

fn value_loss_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let cfg = small_net();
    let net = ValueNet::new(&cfg, IN, ACTIONS)?;
    let p = random_params(&[&net], rng)?;
    let n = rng.gen_range(1..=4);
    let batch = random_tensor(rng, &[n, IN]);
    let st = states(rng, cfg.embed_hidden, n)?;
    let acts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ACTIONS)).collect();
    let y: f64 = rng.gen_range(-2.0..2.0);
    param_grad_check(
        &p,
        |b| {
            let u = net.forward(b, &batch, &st)?;
            let d = joint_q_var(u.singular, u.factors, &acts, cfg.rank)?.sub(b.tape().scalar(y))?;
            Ok(d.mul(d)?.scale(0.5)?)
        },
        GRAD_EPS,
    )
}

fn model_loss_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let cfg = small_net();
    let model = AgentModel::new(&cfg, IN, ACTIONS)?;
    let p = random_params(&[&model], rng)?;
    let n = rng.gen_range(2..=4);
    let batch = random_tensor(rng, &[n, IN]);
    let st = states(rng, cfg.embed_hidden, n)?;
    let acts: Vec<usize> = (1..n).map(|_| rng.gen_range(0..ACTIONS)).collect();
    param_grad_check(
        &p,
        |b| {
            let probs = model.forward(b, &batch, &st)?.probs.expect("teammates present");
            Ok(nll_var(probs, &acts)?.0)
        },
        GRAD_EPS,
    )
}

fn ql_case(rng: &mut ChaCha8Rng) -> GResult<f64> {
    let cfg = small_net();
    let input = 7;
    let net = QlNet::new(&cfg, input, ACTIONS)?;
    let p = random_params(&[&net], rng)?;
    let xs: Vec<Tensor> = (0..2).map(|_| random_tensor(rng, &[1, input])).collect();
    let (h0, c0) = (random_tensor(rng, &[1, 3]), random_tensor(rng, &[1, 3]));
    let w = random_tensor(rng, &[1, ACTIONS]);
    param_grad_check(
        &p,
        |b| {
            let t = b.tape();
            let (mut h, mut c) = (t.constant(h0.clone()), t.constant(c0.clone()));
            let mut total = t.scalar(0.0);
            for x in &xs {
                let (q, h2, c2) = net.step(b, t.constant(x.clone()), h, c)?;
                (h, c) = (h2, c2);
                total = total.add(weighted(q, &w)?)?;
            }
            Ok(total)
        },
        GRAD_EPS,
    )
}

type Case = fn(&mut ChaCha8Rng) -> GResult<f64>;

const CASES: [(&str, Case); 7] = [
    ("mlp", mlp_case),
    ("lstm, 3 steps", lstm_case),
    ("graph block", graph_case),
    ("embedder, 2 steps", embedder_case),
    ("value loss", value_loss_case),
    ("agent model nll", model_loss_case),
    ("padded baseline, 2 steps", ql_case),
];

/// Every gradient check over `instances` random draws each.
pub fn gradcheck_suite(seed: u64, instances: usize) -> GResult<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CASES
        .iter()
        .map(|(name, case)| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                worst = worst.max(case(&mut rng)?);
            }
            Ok(Check {
                name,
                instances,
                worst,
                tolerance: GRAD_TOLERANCE,
            })
        })
        .collect()
}

/// Expected joint value by enumerating every teammate joint action, with
/// the joint value summed term by term from raw action-major factors.
pub fn brute_force_marginal(singular: &[Vec<f64>], factors: &[Vec<f64>], rank: usize, probs: &[Vec<f64>]) -> Vec<f64> {
    let n = singular.len();
    let na = singular[0].len();
    let pair = |j: usize, a: usize, k: usize, b: usize| -> f64 {
        (0..rank).map(|m| factors[j][a * rank + m] * factors[k][b * rank + m]).sum()
    };
    let combos = na.pow((n - 1) as u32);
    (0..na)
        .map(|a0| {
            let mut total = 0.0;
            for code in 0..combos {
                let mut acts = vec![a0];
                let mut c = code;
                for _ in 1..n {
                    acts.push(c % na);
                    c /= na;
                }
                let weight: f64 = (1..n).map(|j| probs[j - 1][acts[j]]).product();
                let mut q: f64 = (0..n).map(|j| singular[j][acts[j]]).sum();
                for j in 0..n {
                    for k in 0..n {
                        if j != k {
                            q += pair(j, acts[j], k, acts[k]);
                        }
                    }
                }
                total += weight * q;
            }
            total
        })
        .collect()
}

fn distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::EPSILON..1.0).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Closed-form marginal against enumeration; the error of an instance is
/// the largest `|closed - brute| / max(1, |brute|)` over learner actions.
pub fn oracle_suite(seed: u64, instances: usize) -> GResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = 1 + rng.gen_range(1..=4);
        let na = rng.gen_range(2..=6);
        let rank = rng.gen_range(1..=5);
        let singular: Vec<Vec<f64>> = (0..n).map(|_| (0..na).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let factors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..na * rank).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let probs: Vec<Vec<f64>> = (1..n).map(|_| distribution(&mut rng, na)).collect();
        let tables = UtilityTables::new((0..n as u32).map(AgentId).collect(), na, rank, singular.clone(), factors.clone())?;
        let closed = tables.marginal_q(&probs)?;
        let brute = brute_force_marginal(&singular, &factors, rank, &probs);
        for (c, b) in closed.iter().zip(&brute) {
            worst = worst.max((c - b).abs() / 1f64.max(b.abs()));
        }
    }
    Ok(Check {
        name: "marginal vs enumeration",
        instances,
        worst,
        tolerance: ORACLE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_checks_pass_on_a_few_instances() {
        for c in gradcheck_suite(11, 2).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn oracle_passes() {
        assert!(oracle_suite(5, 50).unwrap().passed());
    }

    #[test]
    fn brute_force_single_teammate_by_hand() {
        let singular = vec![vec![1.0, 2.0], vec![0.5, -0.5]];
        let factors = vec![vec![1.0, 3.0], vec![2.0, -1.0]];
        let probs = vec![vec![0.25, 0.75]];
        let got = brute_force_marginal(&singular, &factors, 1, &probs);
        let want0 = 1.0 + 0.25 * (0.5 + 2.0 * 1.0 * 2.0) + 0.75 * (-0.5 + -(2.0 * 1.0));
        let want1 = 2.0 + 0.25 * (0.5 + 2.0 * 3.0 * 2.0) + 0.75 * (-0.5 + -(2.0 * 3.0));
        assert!((got[0] - want0).abs() < 1e-12 && (got[1] - want1).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![0.3, -1.2])).unwrap();
        let good = param_grad_check(&p, |b| Ok(b.get("w")?.mul(b.get("w")?)?.sum()?), GRAD_EPS).unwrap();
        assert!(good < 1e-8);
        let bad = param_grad_check(
            &p,
            |b| {
                let w = b.get("w")?;
                let frozen = b.tape().constant(w.value().clone());
                Ok(w.mul(frozen)?.sum()?)
            },
            GRAD_EPS,
        )
        .unwrap();
        assert!(bad > 0.1);
    }
}
