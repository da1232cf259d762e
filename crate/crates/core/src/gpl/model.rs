//! The two networks of the learner: the joint action value model (value
//! embedding, singular utility MLP, pairwise factor MLP) and the agent model
//! (model embedding, message passing, action head).

use serde::{Deserialize, Serialize};

use super::cg::UtilityTables;
use super::embed::{Embedder, HiddenStates};
use super::policy::PROB_FLOOR;
use super::{GplError, Result};
use crate::nn::{Activation, Block, Bound, GraphBlock, Mlp, ParamStore};
use crate::osbg::AgentId;
use crate::tensor::{Tensor, Var};

pub const VALUE_PREFIX: &str = "value";
pub const MODEL_PREFIX: &str = "model";

/// Layer widths. Hidden layers use `activation`; output layers are linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Fully connected layers ahead of the LSTM.
    pub embed_fc: Vec<usize>,
    pub embed_hidden: usize,
    pub beta_hidden: Vec<usize>,
    pub delta_hidden: Vec<usize>,
    /// Edge network widths, hidden then message width.
    pub edge: Vec<usize>,
    /// Node network widths, hidden then output width.
    pub node: Vec<usize>,
    pub eta_hidden: Vec<usize>,
    /// Rank of the pairwise factorisation.
    pub rank: usize,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_fc: vec![100, 100],
            embed_hidden: 100,
            beta_hidden: vec![70, 60],
            delta_hidden: vec![70, 60],
            edge: vec![30],
            node: vec![70],
            eta_hidden: vec![20],
            rank: 5,
            activation: Activation::Relu,
        }
    }
}

impl NetConfig {
    /// Every layer at `width`, for fast tests.
    pub fn uniform(width: usize) -> Self {
        Self {
            embed_fc: vec![width, width],
            embed_hidden: width,
            beta_hidden: vec![width],
            delta_hidden: vec![width],
            edge: vec![width],
            node: vec![width],
            eta_hidden: vec![width],
            rank: 5,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .embed_fc
            .iter()
            .chain(&self.beta_hidden)
            .chain(&self.delta_hidden)
            .chain(&self.edge)
            .chain(&self.node)
            .chain(&self.eta_hidden);
        if self.embed_hidden == 0 || self.rank == 0 || widths.clone().any(|&w| w == 0) {
            return Err(GplError::Config("layer widths and rank must be positive".into()));
        }
        if self.embed_fc.is_empty() || self.edge.is_empty() || self.node.is_empty() {
            return Err(GplError::Config("embedding, edge and node networks need a layer".into()));
        }
        Ok(())
    }
}

fn mlp(prefix: String, input: usize, hidden: &[usize], output: usize, act: Activation) -> Result<Mlp> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    Ok(Mlp::new(prefix, &sizes, act, Activation::Identity)?)
}

/// Value pathway output on the tape.
pub struct Utilities<'t> {
    /// `[n, |A|]`.
    pub singular: Var<'t>,
    /// `[n, |A| K]`, action-major.
    pub factors: Var<'t>,
    pub h: Var<'t>,
    pub c: Var<'t>,
}

/// Embedding plus singular utility and pairwise factor heads, each fed
/// `concat(theta_j, theta_learner)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    embed: Embedder,
    beta: Mlp,
    delta: Mlp,
    n_actions: usize,
    rank: usize,
}

impl ValueNet {
    pub fn new(cfg: &NetConfig, input: usize, n_actions: usize) -> Result<Self> {
        Self::with_prefix(VALUE_PREFIX, cfg, input, n_actions)
    }

    pub fn with_prefix(prefix: &str, cfg: &NetConfig, input: usize, n_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.embed_hidden;
        Ok(Self {
            embed: Embedder::new(&format!("{prefix}.embed"), input, &cfg.embed_fc, h, cfg.activation)?,
            beta: mlp(format!("{prefix}.beta"), 2 * h, &cfg.beta_hidden, n_actions, cfg.activation)?,
            delta: mlp(format!("{prefix}.delta"), 2 * h, &cfg.delta_hidden, n_actions * cfg.rank, cfg.activation)?,
            n_actions,
            rank: cfg.rank,
        })
    }

    pub fn hidden(&self) -> usize {
        self.embed.hidden()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Heads applied to embeddings `theta` (`[n, H]`, learner in row 0).
    pub fn heads<'t>(&self, p: &Bound<'t>, theta: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let n = theta.shape()[0];
        let learner = theta.select_rows(vec![0; n])?;
        let pairs = theta.tape().concat(&[theta, learner])?;
        Ok((self.beta.forward(p, pairs)?, self.delta.forward(p, pairs)?))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, batch: &Tensor, states: &HiddenStates) -> Result<Utilities<'t>> {
        let (h, c) = self.embed.embed(p, batch, states)?;
        let (singular, factors) = self.heads(p, h)?;
        Ok(Utilities { singular, factors, h, c })
    }

    pub fn tables(&self, ids: Vec<AgentId>, u: &Utilities<'_>) -> Result<UtilityTables> {
        UtilityTables::from_flat(
            ids,
            self.n_actions,
            self.rank,
            u.singular.value().data(),
            u.factors.value().data(),
        )
    }
}

impl Block for ValueNet {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> crate::nn::Result<()> {
        self.embed.init(store, rng)?;
        self.beta.init(store, rng)?;
        self.delta.init(store, rng)
    }
}

/// Agent model output on the tape.
pub struct Prediction<'t> {
    /// `[n - 1, |A|]` teammate action distributions, rows 1.. of the batch;
    /// `None` when the learner is alone.
    pub probs: Option<Var<'t>>,
    pub h: Var<'t>,
    pub c: Var<'t>,
}

impl Prediction<'_> {
    pub fn prob_rows(&self) -> Vec<Vec<f64>> {
        match &self.probs {
            None => Vec::new(),
            Some(p) => {
                let t = p.value();
                (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
            }
        }
    }
}

/// Embedding, message passing over every agent present (learner included),
/// and a per-teammate softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    embed: Embedder,
    graph: GraphBlock,
    eta: Mlp,
}

impl AgentModel {
    pub fn new(cfg: &NetConfig, input: usize, n_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.embed_hidden;
        let graph = GraphBlock::new(&format!("{MODEL_PREFIX}.graph"), h, &cfg.edge, &cfg.node, cfg.activation)?;
        let eta = mlp(
            format!("{MODEL_PREFIX}.eta"),
            graph.output_dim(),
            &cfg.eta_hidden,
            n_actions,
            cfg.activation,
        )?;
        Ok(Self {
            embed: Embedder::new(&format!("{MODEL_PREFIX}.embed"), input, &cfg.embed_fc, h, cfg.activation)?,
            graph,
            eta,
        })
    }

    pub fn hidden(&self) -> usize {
        self.embed.hidden()
    }

    /// Teammate distributions from embeddings `theta` (`[n, H]`).
    pub fn head<'t>(&self, p: &Bound<'t>, theta: Var<'t>) -> Result<Option<Var<'t>>> {
        let n = theta.shape()[0];
        if n < 2 {
            return Ok(None);
        }
        let nodes = self.graph.forward(p, theta)?;
        let logits = self.eta.forward(p, nodes.select_rows((1..n).collect())?)?;
        Ok(Some(logits.softmax()?))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, batch: &Tensor, states: &HiddenStates) -> Result<Prediction<'t>> {
        let (h, c) = self.embed.embed(p, batch, states)?;
        Ok(Prediction {
            probs: self.head(p, h)?,
            h,
            c,
        })
    }
}

impl Block for AgentModel {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> crate::nn::Result<()> {
        self.embed.init(store, rng)?;
        self.graph.init(store, rng)?;
        self.eta.init(store, rng)
    }
}

/// `-sum_j log p_j(a_j)` on the tape. Probabilities below [`PROB_FLOOR`]
/// contribute the constant `-log PROB_FLOOR`; the count of such rows is
/// returned alongside.
pub fn nll_var<'t>(probs: Var<'t>, actions: &[usize]) -> Result<(Var<'t>, usize)> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != actions.len() || actions.iter().any(|&a| a >= shape[1]) {
        return Err(GplError::Shape(format!(
            "probabilities {shape:?} for actions {actions:?}"
        )));
    }
    let tape = probs.tape();
    let values = probs.value();
    let mut kept = Vec::new();
    let mut floored = 0;
    for (j, &a) in actions.iter().enumerate() {
        if values.row(j)[a] < PROB_FLOOR {
            floored += 1;
        } else {
            kept.push(j * shape[1] + a);
        }
    }
    let constant = tape.scalar(-(floored as f64) * PROB_FLOOR.ln());
    if kept.is_empty() {
        return Ok((constant, floored));
    }
    let picked = probs.reshape(&[shape[0] * shape[1], 1])?.select_rows(kept)?;
    let loss = picked.ln()?.sum()?.scale(-1.0)?.add(constant)?;
    Ok((loss, floored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpl::policy::agent_model_nll;
    use crate::nn::init_params;
    use crate::tensor::{grad_check, Tape, TensorError};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<AgentId> {
        (0..n as u32).map(AgentId).collect()
    }

    fn batch(n: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(&[n, width], (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn zeroed(p: &ParamStore, prefix: &str) -> ParamStore {
        let mut out = p.clone();
        for (k, v) in p.iter() {
            if k.starts_with(prefix) {
                out.set(k, Tensor::zeros(v.shape())).unwrap();
            }
        }
        out
    }

    #[test]
    fn zero_params_zero_embeddings() {
        let cfg = NetConfig::uniform(6);
        let v = ValueNet::new(&cfg, 4, 5).unwrap();
        let p = zeroed(&init_params(&[&v], &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), "");
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = v.forward(&b, &batch(3, 4, &mut rng), &HiddenStates::zeros(6, &ids(3))).unwrap();
        assert!(out.h.value().data().iter().all(|&x| x == 0.0));
        assert!(out.c.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_delta_zero_pairwise() {
        let cfg = NetConfig::uniform(6);
        let v = ValueNet::new(&cfg, 4, 5).unwrap();
        let p = zeroed(&init_params(&[&v], &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), "value.delta");
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = v.forward(&b, &batch(3, 4, &mut rng), &HiddenStates::zeros(6, &ids(3))).unwrap();
        let t = v.tables(ids(3), &out).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert!(t.pairwise_table(j, k).iter().flatten().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn singular_rows_use_learner_embedding() {
        let cfg = NetConfig::uniform(6);
        let v = ValueNet::new(&cfg, 4, 5).unwrap();
        let p = init_params(&[&v], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = batch(3, 6, &mut rng);
        let (s, _) = v.heads(&b, tape.constant(theta.clone())).unwrap();
        for j in 0..3 {
            let mut row = theta.row(j).to_vec();
            row.extend_from_slice(theta.row(0));
            let x = tape.constant(Tensor::new(&[1, 12], row).unwrap());
            let direct = v.beta.forward(&b, x).unwrap().value();
            assert_eq!(direct.data(), s.value().row(j));
        }
    }

    #[test]
    fn zero_eta_uniform_and_rows_are_distributions() {
        let cfg = NetConfig::uniform(6);
        let m = AgentModel::new(&cfg, 4, 5).unwrap();
        let p = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b4 = batch(4, 4, &mut rng);
        let tape = Tape::new();
        let out = m.forward(&p.bind_const(&tape), &b4, &HiddenStates::zeros(6, &ids(4))).unwrap();
        for row in out.prob_rows() {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.prob_rows().len(), 3);
        let z = zeroed(&p, "model.eta");
        let out = m.forward(&z.bind_const(&tape), &b4, &HiddenStates::zeros(6, &ids(4))).unwrap();
        for row in out.prob_rows() {
            assert!(row.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn learner_alone_has_no_predictions() {
        let m = AgentModel::new(&NetConfig::uniform(6), 4, 5).unwrap();
        let p = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = m.forward(&p.bind_const(&tape), &batch(1, 4, &mut rng), &HiddenStates::zeros(6, &ids(1))).unwrap();
        assert!(out.probs.is_none());
        assert!(out.prob_rows().is_empty());
    }

    #[test]
    fn tape_nll_matches_plain_and_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.gen_range(1..=4);
            let logits = batch(n, 5, &mut rng);
            let acts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let tape = Tape::new();
            let probs = tape.constant(logits).softmax().unwrap();
            let (l, f) = nll_var(probs, &acts).unwrap();
            let rows = probs.value();
            let rows: Vec<Vec<f64>> = (0..n).map(|r| rows.row(r).to_vec()).collect();
            let (plain, pf) = agent_model_nll(&rows, &acts).unwrap();
            let product: f64 = acts.iter().enumerate().map(|(j, &a)| rows[j][a]).product();
            assert_eq!(f, pf);
            assert!((l.item() - plain).abs() < 1e-12);
            assert!((l.item() + product.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_floor() {
        let tape = Tape::new();
        let p = tape.var(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap());
        let (l, f) = nll_var(p, &[1, 0]).unwrap();
        assert_eq!(f, 1);
        assert!((l.item() - (-PROB_FLOOR.ln() + 2f64.ln())).abs() < 1e-9);
        assert!(nll_var(p, &[2, 0]).is_err());
        assert!(nll_var(p, &[0]).is_err());
    }

    #[test]
    fn nll_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = batch(3, 5, &mut rng);
        let err = grad_check(
            |_, v| {
                let (l, _) = nll_var(v.softmax()?, &[0, 3, 4]).map_err(|e| TensorError::Invalid {
                    op: "nll",
                    msg: e.to_string(),
                })?;
                Ok(l)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
