use super::{Activation, Block, Bound, Mlp, NnError, ParamStore, Result};
use crate::tensor::{Op, Tensor, Var};

/// Message passing over the fully connected directed graph on `n` nodes.
///
/// For every edge `j -> k` (`j != k`): `e_jk = edge(concat(v_j, v_k))`.
/// Node `k` then becomes `node(concat(v_k, sum_{j != k} e_jk))`; a lone node
/// aggregates the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBlock {
    edge: Mlp,
    node: Mlp,
    node_dim: usize,
}

impl GraphBlock {
    /// `edge_widths` and `node_widths` are the hidden-then-output widths of the
    /// edge and node networks.
    pub fn new(
        prefix: &str,
        node_dim: usize,
        edge_widths: &[usize],
        node_widths: &[usize],
        hidden: Activation,
    ) -> Result<Self> {
        if node_dim == 0 || edge_widths.is_empty() || node_widths.is_empty() {
            return Err(NnError::EmptySpec);
        }
        let mut es = vec![2 * node_dim];
        es.extend_from_slice(edge_widths);
        let msg = *edge_widths.last().unwrap();
        let mut ns = vec![node_dim + msg];
        ns.extend_from_slice(node_widths);
        Ok(Self {
            edge: Mlp::new(format!("{prefix}.edge"), &es, hidden, Activation::Identity)?,
            node: Mlp::new(format!("{prefix}.node"), &ns, hidden, Activation::Identity)?,
            node_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.node.output_dim()
    }

    pub fn message_dim(&self) -> usize {
        self.edge.output_dim()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, nodes: Var<'t>) -> Result<Var<'t>> {
        let shape = nodes.shape();
        if shape.len() != 2 || shape[1] != self.node_dim {
            return Err(NnError::Mismatch(format!(
                "graph block expects [n, {}] nodes, got {shape:?}",
                self.node_dim
            )));
        }
        let n = shape[0];
        if n == 0 {
            return Err(NnError::Mismatch("graph block needs at least one node".into()));
        }
        let tape = nodes.tape();
        let aggregate = if n == 1 {
            tape.constant(Tensor::zeros(&[1, self.message_dim()]))
        } else {
            let mut src = Vec::with_capacity(n * (n - 1));
            let mut dst = Vec::with_capacity(n * (n - 1));
            for k in 0..n {
                for j in (0..n).filter(|&j| j != k) {
                    src.push(j);
                    dst.push(k);
                }
            }
            let pairs = tape.concat(&[nodes.select_rows(src)?, nodes.select_rows(dst.clone())?])?;
            let messages = self.edge.forward(p, pairs)?;
            tape.apply(Op::GroupSum { group: dst, groups: n }, &[messages])?
        };
        let input = tape.concat(&[nodes, aggregate])?;
        self.node.forward(p, input)
    }
}

impl Block for GraphBlock {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        self.edge.init(store, rng)?;
        self.node.init(store, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block() -> (GraphBlock, ParamStore) {
        let g = GraphBlock::new("g", 4, &[6, 5], &[7, 3], Activation::Relu).unwrap();
        let p = init_params(&[&g], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (g, p)
    }

    fn random_nodes(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[n, 4], (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn run(g: &GraphBlock, p: &ParamStore, nodes: &Tensor) -> Tensor {
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        g.forward(&b, tape.constant(nodes.clone())).unwrap().value()
    }

    /// Edge-by-edge evaluation with one MLP call per edge and per node.
    fn oracle(g: &GraphBlock, p: &ParamStore, nodes: &Tensor) -> Vec<Vec<f64>> {
        let n = nodes.rows();
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        let row = |r: usize| Tensor::new(&[1, 4], nodes.row(r).to_vec()).unwrap();
        (0..n)
            .map(|k| {
                let mut agg = vec![0.0; g.message_dim()];
                for j in 0..n {
                    if j == k {
                        continue;
                    }
                    let inp = tape
                        .concat(&[tape.constant(row(j)), tape.constant(row(k))])
                        .unwrap();
                    let e = g.edge.forward(&b, inp).unwrap().value();
                    agg.iter_mut().zip(e.data()).for_each(|(a, v)| *a += v);
                }
                let agg = tape.constant(Tensor::new(&[1, agg.len()], agg).unwrap());
                let inp = tape.concat(&[tape.constant(row(k)), agg]).unwrap();
                g.node.forward(&b, inp).unwrap().value().to_vec()
            })
            .collect()
    }

    #[test]
    fn single_node_aggregates_zero() {
        let (g, p) = block();
        let nodes = random_nodes(1, 0);
        let out = run(&g, &p, &nodes);
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        let inp = tape
            .concat(&[tape.constant(nodes.clone()), tape.constant(Tensor::zeros(&[1, 5]))])
            .unwrap();
        assert_eq!(out, g.node.forward(&b, inp).unwrap().value());
    }

    #[test]
    fn matches_edge_by_edge_oracle() {
        let (g, p) = block();
        let nodes = random_nodes(3, 11);
        let out = run(&g, &p, &nodes);
        for (k, expect) in oracle(&g, &p, &nodes).iter().enumerate() {
            for (a, b) in out.row(k).iter().zip(expect) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let (g, p) = block();
        let nodes = random_nodes(4, 5);
        let perm = [2, 0, 3, 1];
        let permuted = Tensor::new(
            &[4, 4],
            perm.iter().flat_map(|&r| nodes.row(r).to_vec()).collect(),
        )
        .unwrap();
        let out = run(&g, &p, &nodes);
        let out_p = run(&g, &p, &permuted);
        for (i, &r) in perm.iter().enumerate() {
            assert_eq!(out_p.row(i), out.row(r));
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        let (g, p) = block();
        let tape = Tape::new();
        let b = p.bind_const(&tape);
        assert!(g.forward(&b, tape.constant(Tensor::zeros(&[0, 4]))).is_err());
    }
}
