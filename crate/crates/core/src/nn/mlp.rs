use super::{params::uniform_weight, Activation, Block, Bound, NnError, ParamStore, Result};
use crate::tensor::{Tensor, Var};

/// Fully connected stack. `sizes = [in, h1, ..., out]`; every layer but the
/// last is followed by `hidden`, the last by `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    pub fn new(
        prefix: impl Into<String>,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::EmptySpec);
        }
        if sizes.contains(&0) {
            return Err(NnError::Mismatch(format!("zero layer width in {sizes:?}")));
        }
        Ok(Self {
            prefix: prefix.into(),
            sizes: sizes.to_vec(),
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for l in 0..self.layers() {
            let w = p.get(&self.weight_name(l))?;
            let b = p.get(&self.bias_name(l))?;
            h = h.matmul(w)?.add(b)?;
            let act = if l + 1 == self.layers() { self.output } else { self.hidden };
            h = act.apply(h)?;
        }
        Ok(h)
    }
}

impl Block for Mlp {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        for (l, w) in self.sizes.windows(2).enumerate() {
            store.insert(self.weight_name(l), uniform_weight(w[0], w[1], rng))?;
            store.insert(self.bias_name(l), Tensor::zeros(&[w[1]]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::tensor::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_spec_rejected() {
        assert!(matches!(
            Mlp::new("m", &[3], Activation::Relu, Activation::Identity),
            Err(NnError::EmptySpec)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(init_params(&[], &mut rng), Err(NnError::EmptySpec)));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let m = Mlp::new("m", &[2, 3], Activation::Relu, Activation::Identity).unwrap();
        let a = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.get("m.0.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_bound_is_inverse_sqrt_fan_in() {
        let m = Mlp::new("m", &[100, 70], Activation::Relu, Activation::Identity).unwrap();
        let p = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.get("m.0.w").unwrap().data().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let m = Mlp::new("m", &[3, 4, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut p = ParamStore::new();
        for l in 0..2 {
            let (i, o) = (m.sizes[l], m.sizes[l + 1]);
            p.insert(m.weight_name(l), Tensor::zeros(&[i, o])).unwrap();
            p.insert(m.bias_name(l), Tensor::zeros(&[o])).unwrap();
        }
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let x = tape.constant(Tensor::new(&[1, 3], vec![1., -2., 5.]).unwrap());
        let y = m.forward(&bound, x).unwrap();
        assert_eq!(y.value().data(), &[0., 0.]);
    }

    #[test]
    fn single_layer_is_affine() {
        let m = Mlp::new("m", &[2, 2], Activation::Relu, Activation::Identity).unwrap();
        let mut p = ParamStore::new();
        p.insert("m.0.w", Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap()).unwrap();
        p.insert("m.0.b", Tensor::vector(vec![0.5, -0.5])).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let x = tape.constant(Tensor::new(&[1, 2], vec![1., 1.]).unwrap());
        assert_eq!(m.forward(&bound, x).unwrap().value().data(), &[4.5, 5.5]);
    }

    #[test]
    fn input_width_mismatch_rejected() {
        let m = Mlp::new("m", &[3, 2], Activation::Relu, Activation::Identity).unwrap();
        let p = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(m.forward(&bound, x).is_err());
    }

    #[test]
    fn two_layer_gradient_check() {
        let m = Mlp::new("m", &[3, 5, 2], Activation::Tanh, Activation::Identity).unwrap();
        for seed in 0..5 {
            let p = init_params(&[&m], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let x = Tensor::new(&[2, 3], vec![0.3, -0.1, 0.8, 1.2, -0.4, 0.05]).unwrap();
            let err = grad_check(
                |tape, xv| {
                    let bound = p.bind_const(tape);
                    let y = m.forward(&bound, xv).map_err(|e| match e {
                        NnError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                    y.mul(y)?.sum()
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "{err}");
        }
    }
}
