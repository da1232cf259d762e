use super::{params::uniform_weight, Block, Bound, NnError, ParamStore, Result};
use crate::tensor::{Tensor, Var};

const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Standard LSTM cell over a batch of rows.
///
/// Each gate has its own `[input + hidden, hidden]` weight applied to
/// `concat(x, h)`:
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    prefix: String,
    input: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(NnError::EmptySpec);
        }
        Ok(Self {
            prefix: prefix.into(),
            input,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn weight_name(&self, gate: &str) -> String {
        format!("{}.w{gate}", self.prefix)
    }

    pub fn bias_name(&self, gate: &str) -> String {
        format!("{}.b{gate}", self.prefix)
    }

    pub fn step<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        h: Var<'t>,
        c: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (xs, hs, cs) = (x.shape(), h.shape(), c.shape());
        let rows = xs.first().copied().unwrap_or(0);
        let ok = xs.len() == 2
            && xs[1] == self.input
            && hs == [rows, self.hidden]
            && cs == [rows, self.hidden];
        if !ok {
            return Err(NnError::Mismatch(format!(
                "lstm {}: input {xs:?}, h {hs:?}, c {cs:?} for input {} hidden {}",
                self.prefix, self.input, self.hidden
            )));
        }
        let xh = x.tape().concat(&[x, h])?;
        let gate = |g: &str| -> Result<Var<'t>> {
            Ok(xh.matmul(p.get(&self.weight_name(g))?)?.add(p.get(&self.bias_name(g))?)?)
        };
        let i = gate("i")?.sigmoid()?;
        let f = gate("f")?.sigmoid()?;
        let o = gate("o")?.sigmoid()?;
        let g = gate("g")?.tanh()?;
        let c2 = f.mul(c)?.add(i.mul(g)?)?;
        let h2 = o.mul(c2.tanh()?)?;
        Ok((h2, c2))
    }
}

impl Block for LstmCell {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        for g in GATES {
            store.insert(
                self.weight_name(g),
                uniform_weight(self.input + self.hidden, self.hidden, rng),
            )?;
            store.insert(self.bias_name(g), Tensor::zeros(&[self.hidden]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_cell() -> (LstmCell, ParamStore) {
        let cell = LstmCell::new("l", 3, 2).unwrap();
        let mut p = init_params(&[&cell], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let shape = p.get(&n).unwrap().shape().to_vec();
            p.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        (cell, p)
    }

    #[test]
    fn zero_params_zero_cell_state() {
        let (cell, p) = zero_cell();
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = tape.constant(Tensor::new(&[1, 3], vec![5., -1., 2.]).unwrap());
        let h = tape.constant(Tensor::zeros(&[1, 2]));
        let c = tape.constant(Tensor::zeros(&[1, 2]));
        let (h2, c2) = cell.step(&b, x, h, c).unwrap();
        assert_eq!(h2.value().data(), &[0., 0.]);
        assert_eq!(c2.value().data(), &[0., 0.]);
    }

    #[test]
    fn zero_params_halve_cell_state() {
        let (cell, p) = zero_cell();
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = tape.constant(Tensor::new(&[1, 3], vec![5., -1., 2.]).unwrap());
        let h = tape.constant(Tensor::zeros(&[1, 2]));
        let c = tape.constant(Tensor::new(&[1, 2], vec![0.8, -3.0]).unwrap());
        let (_, c2) = cell.step(&b, x, h, c).unwrap();
        assert_eq!(c2.value().data(), &[0.4, -1.5]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (cell, p) = zero_cell();
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        let h = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(cell.step(&b, x, h, h).is_err());
    }
}
