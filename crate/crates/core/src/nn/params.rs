use std::collections::BTreeMap;

use rand::Rng;

use super::{NnError, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Named parameter tensors. Iteration order is the lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    /// Replaces an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NnError::Mismatch(format!(
                "{name}: shape {:?} vs {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Adds every entry of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// The entries whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            tape,
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.var(v.clone())))
                .collect(),
        }
    }

    /// Records every parameter as a constant.
    pub fn bind_const<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            tape,
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// A [`ParamStore`] recorded on a tape.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Gradients of the bound differentiable parameters.
    pub fn grads(&self, g: &Gradients) -> Grads {
        let mut out = Grads::default();
        for (k, v) in &self.vars {
            if v.requires_grad() {
                out.map.insert(k.clone(), g.wrt(*v));
            }
        }
        out
    }
}

/// Gradient map, parameter name to gradient tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    map: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.map.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise accumulation; names absent in `self` are copied in.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        for (k, g) in &other.map {
            match self.map.get_mut(k) {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(NnError::Mismatch(format!(
                            "{k}: gradient shape {:?} vs {:?}",
                            acc.shape(),
                            g.shape()
                        )));
                    }
                    let sum = acc.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
                    *acc = Tensor::from_parts(acc.shape().to_vec(), sum);
                }
                None => {
                    self.map.insert(k.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight matrix of shape `[fan_in, fan_out]`.
pub fn uniform_weight<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}
