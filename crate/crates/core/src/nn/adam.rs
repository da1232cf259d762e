use std::collections::BTreeMap;

use super::{Grads, NnError, ParamStore, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// First and second moment of one parameter, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// left untouched.
pub fn adam_step(params: &mut ParamStore, grads: &Grads, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(NnError::Mismatch(format!(
                "{name}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads.iter() {
        let p = params.get(name)?;
        let n = p.len();
        let m = state.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let mut out = p.to_vec();
        for i in 0..n {
            let gi = g.data()[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            out[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        let shape = p.shape().to_vec();
        params.set(name, Tensor::from_parts(shape, out))?;
    }
    Ok(())
}

/// `target <- (1 - alpha) * target + alpha * online`, entrywise.
pub fn polyak_update(target: &mut ParamStore, online: &ParamStore, alpha: f64) -> Result<()> {
    if !target.same_layout(online) {
        return Err(NnError::Mismatch("target and online stores differ in layout".into()));
    }
    let updated: Vec<(String, Tensor)> = target
        .iter()
        .zip(online.iter())
        .map(|((name, t), (_, o))| {
            let d = t
                .data()
                .iter()
                .zip(o.data())
                .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                .collect();
            (name.to_string(), Tensor::from_parts(t.shape().to_vec(), d))
        })
        .collect();
    for (name, t) in updated {
        target.set(&name, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(v.to_vec())).unwrap();
        p
    }

    fn grads(v: &[f64]) -> Grads {
        let mut g = Grads::new();
        g.insert("w", Tensor::vector(v.to_vec()));
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[1.0, -2.0]);
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &grads(&[0.0, 0.0]), &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 => update = lr * g / (|g| + eps)
        let mut p = store(&[0.0, 0.0]);
        let mut s = AdamState::new(2.5e-4);
        adam_step(&mut p, &grads(&[3.0, -0.5]), &mut s).unwrap();
        let w = p.get("w").unwrap().data().to_vec();
        assert!((w[0] + 2.5e-4).abs() < 1e-11, "{}", w[0]);
        assert!((w[1] - 2.5e-4).abs() < 1e-11, "{}", w[1]);
    }

    #[test]
    fn sequential_steps_match_reference_replay() {
        let gs = [[0.3, -1.2], [0.1, 0.4], [-2.0, 0.05]];
        let mut p = store(&[0.5, 0.5]);
        let mut s = AdamState::new(0.01);
        for g in &gs {
            adam_step(&mut p, &grads(g), &mut s).unwrap();
        }
        // textbook re-execution
        let (mut w, mut m, mut v) = ([0.5f64, 0.5], [0.0f64; 2], [0.0f64; 2]);
        for (t, g) in gs.iter().enumerate() {
            let t = t as i32 + 1;
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                w[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        assert_eq!(p.get("w").unwrap().data(), &w);
    }

    #[test]
    fn untouched_params_unchanged() {
        let mut p = store(&[1.0]);
        p.insert("b", Tensor::vector(vec![7.0])).unwrap();
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &grads(&[1.0]), &mut s).unwrap();
        assert_eq!(p.get("b").unwrap().data(), &[7.0]);
    }

    #[test]
    fn gradient_shape_mismatch_rejected() {
        let mut p = store(&[1.0, 2.0]);
        let mut s = AdamState::new(0.1);
        assert!(adam_step(&mut p, &grads(&[1.0]), &mut s).is_err());
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn polyak_extremes_and_small_alpha() {
        let online = store(&[1.0, 1.0]);
        let mut t = store(&[0.0, 0.0]);
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.get("w").unwrap().data(), &[0.0, 0.0]);
        polyak_update(&mut t, &online, 1e-3).unwrap();
        assert_eq!(t.get("w").unwrap().data(), &[0.001, 0.001]);
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn polyak_rejects_mismatched_stores() {
        let mut t = store(&[0.0]);
        assert!(polyak_update(&mut t, &store(&[0.0, 1.0]), 0.5).is_err());
    }
}
