//! Action selection and bootstrap targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GplError, Result};

/// How the learner turns action values into behaviour and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    /// Max over next action values, epsilon-greedy behaviour.
    Ql,
    /// Boltzmann expectation over next action values, Boltzmann behaviour.
    Spi,
}

/// `softmax(qbar / tau)`.
pub fn spi_policy(qbar: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(GplError::Config(format!("temperature must be positive, got {tau}")));
    }
    let m = qbar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = qbar.iter().map(|q| ((q - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Bootstrap target. Terminal transitions use `y = r`.
pub fn td_target(r: f64, next_qbar: &[f64], mode: TargetMode, gamma: f64, tau: f64, done: bool) -> Result<f64> {
    if done {
        return Ok(r);
    }
    let v = match mode {
        TargetMode::Ql => next_qbar.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        TargetMode::Spi => spi_policy(next_qbar, tau)?
            .iter()
            .zip(next_qbar)
            .map(|(p, q)| p * q)
            .sum(),
    };
    Ok(r + gamma * v)
}

/// Uniformly random among the maximisers.
pub fn greedy<R: Rng + ?Sized>(qbar: &[f64], rng: &mut R) -> usize {
    let m = qbar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best: Vec<usize> = (0..qbar.len()).filter(|&a| qbar[a] == m).collect();
    best[rng.gen_range(0..best.len())]
}

pub fn epsilon_greedy<R: Rng + ?Sized>(qbar: &[f64], eps: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < eps {
        rng.gen_range(0..qbar.len())
    } else {
        greedy(qbar, rng)
    }
}

/// Draws from a categorical distribution by inverse CDF.
pub fn sample<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Behaviour action: epsilon-greedy under QL, a Boltzmann draw under SPI.
pub fn act<R: Rng + ?Sized>(qbar: &[f64], mode: TargetMode, eps: f64, tau: f64, rng: &mut R) -> Result<usize> {
    match mode {
        TargetMode::Ql => Ok(epsilon_greedy(qbar, eps, rng)),
        TargetMode::Spi => Ok(sample(&spi_policy(qbar, tau)?, rng)),
    }
}

/// Linear decay from `start` to `end` over the first `fraction` of `total`
/// steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            fraction: 0.75,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        let horizon = self.fraction * total as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }
}

/// `0.5 (joint - y)^2`.
pub fn value_loss(joint: f64, y: f64) -> f64 {
    0.5 * (joint - y) * (joint - y)
}

/// Probabilities below this are replaced by it inside the log-likelihood.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-sum_j log p_j(a_j)`, with probabilities floored at [`PROB_FLOOR`].
/// Returns the loss and how many probabilities hit the floor.
pub fn agent_model_nll(probs: &[Vec<f64>], actions: &[usize]) -> Result<(f64, usize)> {
    if probs.len() != actions.len() {
        return Err(GplError::Shape(format!(
            "{} probability vectors for {} actions",
            probs.len(),
            actions.len()
        )));
    }
    let mut loss = 0.0;
    let mut floored = 0;
    for (p, &a) in probs.iter().zip(actions) {
        let v = *p.get(a).ok_or_else(|| GplError::Shape(format!("action {a} out of range")))?;
        if v < PROB_FLOOR {
            floored += 1;
        }
        loss -= v.max(PROB_FLOOR).ln();
    }
    Ok((loss, floored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spi_closed_form() {
        let p = spi_policy(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert_eq!(spi_policy(&[2.0; 4], 0.1).unwrap(), vec![0.25; 4]);
        let hot = spi_policy(&[5.0, -3.0, 1.0], 1e6).unwrap();
        assert!(hot.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-4));
    }

    #[test]
    fn spi_rejects_bad_temperature() {
        assert!(spi_policy(&[1.0], 0.0).is_err());
        assert!(spi_policy(&[1.0], -1.0).is_err());
        assert!(spi_policy(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(td_target(1.0, &[2.0, 1.0], TargetMode::Ql, 0.0, 0.1, false).unwrap(), 1.0);
        let y = td_target(1.0, &[2.0, -1.0], TargetMode::Ql, 0.9, 0.1, false).unwrap();
        assert!((y - 2.8).abs() < 1e-12);
        assert_eq!(td_target(1.5, &[9.0], TargetMode::Spi, 0.99, 0.1, true).unwrap(), 1.5);
    }

    #[test]
    fn losses() {
        assert_eq!(value_loss(2.0, 2.0), 0.0);
        assert_eq!(value_loss(3.0, 1.0), 2.0);
        let (l, f) = agent_model_nll(&[vec![0.2; 5], vec![0.2; 5]], &[0, 4]).unwrap();
        assert!((l - 2.0 * 5f64.ln()).abs() < 1e-12);
        assert_eq!(f, 0);
        let (l, f) = agent_model_nll(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(f, 1);
        assert_eq!(agent_model_nll(&[vec![0.0, 1.0]], &[1]).unwrap().0, 0.0);
    }

    #[test]
    fn epsilon_zero_takes_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(epsilon_greedy(&[0.0, 3.0, 1.0], 0.0, &mut rng), 1);
        }
    }

    #[test]
    fn epsilon_half_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..10_000)
            .filter(|_| epsilon_greedy(&[0.0, 0.0, 4.0, 0.0, 0.0], 0.5, &mut rng) == 2)
            .count();
        let f = hits as f64 / 10_000.0;
        assert!((f - 0.6).abs() < 0.02, "{f}");
    }

    #[test]
    fn schedule() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0, 1000), 1.0);
        assert!((s.at(375, 1000) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(750, 1000), 0.05);
        assert_eq!(s.at(999, 1000), 0.05);
        assert_eq!(s.at(0, 0), 0.05);
    }
}
