//! Coordination-graph value algebra: utility tables, joint action values and
//! marginalised action values.

use serde::{Deserialize, Serialize};

use super::{GplError, Result};
use crate::osbg::{AgentId, JointAgentAction};
use crate::tensor::Var;

/// Singular utilities and rank-`K` pairwise factors for every agent present.
///
/// Row `j` of `factors` holds agent `j`'s `K x |A|` factor stored action-major:
/// entry `(m, a)` sits at `a * K + m`. Row 0 is the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTables {
    pub ids: Vec<AgentId>,
    pub n_actions: usize,
    pub rank: usize,
    pub singular: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
}

impl UtilityTables {
    pub fn new(
        ids: Vec<AgentId>,
        n_actions: usize,
        rank: usize,
        singular: Vec<Vec<f64>>,
        factors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ok = !ids.is_empty()
            && singular.len() == ids.len()
            && factors.len() == ids.len()
            && singular.iter().all(|s| s.len() == n_actions)
            && factors.iter().all(|f| f.len() == n_actions * rank);
        if !ok {
            return Err(GplError::Shape(format!(
                "{} agents, |A| = {n_actions}, K = {rank}: inconsistent table sizes",
                ids.len()
            )));
        }
        Ok(Self {
            ids,
            n_actions,
            rank,
            singular,
            factors,
        })
    }

    /// Builds tables from the flat `[n, |A|]` and `[n, |A| K]` network outputs.
    pub fn from_flat(ids: Vec<AgentId>, n_actions: usize, rank: usize, singular: &[f64], factors: &[f64]) -> Result<Self> {
        let s = singular.chunks(n_actions.max(1)).map(<[f64]>::to_vec).collect();
        let f = factors.chunks((n_actions * rank).max(1)).map(<[f64]>::to_vec).collect();
        Self::new(ids, n_actions, rank, s, f)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `factor_j[m, a]`.
    pub fn factor(&self, j: usize, m: usize, a: usize) -> f64 {
        self.factors[j][a * self.rank + m]
    }

    fn factor_col(&self, j: usize, a: usize) -> &[f64] {
        &self.factors[j][a * self.rank..(a + 1) * self.rank]
    }

    /// `pairwise(j, k)(a, b) = sum_m factor_j[m, a] factor_k[m, b]`.
    pub fn pairwise(&self, j: usize, k: usize, a: usize, b: usize) -> f64 {
        dot(self.factor_col(j, a), self.factor_col(k, b))
    }

    /// The full `|A| x |A|` table of one ordered pair.
    pub fn pairwise_table(&self, j: usize, k: usize) -> Vec<Vec<f64>> {
        (0..self.n_actions)
            .map(|a| (0..self.n_actions).map(|b| self.pairwise(j, k, a, b)).collect())
            .collect()
    }

    fn row_actions(&self, a: &JointAgentAction) -> Result<Vec<usize>> {
        self.ids
            .iter()
            .map(|&id| {
                let act = a.get(id).ok_or(GplError::MissingAction(id))?;
                if act >= self.n_actions {
                    return Err(GplError::Shape(format!("action {act} for {id} out of range")));
                }
                Ok(act)
            })
            .collect()
    }

    /// Sum of singular utilities plus pairwise utilities over ordered pairs.
    pub fn joint_q(&self, a: &JointAgentAction) -> Result<f64> {
        let acts = self.row_actions(a)?;
        Ok(self.joint_q_rows(&acts))
    }

    /// [`UtilityTables::joint_q`] with actions given per row.
    pub fn joint_q_rows(&self, acts: &[usize]) -> f64 {
        let n = self.len();
        let mut total: f64 = (0..n).map(|j| self.singular[j][acts[j]]).sum();
        let mut sum = vec![0.0; self.rank];
        let mut self_sq = 0.0;
        for (j, &a) in acts.iter().enumerate() {
            let g = self.factor_col(j, a);
            sum.iter_mut().zip(g).for_each(|(s, v)| *s += v);
            self_sq += dot(g, g);
        }
        total += dot(&sum, &sum) - self_sq;
        total
    }

    /// Expected joint value under independent teammate distributions `probs`
    /// (rows 1.., in table order), as a function of the learner's action.
    ///
    /// With `E_j = sum_b factor_j[:, b] p_j(b)` the learner-teammate pairs
    /// contribute `2 factor_i[:, a] . sum_j E_j` (both orderings of each pair),
    /// and the teammate-teammate pairs `|sum_j E_j|^2 - sum_j |E_j|^2`.
    pub fn marginal_q(&self, probs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.len();
        if probs.len() + 1 != n {
            return Err(GplError::Shape(format!(
                "{} teammates but {} probability vectors",
                n - 1,
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| p.len() != self.n_actions) {
            return Err(GplError::Shape(format!("probability vector of length {}", p.len())));
        }
        let k = self.rank;
        let mut base = 0.0;
        let mut e_sum = vec![0.0; k];
        let mut e_sq = 0.0;
        for (j, p) in (1..n).zip(probs) {
            let mut e = vec![0.0; k];
            for (b, &pb) in p.iter().enumerate() {
                base += self.singular[j][b] * pb;
                e.iter_mut().zip(self.factor_col(j, b)).for_each(|(x, v)| *x += v * pb);
            }
            e_sq += dot(&e, &e);
            e_sum.iter_mut().zip(&e).for_each(|(s, v)| *s += v);
        }
        base += dot(&e_sum, &e_sum) - e_sq;
        Ok((0..self.n_actions)
            .map(|a| self.singular[0][a] + base + 2.0 * dot(self.factor_col(0, a), &e_sum))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Joint value of `acts` (one per row) on the tape, from singular utilities
/// `[n, |A|]` and action-major factors `[n, |A| K]`.
pub fn joint_q_var<'t>(singular: Var<'t>, factors: Var<'t>, acts: &[usize], rank: usize) -> Result<Var<'t>> {
    let n = acts.len();
    let na = singular.shape()[1];
    let picks: Vec<usize> = acts.iter().enumerate().map(|(j, &a)| j * na + a).collect();
    let s = singular.reshape(&[n * na, 1])?.select_rows(picks.clone())?.sum()?;
    if n == 1 {
        return Ok(s);
    }
    let g = factors.reshape(&[n * na, rank])?.select_rows(picks)?;
    let col = g.sum_axis(0)?;
    let pair = col.mul(col)?.sum()?.sub(g.mul(g)?.sum()?)?;
    Ok(s.add(pair)?)
}
