//! The conditional model that acts as the decompressor.
//!
//! A [`Predictor`] answers two kinds of query: leave-one-out surprisal for
//! every position, and ranked distributions for a set of masked positions
//! conditioned on everything else. Token values at masked positions must
//! not influence the answer; the codecs zero them before querying so that
//! encoder and decoder issue byte-identical requests.

mod builtin;
mod guard;
mod synthetic;

use std::cmp::Ordering;

pub use builtin::BuiltinModel;
pub use guard::DeterminismGuard;
pub use synthetic::{SyntheticPredictor, UniformPredictor};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub position: usize,
    /// Descending probability, ties by lower token id.
    pub top: Vec<(u32, f64)>,
    pub tail_mass: f64,
}

impl PredictiveDistribution {
    /// Builds a ranked list from arbitrary `(token, probability)` pairs.
    /// Non-positive probabilities are dropped; the tail is whatever mass the
    /// truncated list does not cover.
    pub fn from_scores(
        position: usize,
        scores: impl IntoIterator<Item = (u32, f64)>,
        top_k: usize,
    ) -> Self {
        let mut top: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, p)| p > 0.0).collect();
        sort_ranked(&mut top);
        top.truncate(top_k);
        let covered: f64 = top.iter().map(|&(_, p)| p).sum();
        Self {
            position,
            top,
            tail_mass: (1.0 - covered).max(0.0),
        }
    }

    /// 1-based rank of `token`, or `None` when it is not listed.
    pub fn rank_of(&self, token: u32) -> Option<u32> {
        self.top
            .iter()
            .position(|&(t, _)| t == token)
            .map(|i| i as u32 + 1)
    }

    pub fn argmax(&self) -> Option<u32> {
        self.top.first().map(|&(t, _)| t)
    }

    pub fn top1_probability(&self) -> f64 {
        self.top.first().map_or(0.0, |&(_, p)| p)
    }

    pub fn token_at_rank(&self, rank: u32) -> Option<u32> {
        self.top.get(rank.checked_sub(1)? as usize).map(|&(t, _)| t)
    }

    pub fn total_mass(&self) -> f64 {
        self.top.iter().map(|&(_, p)| p).sum::<f64>() + self.tail_mass
    }
}

pub fn ranked_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn sort_ranked(entries: &mut [(u32, f64)]) {
    entries.sort_by(ranked_order);
}

pub trait Predictor: Send + Sync {
    fn vocab_size(&self) -> u32;

    /// `-log2 q(x_i | x without i)` for every position.
    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>>;

    /// One distribution per entry of `masked` (sorted, unique), conditioned
    /// on the tokens outside `masked` only.
    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>>;

    /// Distributions for each position with only that position hidden.
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        let mut out = Vec::with_capacity(positions.len());
        for &i in positions {
            out.extend(self.predict(tokens, &[i], top_k)?);
        }
        Ok(out)
    }

    /// Serialized size of the model for amortised-rate accounting.
    fn static_bytes(&self) -> u64 {
        0
    }

    fn describe(&self) -> String;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn vocab_size(&self) -> u32 {
        (**self).vocab_size()
    }
    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        (**self).surprisal(tokens)
    }
    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict(tokens, masked, top_k)
    }
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict_leave_one_out(tokens, positions, top_k)
    }
    fn static_bytes(&self) -> u64 {
        (**self).static_bytes()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn vocab_size(&self) -> u32 {
        (**self).vocab_size()
    }
    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        (**self).surprisal(tokens)
    }
    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict(tokens, masked, top_k)
    }
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict_leave_one_out(tokens, positions, top_k)
    }
    fn static_bytes(&self) -> u64 {
        (**self).static_bytes()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<P: Predictor + ?Sized> Predictor for std::sync::Arc<P> {
    fn vocab_size(&self) -> u32 {
        (**self).vocab_size()
    }
    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        (**self).surprisal(tokens)
    }
    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict(tokens, masked, top_k)
    }
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        (**self).predict_leave_one_out(tokens, positions, top_k)
    }
    fn static_bytes(&self) -> u64 {
        (**self).static_bytes()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Copy of `tokens` with every masked entry replaced by 0.
pub fn blind_query(tokens: &[u32], masked: &[usize]) -> Vec<u32> {
    let mut query = tokens.to_vec();
    for &i in masked {
        query[i] = 0;
    }
    query
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_token_id() {
        let d = PredictiveDistribution::from_scores(
            0,
            vec![(7, 0.25), (3, 0.25), (9, 0.5), (1, 0.0)],
            10,
        );
        assert_eq!(d.top, vec![(9, 0.5), (3, 0.25), (7, 0.25)]);
        assert_eq!(d.rank_of(7), Some(3));
        assert_eq!(d.rank_of(1), None);
        assert_eq!(d.token_at_rank(2), Some(3));
        assert_eq!(d.token_at_rank(0), None);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_moves_mass_to_tail() {
        let d = PredictiveDistribution::from_scores(4, vec![(0, 0.5), (1, 0.3), (2, 0.2)], 1);
        assert_eq!(d.top.len(), 1);
        assert!((d.tail_mass - 0.5).abs() < 1e-12);
    }
}
