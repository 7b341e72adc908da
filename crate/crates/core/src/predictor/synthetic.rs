use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PredictiveDistribution, Predictor};
use crate::error::{Error, Result};

const DECAY: f64 = 0.5;

/// Test predictor that knows the reference text and places the true token
/// at a prescribed rank for every position, regardless of context.
///
/// The ranked list at position `i` is the sequence `x_i + 1, x_i + 2, ...`
/// (mod V) with `x_i` inserted at rank `ranks[i]`; probabilities decay
/// geometrically with rank.
#[derive(Debug, Clone)]
pub struct SyntheticPredictor {
    truth: Vec<u32>,
    ranks: Vec<u32>,
    vocab: u32,
    surprisal: Option<f64>,
}

impl SyntheticPredictor {
    pub fn new(truth: Vec<u32>, ranks: Vec<u32>, vocab: u32) -> Result<Self> {
        if truth.len() != ranks.len() {
            return Err(Error::Config("one rank per reference token".into()));
        }
        if vocab < 2 || truth.iter().any(|&t| t >= vocab) {
            return Err(Error::Config("reference tokens outside vocabulary".into()));
        }
        let ranks = ranks.into_iter().map(|r| r.clamp(1, vocab)).collect();
        Ok(Self {
            truth,
            ranks,
            vocab,
            surprisal: None,
        })
    }

    /// Always ranks the true token first.
    pub fn oracle(truth: Vec<u32>, vocab: u32) -> Result<Self> {
        let n = truth.len();
        Self::new(truth, vec![1; n], vocab)
    }

    /// Draws ranks i.i.d.: rank 1 with probability `p1`, uniform on 2..=4
    /// with probability `p_near`, otherwise uniform on 5..=V.
    pub fn with_accuracy(truth: Vec<u32>, vocab: u32, p1: f64, p_near: f64, seed: u64) -> Result<Self> {
        if vocab < 5 {
            return Err(Error::Config("accuracy profile needs vocab >= 5".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks = (0..truth.len())
            .map(|_| {
                let u: f64 = rng.gen();
                if u < p1 {
                    1
                } else if u < p1 + p_near {
                    rng.gen_range(2..=4)
                } else {
                    rng.gen_range(5..=vocab)
                }
            })
            .collect();
        Self::new(truth, ranks, vocab)
    }

    /// Reports the same surprisal everywhere, so mask selection ignores
    /// the rank profile.
    pub fn with_constant_surprisal(mut self, bits: f64) -> Self {
        self.surprisal = Some(bits);
        self
    }

    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }

    fn rank_probability(&self, rank: u32) -> f64 {
        let norm = (1.0 - DECAY) / (1.0 - DECAY.powi(self.vocab as i32));
        norm * DECAY.powi(rank as i32 - 1)
    }

    fn check_len(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() != self.truth.len() {
            return Err(Error::predictor(format!(
                "synthetic predictor built for {} tokens, queried with {}",
                self.truth.len(),
                tokens.len()
            )));
        }
        Ok(())
    }
}

impl Predictor for SyntheticPredictor {
    fn vocab_size(&self) -> u32 {
        self.vocab
    }

    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_len(tokens)?;
        Ok(match self.surprisal {
            Some(bits) => vec![bits; tokens.len()],
            None => self
                .ranks
                .iter()
                .map(|&r| -self.rank_probability(r).log2())
                .collect(),
        })
    }

    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        self.check_len(tokens)?;
        masked
            .iter()
            .map(|&i| {
                let truth = *self
                    .truth
                    .get(i)
                    .ok_or_else(|| Error::predictor_at(i, "masked index out of range"))?;
                let rank = self.ranks[i];
                let len = top_k.min(self.vocab as usize) as u32;
                let mut filler = (1..self.vocab).map(|d| (truth + d) % self.vocab);
                let top = (1..=len)
                    .map(|r| {
                        let token = if r == rank { truth } else { filler.next().unwrap() };
                        (token, self.rank_probability(r))
                    })
                    .collect();
                let mut d = PredictiveDistribution {
                    position: i,
                    top,
                    tail_mass: 0.0,
                };
                d.tail_mass = (1.0 - d.top.iter().map(|e| e.1).sum::<f64>()).max(0.0);
                Ok(d)
            })
            .collect()
    }

    fn describe(&self) -> String {
        "synthetic".into()
    }
}

/// Every token equally likely; the argmax is always token 0.
#[derive(Debug, Clone)]
pub struct UniformPredictor {
    vocab: u32,
}

impl UniformPredictor {
    pub fn new(vocab: u32) -> Self {
        assert!(vocab >= 1);
        Self { vocab }
    }
}

impl Predictor for UniformPredictor {
    fn vocab_size(&self) -> u32 {
        self.vocab
    }

    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(vec![(self.vocab as f64).log2(); tokens.len()])
    }

    fn predict(
        &self,
        _tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        let p = 1.0 / self.vocab as f64;
        Ok(masked
            .iter()
            .map(|&i| PredictiveDistribution::from_scores(i, (0..self.vocab).map(|v| (v, p)), top_k))
            .collect())
    }

    fn describe(&self) -> String {
        "uniform".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_lands_on_its_rank() {
        let p = SyntheticPredictor::new(vec![5, 9, 0], vec![1, 3, 20], 16).unwrap();
        let d = p.predict(&[0, 0, 0], &[0, 1, 2], 8).unwrap();
        assert_eq!(d[0].rank_of(5), Some(1));
        assert_eq!(d[1].rank_of(9), Some(3));
        assert_eq!(d[1].top[0].0, 10);
        assert_eq!(d[2].rank_of(0), None);
        for dist in &d {
            assert!((dist.total_mass() - 1.0).abs() < 1e-9);
            let mut sorted = dist.top.clone();
            crate::predictor::sort_ranked(&mut sorted);
            assert_eq!(sorted, dist.top);
        }
    }

    #[test]
    fn accuracy_profile_is_reproducible() {
        let truth = vec![1u32; 10_000];
        let a = SyntheticPredictor::with_accuracy(truth.clone(), 256, 0.9, 0.08, 3).unwrap();
        let b = SyntheticPredictor::with_accuracy(truth, 256, 0.9, 0.08, 3).unwrap();
        assert_eq!(a.ranks(), b.ranks());
        let top1 = a.ranks().iter().filter(|&&r| r == 1).count() as f64 / 10_000.0;
        let near = a.ranks().iter().filter(|&&r| (2..=4).contains(&r)).count() as f64 / 10_000.0;
        assert!((top1 - 0.9).abs() < 0.01);
        assert!((near - 0.08).abs() < 0.01);
    }

    #[test]
    fn uniform_argmax_is_token_zero() {
        let u = UniformPredictor::new(4);
        let d = u.predict(&[3, 3], &[1], 4).unwrap();
        assert_eq!(d[0].argmax(), Some(0));
        assert_eq!(u.surprisal(&[1, 2]).unwrap(), vec![2.0, 2.0]);
    }
}
