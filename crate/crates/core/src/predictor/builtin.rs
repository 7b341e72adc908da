use std::collections::HashMap;

use super::{PredictiveDistribution, Predictor};
use crate::error::{Error, Result};

const BIGRAM_WEIGHT: f64 = 0.5;

/// Laplace unigram over the visible tokens, optionally mixed with a
/// left-neighbour bigram when that neighbour is visible.
#[derive(Debug, Clone)]
pub struct BuiltinModel {
    vocab: u32,
    order: u8,
    alpha: f64,
}

struct Counts {
    unigram: Vec<u64>,
    total: u64,
    bigram: HashMap<(u32, u32), u64>,
    context_total: HashMap<u32, u64>,
}

impl BuiltinModel {
    pub fn new(vocab: u32, order: u8, alpha: f64) -> Result<Self> {
        if order > 1 {
            return Err(Error::Config(format!("built-in model order {order} not in {{0, 1}}")));
        }
        if vocab == 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config("built-in model needs vocab >= 1 and alpha > 0".into()));
        }
        Ok(Self { vocab, order, alpha })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    /// Context-table entries a deployment would have to ship.
    pub fn parameter_count(&self) -> u64 {
        let v = self.vocab as u64;
        if self.order == 0 {
            v
        } else {
            v + v * v
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(i) = tokens.iter().position(|&t| t >= self.vocab) {
            return Err(Error::predictor_at(i, format!("token {} outside vocabulary", tokens[i])));
        }
        Ok(())
    }

    fn count(&self, tokens: &[u32], hidden: &[bool]) -> Counts {
        let mut unigram = vec![0u64; self.vocab as usize];
        let mut total = 0;
        let mut bigram = HashMap::new();
        let mut context_total = HashMap::new();
        for (i, &t) in tokens.iter().enumerate() {
            if hidden[i] {
                continue;
            }
            unigram[t as usize] += 1;
            total += 1;
            if self.order == 1 && i > 0 && !hidden[i - 1] {
                *bigram.entry((tokens[i - 1], t)).or_insert(0) += 1;
                *context_total.entry(tokens[i - 1]).or_insert(0) += 1;
            }
        }
        Counts {
            unigram,
            total,
            bigram,
            context_total,
        }
    }

    fn smoothed(&self, count: u64, total: u64) -> f64 {
        (count as f64 + self.alpha) / (total as f64 + self.alpha * self.vocab as f64)
    }

    fn distribution(&self, view: &View, context: Option<u32>, position: usize, top_k: usize) -> PredictiveDistribution {
        let prob = |v: u32| {
            let uni = self.smoothed(view.unigram(v), view.total());
            match context {
                Some(c) => {
                    let bi = self.smoothed(view.pair(c, v), view.context_total(c));
                    (1.0 - BIGRAM_WEIGHT) * uni + BIGRAM_WEIGHT * bi
                }
                None => uni,
            }
        };
        let seen: Vec<(u32, f64)> = (0..self.vocab)
            .filter(|&v| view.unigram(v) > 0)
            .map(|v| (v, prob(v)))
            .collect();
        let mut dist = PredictiveDistribution::from_scores(position, seen, top_k);
        if dist.top.len() < top_k {
            // unseen tokens share one probability, strictly below any seen one
            let need = top_k - dist.top.len();
            let unseen = (0..self.vocab)
                .filter(|&v| view.unigram(v) == 0)
                .take(need)
                .map(|v| (v, prob(v)));
            dist.top.extend(unseen);
            let covered: f64 = dist.top.iter().map(|&(_, p)| p).sum();
            dist.tail_mass = (1.0 - covered).max(0.0);
        }
        dist
    }
}

/// Counts with one position's contributions taken out.
struct View<'a> {
    counts: &'a Counts,
    dropped: Option<u32>,
    dropped_pairs: [Option<(u32, u32)>; 2],
}

impl<'a> View<'a> {
    fn all(counts: &'a Counts) -> Self {
        Self {
            counts,
            dropped: None,
            dropped_pairs: [None, None],
        }
    }

    fn unigram(&self, v: u32) -> u64 {
        self.counts.unigram[v as usize] - u64::from(self.dropped == Some(v))
    }

    fn total(&self) -> u64 {
        self.counts.total - u64::from(self.dropped.is_some())
    }

    fn pair(&self, c: u32, v: u32) -> u64 {
        let dropped = self.dropped_pairs.iter().filter(|p| **p == Some((c, v))).count() as u64;
        self.counts.bigram.get(&(c, v)).copied().unwrap_or(0) - dropped
    }

    fn context_total(&self, c: u32) -> u64 {
        let dropped = self.dropped_pairs.iter().filter(|p| p.is_some_and(|p| p.0 == c)).count() as u64;
        self.counts.context_total.get(&c).copied().unwrap_or(0) - dropped
    }
}

impl Predictor for BuiltinModel {
    fn vocab_size(&self) -> u32 {
        self.vocab
    }

    fn surprisal(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::predictor("surprisal of an empty sequence"));
        }
        self.check_tokens(tokens)?;
        let counts = self.count(tokens, &vec![false; tokens.len()]);
        let n = tokens.len();
        let mut out = Vec::with_capacity(n);
        for (i, &x) in tokens.iter().enumerate() {
            let uni = self.smoothed(counts.unigram[x as usize] - 1, counts.total - 1);
            let p = if self.order == 1 && i > 0 {
                let ctx = tokens[i - 1];
                // drop the pairs (i-1, i) and (i, i+1) that involve position i
                let mut pair = counts.bigram[&(ctx, x)] - 1;
                let mut ctx_total = counts.context_total[&ctx] - 1;
                if i + 1 < n && x == ctx {
                    ctx_total -= 1;
                    if tokens[i + 1] == x {
                        pair -= 1;
                    }
                }
                (1.0 - BIGRAM_WEIGHT) * uni + BIGRAM_WEIGHT * self.smoothed(pair, ctx_total)
            } else {
                uni
            };
            out.push(-p.log2());
        }
        Ok(out)
    }

    fn predict(
        &self,
        tokens: &[u32],
        masked: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        let mut hidden = vec![false; tokens.len()];
        for &i in masked {
            *hidden
                .get_mut(i)
                .ok_or_else(|| Error::predictor_at(i, "masked index out of range"))? = true;
        }
        let visible: Vec<u32> = tokens
            .iter()
            .zip(&hidden)
            .map(|(&t, &h)| if h { 0 } else { t })
            .collect();
        self.check_tokens(&visible)?;
        let counts = self.count(&visible, &hidden);
        let mut cache: HashMap<Option<u32>, PredictiveDistribution> = HashMap::new();
        Ok(masked
            .iter()
            .map(|&i| {
                let context = (self.order == 1 && i > 0 && !hidden[i - 1]).then(|| visible[i - 1]);
                let mut d = cache
                    .entry(context)
                    .or_insert_with(|| self.distribution(&View::all(&counts), context, i, top_k))
                    .clone();
                d.position = i;
                d
            })
            .collect())
    }

    /// One counting pass, then each position's own contributions are
    /// subtracted instead of recounting the sequence per position.
    fn predict_leave_one_out(
        &self,
        tokens: &[u32],
        positions: &[usize],
        top_k: usize,
    ) -> Result<Vec<PredictiveDistribution>> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        self.check_tokens(tokens)?;
        if let Some(&i) = positions.iter().find(|&&i| i >= tokens.len()) {
            return Err(Error::predictor_at(i, "position out of range"));
        }
        let n = tokens.len();
        let counts = self.count(tokens, &vec![false; n]);
        Ok(positions
            .iter()
            .map(|&i| {
                let x = tokens[i];
                let bigram = self.order == 1;
                let left = (bigram && i > 0).then(|| tokens[i - 1]);
                let view = View {
                    counts: &counts,
                    dropped: Some(x),
                    dropped_pairs: [
                        left.map(|l| (l, x)),
                        (bigram && i + 1 < n).then(|| (x, tokens[i + 1])),
                    ],
                };
                self.distribution(&view, left, i, top_k)
            })
            .collect())
    }

    fn static_bytes(&self) -> u64 {
        4 * self.parameter_count()
    }

    fn describe(&self) -> String {
        format!("builtin:order{}", self.order)
    }
}
