//! Confidence-ordered infilling and iterative refinement of a decode.

use crate::error::{Error, Result};
use crate::predictor::{blind_query, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineConfig {
    pub iterations: u32,
    /// Holes fixed per predictor call during infilling.
    pub chunk: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            chunk: 8,
        }
    }
}

/// Positions revised in refinement step `step` (1-based): `ceil(n / 2^step)`.
pub fn schedule(candidates: usize, step: u32) -> usize {
    if step >= usize::BITS {
        return usize::from(candidates > 0);
    }
    candidates.div_ceil(1 << step)
}

/// Fills `holes` in `tokens`, `chunk` at a time, most confident first.
pub fn infill(tokens: &[u32], holes: &[usize], predictor: &dyn Predictor, chunk: usize) -> Result<Vec<u32>> {
    if chunk == 0 {
        return Err(Error::Config("infill chunk must be at least 1".into()));
    }
    let mut out = tokens.to_vec();
    let mut remaining: Vec<usize> = holes.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    while !remaining.is_empty() {
        let query = blind_query(&out, &remaining);
        let dists = predictor.predict(&query, &remaining, 1)?;
        if dists.len() != remaining.len() {
            return Err(Error::predictor("wrong number of distributions"));
        }
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        let confident_first = |&a: &usize, &b: &usize| {
            dists[b]
                .top1_probability()
                .total_cmp(&dists[a].top1_probability())
                .then(remaining[a].cmp(&remaining[b]))
        };
        // a strict total order, so selecting the head equals a full sort
        if chunk < order.len() {
            order.select_nth_unstable_by(chunk, confident_first);
            order.truncate(chunk);
        }
        let mut fixed = vec![false; remaining.len()];
        for &j in &order {
            out[remaining[j]] = dists[j]
                .argmax()
                .ok_or_else(|| Error::predictor_at(remaining[j], "empty distribution"))?;
            fixed[j] = true;
        }
        remaining = remaining
            .iter()
            .zip(&fixed)
            .filter_map(|(&i, &f)| (!f).then_some(i))
            .collect();
    }
    Ok(out)
}

/// Re-predicts the least confident infilled positions for `cfg.iterations`
/// rounds. Stored tokens and anything in `locked` never change.
pub fn refine(
    tokens: &[u32],
    predictor: &dyn Predictor,
    cfg: &RefineConfig,
    infilled: &[usize],
    locked: &[usize],
) -> Result<Vec<u32>> {
    let mut current = tokens.to_vec();
    let mut candidates: Vec<usize> = infilled
        .iter()
        .copied()
        .filter(|i| !locked.contains(i))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.iter().any(|&i| i >= current.len()) {
        return Err(Error::Input("refinement position out of range".into()));
    }
    for step in 1..=cfg.iterations {
        let budget = schedule(candidates.len(), step);
        if budget == 0 {
            break;
        }
        let dists = predictor.predict_leave_one_out(&current, &candidates, 1)?;
        if dists.len() != candidates.len() {
            return Err(Error::predictor("wrong number of distributions"));
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        // most uncertain first: ascending top-1 probability
        order.sort_by(|&a, &b| {
            dists[a]
                .top1_probability()
                .total_cmp(&dists[b].top1_probability())
                .then(candidates[a].cmp(&candidates[b]))
        });
        // all replacements come from the same snapshot's distributions
        for &j in order.iter().take(budget) {
            let pos = candidates[j];
            current[pos] = dists[j]
                .argmax()
                .ok_or_else(|| Error::predictor_at(pos, "empty distribution"))?;
        }
    }
    Ok(current)
}
