//! Override flags plus one correction symbol per flagged position.
//!
//! The correction alphabet is `{first..=K, FB, SKIP}`: a rank into the
//! predictor's list, "the token follows in the fallback stream", or "leave
//! the default". EPC uses `first = 2` (rank 1 is never flagged); the patcher
//! uses `first = 1` because a mismatch can still be the model's top choice.

use crate::entropy::{
    adaptive_bernoulli_decode, adaptive_bernoulli_encode, adaptive_multi_decode, adaptive_multi_encode,
    adaptive_vway_decode, adaptive_vway_encode,
};
use crate::error::{Error, Result};
use crate::payload::{FallbackMode, Fraction};
use crate::predictor::PredictiveDistribution;

use super::{check_empty, pack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Correction {
    Rank(u32),
    Fallback(u32),
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResidualStreams {
    pub flags: Vec<bool>,
    /// One entry per set flag, in position order.
    pub corrections: Vec<Correction>,
}

impl ResidualStreams {
    pub fn skip_count(&self) -> usize {
        self.corrections.iter().filter(|c| **c == Correction::Skip).count()
    }

    pub fn fallback_tokens(&self) -> Vec<u32> {
        self.corrections
            .iter()
            .filter_map(|c| match c {
                Correction::Fallback(t) => Some(*t),
                _ => None,
            })
            .collect()
    }

    pub fn rank_count(&self) -> usize {
        self.corrections.iter().filter(|c| matches!(c, Correction::Rank(_))).count()
    }

    /// Pairs each set flag's index (into `flags`) with its correction.
    pub fn flagged(&self) -> impl Iterator<Item = (usize, Correction)> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .zip(self.corrections.iter().copied())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Alphabet {
    pub first: u32,
    pub k: u32,
}

impl Alphabet {
    fn size(self) -> usize {
        (self.k - self.first + 3) as usize
    }

    fn fb(self) -> usize {
        (self.k - self.first + 1) as usize
    }

    fn skip(self) -> usize {
        (self.k - self.first + 2) as usize
    }

    fn symbol(self, c: Correction) -> usize {
        match c {
            Correction::Rank(r) => (r - self.first) as usize,
            Correction::Fallback(_) => self.fb(),
            Correction::Skip => self.skip(),
        }
    }
}

/// Chooses a correction for each flagged position. `items` yields, per
/// position in order, whether it is flagged, the true token's rank (None
/// when absent from the list) and the true token.
pub(crate) fn assign(
    items: impl IntoIterator<Item = (bool, Option<u32>, u32)>,
    alphabet: Alphabet,
    mode: FallbackMode,
    beta: Fraction,
    budget_base: usize,
) -> ResidualStreams {
    let mut budget = match mode {
        FallbackMode::Off => 0,
        FallbackMode::Budget => beta.floor_mul(budget_base),
        FallbackMode::Full => usize::MAX,
    };
    let mut out = ResidualStreams::default();
    for (flagged, rank, truth) in items {
        out.flags.push(flagged);
        if !flagged {
            continue;
        }
        let c = match rank {
            Some(r) if (alphabet.first..=alphabet.k).contains(&r) => Correction::Rank(r),
            _ if budget > 0 => {
                budget -= 1;
                Correction::Fallback(truth)
            }
            _ => Correction::Skip,
        };
        out.corrections.push(c);
    }
    out
}

pub(crate) struct EncodedResidual {
    pub flags: Vec<u8>,
    pub ranks: Vec<u8>,
    pub fallback: Vec<u8>,
    pub ideal_fallback: f64,
}

pub(crate) fn encode(res: &ResidualStreams, alphabet: Alphabet, vocab: u32) -> Result<EncodedResidual> {
    let symbols: Vec<usize> = res.corrections.iter().map(|&c| alphabet.symbol(c)).collect();
    let fallback = adaptive_vway_encode(&res.fallback_tokens(), vocab)?;
    Ok(EncodedResidual {
        flags: pack(adaptive_bernoulli_encode(&res.flags)),
        ranks: pack(adaptive_multi_encode(&symbols, alphabet.size())?),
        fallback: pack(fallback.stream),
        ideal_fallback: fallback.ideal_bits,
    })
}

pub(crate) fn decode(
    flags: &[u8],
    ranks: &[u8],
    fallback: &[u8],
    n_flags: usize,
    alphabet: Alphabet,
    vocab: u32,
) -> Result<ResidualStreams> {
    let flags = if n_flags == 0 {
        check_empty(flags, "flag")?;
        Vec::new()
    } else {
        adaptive_bernoulli_decode(flags, n_flags)?
    };
    let n_set = flags.iter().filter(|&&f| f).count();
    let symbols = if n_set == 0 {
        check_empty(ranks, "rank")?;
        Vec::new()
    } else {
        adaptive_multi_decode(ranks, alphabet.size(), n_set)?
    };
    let n_fb = symbols.iter().filter(|&&s| s == alphabet.fb()).count();
    let tokens = if n_fb == 0 {
        check_empty(fallback, "fallback")?;
        Vec::new()
    } else {
        adaptive_vway_decode(fallback, vocab, n_fb)?
    };
    let mut tokens = tokens.into_iter();
    let corrections = symbols
        .into_iter()
        .map(|s| {
            if s == alphabet.fb() {
                Correction::Fallback(tokens.next().expect("one token per FB symbol"))
            } else if s == alphabet.skip() {
                Correction::Skip
            } else {
                Correction::Rank(s as u32 + alphabet.first)
            }
        })
        .collect();
    Ok(ResidualStreams { flags, corrections })
}

/// Token a rank or fallback correction stands for.
pub(crate) fn resolve(c: Correction, dist: &PredictiveDistribution) -> Result<Option<u32>> {
    match c {
        Correction::Rank(r) => dist.token_at_rank(r).map(Some).ok_or_else(|| {
            Error::Integrity(format!(
                "rank {r} at position {} but the predictor listed {} tokens",
                dist.position,
                dist.top.len()
            ))
        }),
        Correction::Fallback(t) => Ok(Some(t)),
        Correction::Skip => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPC: Alphabet = Alphabet { first: 2, k: 4 };

    #[test]
    fn assignment_follows_mode_and_budget() {
        let items = vec![
            (false, Some(1), 7),
            (true, Some(3), 8),
            (true, Some(9), 9),
            (true, None, 10),
            (true, Some(5), 11),
        ];
        let off = assign(items.clone(), EPC, FallbackMode::Off, Fraction::ONE, 5);
        assert_eq!(
            off.corrections,
            vec![Correction::Rank(3), Correction::Skip, Correction::Skip, Correction::Skip]
        );
        // floor(0.4 * 5) = 2 fallbacks, spent in position order
        let budget = assign(items.clone(), EPC, FallbackMode::Budget, Fraction::new(2, 5).unwrap(), 5);
        assert_eq!(
            budget.corrections,
            vec![
                Correction::Rank(3),
                Correction::Fallback(9),
                Correction::Fallback(10),
                Correction::Skip
            ]
        );
        let full = assign(items.clone(), EPC, FallbackMode::Full, Fraction::ZERO, 5);
        assert_eq!(full.skip_count(), 0);
        assert_eq!(full.fallback_tokens(), vec![9, 10, 11]);
        let zero = assign(items, EPC, FallbackMode::Budget, Fraction::ZERO, 5);
        assert_eq!(zero, off);
    }

    #[test]
    fn no_flags_means_three_empty_streams() {
        let res = assign(vec![(false, Some(1), 0); 20], EPC, FallbackMode::Full, Fraction::ONE, 20);
        let enc = encode(&res, EPC, 10).unwrap();
        assert!(!enc.flags.is_empty());
        assert!(enc.ranks.is_empty() && enc.fallback.is_empty());
        assert_eq!(decode(&enc.flags, &enc.ranks, &enc.fallback, 20, EPC, 10).unwrap(), res);
    }

    fn arb_items() -> impl Strategy<Value = Vec<(bool, Option<u32>, u32)>> {
        prop::collection::vec((any::<bool>(), prop::option::of(1u32..40), 0u32..300), 0..200)
    }

    proptest! {
        #[test]
        fn roundtrip(items in arb_items(), k in 2u32..20, first in 1u32..3, mode in 0u64..3, beta in 0u32..=10) {
            let alphabet = Alphabet { first: first.min(k), k };
            let n = items.len();
            let res = assign(items, alphabet, FallbackMode::from_id(mode).unwrap(), Fraction::new(beta, 10).unwrap(), n);
            let enc = encode(&res, alphabet, 300).unwrap();
            let back = decode(&enc.flags, &enc.ranks, &enc.fallback, n, alphabet, 300).unwrap();
            prop_assert_eq!(back, res);
        }
    }
}
