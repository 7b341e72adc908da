//! Rank-based residual patch between an original and any token-aligned
//! reconstruction of it.

use crate::entropy::SCALE_BITS;
use crate::error::{Error, Result};
use crate::metrics::CostLedger;
use crate::payload::{CodecId, FallbackMode, Fraction, PatchContext, Payload, PayloadHeader, Streams};
use crate::positions::MaskSet;
use crate::predictor::{blind_query, PredictiveDistribution, Predictor};

use super::residual::{self, Alphabet, ResidualStreams};
use super::{check_empty, check_header, check_tokens, checked_predict, Compressed, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub k: u32,
    pub mode: FallbackMode,
    pub beta: Fraction,
    pub context: PatchContext,
    pub top_k: Option<u32>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            k: 16,
            mode: FallbackMode::Budget,
            beta: Fraction::new(1, 4).expect("valid"),
            context: PatchContext::MaskMismatches,
            top_k: None,
        }
    }
}

impl PatchConfig {
    pub fn top_k(&self) -> u32 {
        self.top_k.unwrap_or(self.k.max(DEFAULT_TOP_K))
    }
}

fn alphabet(k: u32) -> Alphabet {
    Alphabet { first: 1, k }
}

#[derive(Debug, Clone)]
pub struct Patched {
    pub tokens: Vec<u32>,
    pub residual: ResidualStreams,
    /// SKIP count over sequence length: the fraction that may still differ.
    pub error_bound: f64,
}

fn query(
    reconstructed: &[u32],
    mismatches: &[usize],
    predictor: &dyn Predictor,
    context: PatchContext,
    top_k: u32,
) -> Result<Vec<PredictiveDistribution>> {
    match context {
        PatchContext::MaskMismatches => checked_predict(
            predictor,
            &blind_query(reconstructed, mismatches),
            mismatches,
            top_k as usize,
            false,
        ),
        PatchContext::FullReconstruction => {
            checked_predict(predictor, reconstructed, mismatches, top_k as usize, true)
        }
    }
}

pub fn make_patch(
    original: &[u32],
    reconstructed: &[u32],
    chars: u64,
    predictor: &dyn Predictor,
    cfg: &PatchConfig,
) -> Result<Compressed> {
    if original.len() != reconstructed.len() {
        return Err(Error::Alignment {
            original: original.len(),
            reconstructed: reconstructed.len(),
        });
    }
    if cfg.k < 1 || cfg.k > cfg.top_k() {
        return Err(Error::Config(format!("K = {} with list length {}", cfg.k, cfg.top_k())));
    }
    let vocab = predictor.vocab_size();
    check_tokens(original, vocab)?;
    check_tokens(reconstructed, vocab)?;

    let flags: Vec<bool> = original.iter().zip(reconstructed).map(|(a, b)| a != b).collect();
    let mismatches = MaskSet::from_flags(&flags);
    let dists = query(reconstructed, mismatches.masked(), predictor, cfg.context, cfg.top_k())?;
    let mut dists = dists.iter();
    let items = original.iter().zip(&flags).map(|(&truth, &flag)| {
        let rank = if flag {
            dists.next().expect("one distribution per mismatch").rank_of(truth)
        } else {
            None
        };
        (flag, rank, truth)
    });
    let res = residual::assign(items, alphabet(cfg.k), cfg.mode, cfg.beta, mismatches.masked_count());
    let enc = residual::encode(&res, alphabet(cfg.k), vocab)?;

    let payload = Payload {
        header: PayloadHeader {
            codec: CodecId::Patch,
            p_mask: Fraction::ZERO,
            window: 0,
            max_run: 0,
            k: cfg.k,
            mode: cfg.mode,
            beta: cfg.beta,
            vocab,
            tokens: original.len() as u64,
            chars,
            aux_order: 0,
            scale_bits: SCALE_BITS,
            top_k: cfg.top_k(),
            refine_iters: 0,
            infill_chunk: 0,
            patch_context: cfg.context,
        },
        streams: Streams {
            flags: enc.flags,
            ranks: enc.ranks,
            fallback: enc.fallback,
            ..Default::default()
        },
    };
    let mut ledger = CostLedger::for_payload(&payload);
    ledger.ideal_fallback = Some(enc.ideal_fallback);
    Ok(Compressed {
        payload,
        ledger,
        mask: mismatches,
        residual: Some(res),
    })
}

pub fn apply_patch(reconstructed: &[u32], patch: &Payload, predictor: &dyn Predictor) -> Result<Patched> {
    let n = check_header(patch, CodecId::Patch, predictor)?;
    let h = &patch.header;
    if n != reconstructed.len() {
        return Err(Error::Alignment {
            original: n,
            reconstructed: reconstructed.len(),
        });
    }
    if h.k < 1 || h.k > h.top_k {
        return Err(Error::Format(format!("K = {} with list length {}", h.k, h.top_k)));
    }
    check_empty(&patch.streams.positions, "position")?;
    check_empty(&patch.streams.kept, "kept-token")?;
    let s = &patch.streams;
    let res = residual::decode(&s.flags, &s.ranks, &s.fallback, n, alphabet(h.k), h.vocab)?;
    let mismatches = MaskSet::from_flags(&res.flags);
    let dists = query(reconstructed, mismatches.masked(), predictor, h.patch_context, h.top_k)?;

    let mut tokens = reconstructed.to_vec();
    for ((i, c), d) in res.flagged().zip(&dists) {
        if let Some(t) = residual::resolve(c, d)? {
            if t >= h.vocab {
                return Err(Error::Integrity(format!("fallback token {t} outside vocabulary")));
            }
            tokens[i] = t;
        }
    }
    let error_bound = if n == 0 { 0.0 } else { res.skip_count() as f64 / n as f64 };
    Ok(Patched {
        tokens,
        residual: res,
        error_bound,
    })
}
