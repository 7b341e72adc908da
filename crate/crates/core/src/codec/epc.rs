//! Error-Bounded Predictive Coding: PM plus rank-indexed residuals for the
//! masked positions the model gets wrong.

use crate::error::{Error, Result};
use crate::metrics::CostLedger;
use crate::payload::{CodecId, FallbackMode, Fraction, Payload, Streams};
use crate::positions::MaskSet;
use crate::predictor::{blind_query, PredictiveDistribution, Predictor};
use crate::recon::{refine, RefineConfig};

use super::pm::{mask_and_keep, masked_header};
use super::residual::{self, Alphabet, Correction, ResidualStreams};
use super::{check_header, checked_predict, decode_kept_channel, Compressed, PmConfig, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpcConfig {
    pub pm: PmConfig,
    pub k: u32,
    pub mode: FallbackMode,
    pub beta: Fraction,
    /// Refinement rounds over SKIP positions at decode time.
    pub refine_iters: u32,
    /// List length requested from the predictor; `max(K, 64)` when unset.
    pub top_k: Option<u32>,
}

impl Default for EpcConfig {
    fn default() -> Self {
        Self {
            pm: PmConfig::default(),
            k: 16,
            mode: FallbackMode::Budget,
            beta: Fraction::new(1, 4).expect("valid"),
            refine_iters: RefineConfig::default().iterations,
            top_k: None,
        }
    }
}

impl EpcConfig {
    pub fn top_k(&self) -> u32 {
        self.top_k.unwrap_or(self.k.max(DEFAULT_TOP_K))
    }

    pub fn validate(&self) -> Result<()> {
        self.pm.validate()?;
        if self.k < 2 {
            return Err(Error::Config(format!("K = {} but must be at least 2", self.k)));
        }
        if self.k > self.top_k() {
            return Err(Error::Config(format!(
                "K = {} exceeds the requested list length {}",
                self.k,
                self.top_k()
            )));
        }
        Ok(())
    }
}

fn alphabet(k: u32) -> Alphabet {
    Alphabet { first: 2, k }
}

/// What the decoder saw and did, beyond the tokens themselves.
#[derive(Debug, Clone)]
pub struct EpcDecoded {
    pub tokens: Vec<u32>,
    pub mask: MaskSet,
    pub residual: ResidualStreams,
    /// Tokens before refinement.
    pub unrefined: Vec<u32>,
    pub error_bound: f64,
}

/// Largest possible masked-set error rate: only SKIP positions can be wrong.
pub fn epc_error_bound(streams: &ResidualStreams, masked: usize) -> f64 {
    if masked == 0 {
        0.0
    } else {
        streams.skip_count() as f64 / masked as f64
    }
}

fn query(tokens: &[u32], mask: &MaskSet, predictor: &dyn Predictor, top_k: u32) -> Result<Vec<PredictiveDistribution>> {
    checked_predict(
        predictor,
        &blind_query(tokens, mask.masked()),
        mask.masked(),
        top_k as usize,
        false,
    )
}

pub fn epc_compress(tokens: &[u32], chars: u64, predictor: &dyn Predictor, cfg: &EpcConfig) -> Result<Compressed> {
    cfg.validate()?;
    let (mask, channel) = mask_and_keep(tokens, predictor, &cfg.pm)?;
    let dists = query(tokens, &mask, predictor, cfg.top_k())?;
    let items = mask.masked().iter().zip(&dists).map(|(&i, d)| {
        let rank = d.rank_of(tokens[i]);
        (rank != Some(1), rank, tokens[i])
    });
    let res = residual::assign(items, alphabet(cfg.k), cfg.mode, cfg.beta, mask.masked_count());
    let vocab = predictor.vocab_size();
    let enc = residual::encode(&res, alphabet(cfg.k), vocab)?;

    let mut header = masked_header(CodecId::Epc, &cfg.pm, vocab, tokens.len(), chars);
    header.k = cfg.k;
    header.mode = cfg.mode;
    header.beta = cfg.beta;
    header.top_k = cfg.top_k();
    header.refine_iters = cfg.refine_iters;
    let payload = Payload {
        header,
        streams: Streams {
            positions: channel.positions,
            kept: channel.kept,
            flags: enc.flags,
            ranks: enc.ranks,
            fallback: enc.fallback,
        },
    };
    let mut ledger = CostLedger::for_payload(&payload);
    ledger.ideal_tok = Some(channel.ideal_bits);
    ledger.ideal_fallback = Some(enc.ideal_fallback);
    Ok(Compressed {
        payload,
        ledger,
        mask,
        residual: Some(res),
    })
}

pub fn epc_decompress(payload: &Payload, predictor: &dyn Predictor) -> Result<EpcDecoded> {
    let n = check_header(payload, CodecId::Epc, predictor)?;
    let h = &payload.header;
    if h.k < 2 || h.k > h.top_k {
        return Err(Error::Format(format!("K = {} with list length {}", h.k, h.top_k)));
    }
    let (mask, mut tokens) = decode_kept_channel(payload, n)?;
    let s = &payload.streams;
    let res = residual::decode(&s.flags, &s.ranks, &s.fallback, mask.masked_count(), alphabet(h.k), h.vocab)?;
    let dists = query(&tokens, &mask, predictor, h.top_k)?;

    let mut corrections = res.corrections.iter();
    let mut skipped = Vec::new();
    for ((&i, d), &flag) in mask.masked().iter().zip(&dists).zip(&res.flags) {
        let fix = if flag {
            residual::resolve(*corrections.next().expect("one correction per flag"), d)?
        } else {
            None
        };
        if flag && fix.is_none() {
            skipped.push(i);
        }
        tokens[i] = match fix {
            Some(t) if t >= h.vocab => {
                return Err(Error::Integrity(format!("fallback token {t} outside vocabulary")));
            }
            Some(t) => t,
            None => d.argmax().expect("checked non-empty"),
        };
    }

    let unrefined = tokens.clone();
    if h.refine_iters > 0 && !skipped.is_empty() {
        let cfg = RefineConfig {
            iterations: h.refine_iters,
            chunk: h.infill_chunk.max(1),
        };
        // only SKIP positions are unverified; everything else is locked
        tokens = refine(&tokens, predictor, &cfg, &skipped, &[])?;
    }
    let error_bound = epc_error_bound(&res, mask.masked_count());
    debug_assert!(res.corrections.iter().filter(|c| **c == Correction::Skip).count() == skipped.len());
    Ok(EpcDecoded {
        tokens,
        mask,
        residual: res,
        unrefined,
        error_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{read_payload, write_payload};
    use crate::predictor::{BuiltinModel, SyntheticPredictor, UniformPredictor};
    use crate::recon::infill;
    use proptest::prelude::*;

    fn text(n: usize) -> Vec<u32> {
        (0..n).map(|i| ((i * 37 + i / 7) % 50) as u32).collect()
    }

    fn cfg(p: f64, k: u32, mode: FallbackMode, beta: f64) -> EpcConfig {
        EpcConfig {
            pm: PmConfig::default().with_p_mask(Fraction::from_f64(p).unwrap()),
            k,
            mode,
            beta: Fraction::from_f64(beta).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn oracle_needs_no_corrections() {
        let t = text(1000);
        let oracle = SyntheticPredictor::oracle(t.clone(), 50).unwrap();
        let out = epc_compress(&t, 1000, &oracle, &cfg(0.6, 4, FallbackMode::Full, 1.0)).unwrap();
        assert!(out.residual.as_ref().unwrap().corrections.is_empty());
        assert_eq!(out.ledger.bits_rank + out.ledger.bits_fallback, 0);
        // 600 zero flags under the adaptive coder: ~log2(601) bits plus the state
        assert!(out.ledger.bits_flag <= 8 * 6, "{}", out.ledger.bits_flag);
        assert_eq!(epc_decompress(&out.payload, &oracle).unwrap().tokens, t);
    }

    #[test]
    fn full_mode_is_lossless_with_a_useless_model() {
        let t = text(700);
        let uniform = UniformPredictor::new(50);
        let out = epc_compress(&t, 700, &uniform, &cfg(0.8, 4, FallbackMode::Full, 0.0)).unwrap();
        let dec = epc_decompress(&read_payload(&write_payload(&out.payload)).unwrap(), &uniform).unwrap();
        assert_eq!(dec.tokens, t);
        assert_eq!(dec.error_bound, 0.0);
    }

    #[test]
    fn error_bound_counts_skips() {
        // 37 of 500 masked positions ranked beyond K, mode off
        let n = 1000;
        let t = text(n);
        // flat surprisal masks the first half of every window; a loose run
        // cap keeps all of them
        let pm = PmConfig {
            max_run: 40,
            ..PmConfig::default().with_p_mask(Fraction::new(1, 2).unwrap())
        };
        let flat = SyntheticPredictor::oracle(t.clone(), 50).unwrap().with_constant_surprisal(1.0);
        let mask = select_mask_for(&t, &flat, &pm);
        assert_eq!(mask.masked_count(), 500);
        let mut ranks = vec![1u32; n];
        for &i in mask.masked().iter().step_by(13).take(37) {
            ranks[i] = 20;
        }
        let p = SyntheticPredictor::new(t.clone(), ranks, 50).unwrap().with_constant_surprisal(1.0);
        let c = EpcConfig {
            pm,
            ..cfg(0.5, 4, FallbackMode::Off, 0.0)
        };
        let out = epc_compress(&t, n as u64, &p, &c).unwrap();
        let res = out.residual.unwrap();
        assert_eq!(epc_error_bound(&res, 500), 0.074);
        let dec = epc_decompress(&out.payload, &p).unwrap();
        assert_eq!(dec.error_bound, 0.074);
        let wrong = mask.masked().iter().filter(|&&i| dec.tokens[i] != t[i]).count();
        assert!(wrong as f64 / 500.0 <= dec.error_bound);
    }

    fn select_mask_for(t: &[u32], p: &dyn Predictor, pm: &PmConfig) -> MaskSet {
        crate::codec::select_mask(&p.surprisal(t).unwrap(), pm).unwrap()
    }

    #[test]
    fn no_overrides_matches_single_shot_pm() {
        let m = BuiltinModel::new(50, 1, 1.0).unwrap();
        let t = text(400);
        let out = epc_compress(&t, 400, &m, &cfg(0.4, 4, FallbackMode::Off, 0.0)).unwrap();
        let mut forced = out.payload.clone();
        let masked = out.mask.masked_count();
        // same payload with every flag cleared
        let none = ResidualStreams {
            flags: vec![false; masked],
            corrections: vec![],
        };
        let enc = residual::encode(&none, alphabet(4), 50).unwrap();
        forced.streams.flags = enc.flags;
        forced.streams.ranks = enc.ranks;
        forced.streams.fallback = enc.fallback;
        let dec = epc_decompress(&forced, &m).unwrap();
        let holes = out.mask.masked();
        let single = infill(&blind_query(&t, holes), holes, &m, holes.len()).unwrap();
        assert_eq!(dec.tokens, single);
    }

    #[test]
    fn zero_budget_equals_mode_off() {
        let m = BuiltinModel::new(50, 1, 1.0).unwrap();
        let t = text(500);
        let a = epc_compress(&t, 500, &m, &cfg(0.6, 4, FallbackMode::Off, 0.0)).unwrap();
        let b = epc_compress(&t, 500, &m, &cfg(0.6, 4, FallbackMode::Budget, 0.0)).unwrap();
        assert_eq!(a.residual, b.residual);
        assert_eq!(a.payload.streams, b.payload.streams);
        assert_eq!(
            epc_decompress(&a.payload, &m).unwrap().tokens,
            epc_decompress(&b.payload, &m).unwrap().tokens
        );
    }

    #[test]
    fn k_above_list_length_is_a_config_error() {
        let m = BuiltinModel::new(50, 0, 1.0).unwrap();
        let mut c = cfg(0.5, 100, FallbackMode::Off, 0.0);
        c.top_k = Some(64);
        assert!(matches!(epc_compress(&text(10), 10, &m, &c), Err(Error::Config(_))));
        c.k = 1;
        assert!(matches!(epc_compress(&text(10), 10, &m, &c), Err(Error::Config(_))));
    }

    #[test]
    fn refinement_is_bit_neutral_and_respects_locks() {
        let m = BuiltinModel::new(50, 1, 1.0).unwrap();
        let t = text(800);
        let mut c = cfg(0.7, 4, FallbackMode::Off, 0.0);
        c.refine_iters = 0;
        let plain = epc_compress(&t, 800, &m, &c).unwrap();
        c.refine_iters = 3;
        let refined = epc_compress(&t, 800, &m, &c).unwrap();
        assert_eq!(write_payload(&plain.payload).len(), write_payload(&refined.payload).len());
        let dec = epc_decompress(&refined.payload, &m).unwrap();
        let skips: Vec<usize> = dec
            .mask
            .masked()
            .iter()
            .zip(&dec.residual.flags)
            .filter(|(_, &f)| f)
            .map(|(&i, _)| i)
            .zip(&dec.residual.corrections)
            .filter(|(_, c)| **c == Correction::Skip)
            .map(|(i, _)| i)
            .collect();
        for i in 0..t.len() {
            if !skips.contains(&i) {
                assert_eq!(dec.tokens[i], dec.unrefined[i], "position {i} moved");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn overrides_are_exact_and_ranks_symmetric(
            seed in any::<u64>(),
            n in 1usize..600,
            p in 0u32..95,
            k in prop::sample::select(vec![2u32, 4, 16, 64]),
            mode in 0u64..3,
            beta in 0u32..=4,
        ) {
            let t: Vec<u32> = (0..n).map(|i| ((i as u64 * 2654435761 ^ seed) % 97) as u32).collect();
            let pred = SyntheticPredictor::with_accuracy(t.clone(), 97, 0.7, 0.2, seed).unwrap();
            let c = EpcConfig {
                pm: PmConfig::default().with_p_mask(Fraction::new(p, 100).unwrap()),
                k,
                mode: FallbackMode::from_id(mode).unwrap(),
                beta: Fraction::new(beta, 4).unwrap(),
                ..Default::default()
            };
            let out = epc_compress(&t, n as u64, &pred, &c).unwrap();
            let bytes = write_payload(&out.payload);
            prop_assert_eq!(out.ledger.payload_bits(), 8 * bytes.len() as u64);
            let dec = epc_decompress(&read_payload(&bytes).unwrap(), &pred).unwrap();
            prop_assert_eq!(Some(&dec.residual), out.residual.as_ref());
            let masked = out.mask.masked();
            let mut wrong = 0;
            for (j, &i) in masked.iter().enumerate() {
                let skip = dec.residual.flagged().any(|(f, c)| f == j && c == Correction::Skip);
                if !skip {
                    prop_assert_eq!(dec.tokens[i], t[i]);
                } else if dec.tokens[i] != t[i] {
                    wrong += 1;
                }
            }
            for i in out.mask.kept() {
                prop_assert_eq!(dec.tokens[i], t[i]);
            }
            prop_assert!(wrong as f64 <= dec.error_bound * masked.len() as f64 + 1e-9);
            if c.mode == FallbackMode::Full {
                prop_assert_eq!(&dec.tokens, &t);
            }
        }
    }
}
