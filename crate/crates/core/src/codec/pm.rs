//! Predictive Masking: drop the most predictable tokens, store the rest.

use crate::entropy::SCALE_BITS;
use crate::error::{Error, Result};
use crate::metrics::CostLedger;
use crate::payload::{CodecId, FallbackMode, Fraction, PatchContext, Payload, PayloadHeader, Streams};
use crate::positions::MaskSet;
use crate::predictor::Predictor;
use crate::recon::infill;

use super::{check_empty, check_header, check_tokens, decode_kept_channel, encode_kept_channel, Compressed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PmConfig {
    pub p_mask: Fraction,
    pub window: u32,
    pub max_run: u32,
    /// Context order of the kept-token coder, 0 or 1.
    pub aux_order: u8,
    /// Holes fixed per predictor call when decoding.
    pub infill_chunk: u32,
}

impl Default for PmConfig {
    fn default() -> Self {
        Self {
            p_mask: Fraction::new(1, 2).expect("valid"),
            window: 64,
            max_run: 16,
            aux_order: 0,
            infill_chunk: 8,
        }
    }
}

impl PmConfig {
    pub fn with_p_mask(mut self, p_mask: Fraction) -> Self {
        self.p_mask = p_mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_mask.num() >= self.p_mask.den() {
            return Err(Error::Config("p_mask must be below 1".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        if self.max_run < 1 || self.max_run >= self.window {
            return Err(Error::Config(format!(
                "max_run {} must lie in [1, window)",
                self.max_run
            )));
        }
        if self.aux_order > 1 {
            return Err(Error::Config("aux coder order must be 0 or 1".into()));
        }
        if self.infill_chunk == 0 {
            return Err(Error::Config("infill chunk must be at least 1".into()));
        }
        Ok(())
    }
}

/// Masks the `floor(p_mask * |W|)` lowest-surprisal positions of each
/// window, then breaks runs longer than `max_run` by unmasking their
/// highest-surprisal member (latest index on ties).
pub fn select_mask(s: &[f64], cfg: &PmConfig) -> Result<MaskSet> {
    cfg.validate()?;
    if let Some(i) = s.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::predictor_at(i, format!("surprisal {} is not a finite non-negative number", s[i])));
    }
    let n = s.len();
    let mut flags = vec![false; n];
    let window = cfg.window as usize;
    for start in (0..n).step_by(window) {
        let end = (start + window).min(n);
        let mut idx: Vec<usize> = (start..end).collect();
        idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
        for &i in idx.iter().take(cfg.p_mask.floor_mul(end - start)) {
            flags[i] = true;
        }
    }

    let max_run = cfg.max_run as usize;
    let mut run_start: Option<usize> = None;
    for j in 0..n {
        if !flags[j] {
            run_start = None;
            continue;
        }
        let start = *run_start.get_or_insert(j);
        if j - start + 1 > max_run {
            let victim = (start..=j)
                .max_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)))
                .expect("non-empty run");
            flags[victim] = false;
            run_start = (victim < j).then_some(victim + 1);
        }
    }
    Ok(MaskSet::from_flags(&flags))
}

pub(crate) fn masked_header(codec: CodecId, cfg: &PmConfig, vocab: u32, tokens: usize, chars: u64) -> PayloadHeader {
    PayloadHeader {
        codec,
        p_mask: cfg.p_mask,
        window: cfg.window,
        max_run: cfg.max_run,
        k: 0,
        mode: FallbackMode::Off,
        beta: Fraction::ZERO,
        vocab,
        tokens: tokens as u64,
        chars,
        aux_order: cfg.aux_order,
        scale_bits: SCALE_BITS,
        top_k: 0,
        refine_iters: 0,
        infill_chunk: cfg.infill_chunk,
        patch_context: PatchContext::MaskMismatches,
    }
}

/// Surprisal, mask selection and the kept channel, shared with EPC.
pub(crate) fn mask_and_keep(
    tokens: &[u32],
    predictor: &dyn Predictor,
    cfg: &PmConfig,
) -> Result<(MaskSet, super::KeptChannel)> {
    cfg.validate()?;
    let vocab = predictor.vocab_size();
    check_tokens(tokens, vocab)?;
    let s = predictor.surprisal(tokens)?;
    if s.len() != tokens.len() {
        return Err(Error::predictor(format!(
            "{} surprisal values for {} tokens",
            s.len(),
            tokens.len()
        )));
    }
    let mask = select_mask(&s, cfg)?;
    let channel = encode_kept_channel(tokens, &mask, vocab, cfg.aux_order)?;
    Ok((mask, channel))
}

pub fn pm_compress(tokens: &[u32], chars: u64, predictor: &dyn Predictor, cfg: &PmConfig) -> Result<Compressed> {
    let (mask, channel) = mask_and_keep(tokens, predictor, cfg)?;
    let payload = Payload {
        header: masked_header(CodecId::Pm, cfg, predictor.vocab_size(), tokens.len(), chars),
        streams: Streams {
            positions: channel.positions,
            kept: channel.kept,
            ..Default::default()
        },
    };
    let mut ledger = CostLedger::for_payload(&payload);
    ledger.ideal_tok = Some(channel.ideal_bits);
    Ok(Compressed {
        payload,
        ledger,
        mask,
        residual: None,
    })
}

pub fn pm_decompress(payload: &Payload, predictor: &dyn Predictor) -> Result<Vec<u32>> {
    let n = check_header(payload, CodecId::Pm, predictor)?;
    for (bytes, what) in [
        (&payload.streams.flags, "flag"),
        (&payload.streams.ranks, "rank"),
        (&payload.streams.fallback, "fallback"),
    ] {
        check_empty(bytes, what)?;
    }
    if payload.header.infill_chunk == 0 {
        return Err(Error::Format("infill chunk of 0".into()));
    }
    let (mask, tokens) = decode_kept_channel(payload, n)?;
    infill(&tokens, mask.masked(), predictor, payload.header.infill_chunk as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{read_payload, write_payload};
    use crate::predictor::{BuiltinModel, SyntheticPredictor, UniformPredictor};
    use proptest::prelude::*;

    fn cfg(p: f64, window: u32, max_run: u32) -> PmConfig {
        PmConfig {
            p_mask: Fraction::from_f64(p).unwrap(),
            window,
            max_run,
            ..Default::default()
        }
    }

    #[test]
    fn selection_examples() {
        let m = select_mask(&[1.0, 5.0, 2.0, 9.0], &cfg(0.5, 4, 3)).unwrap();
        assert_eq!(m.masked(), &[0, 2]);
        assert!(select_mask(&[1.0; 10], &cfg(0.0, 4, 3)).unwrap().masked().is_empty());
        let m = select_mask(&[3.0; 10], &cfg(0.5, 4, 3)).unwrap();
        assert_eq!(m.masked(), &[0, 1, 4, 5, 8]);
    }

    #[test]
    fn run_repair_unmasks_the_worst_member() {
        // one window, 6 of 8 masked in a single run; cap 3
        let s = [0.1, 0.2, 0.9, 0.3, 0.4, 0.5, 7.0, 8.0];
        let m = select_mask(&s, &cfg(0.75, 8, 3)).unwrap();
        // run 0..=3 breaks at 2 (0.9), then 3..=5 is fine
        assert_eq!(m.masked(), &[0, 1, 3, 4, 5]);
        // equal surprisal: the latest index of the overlong run goes
        let m = select_mask(&[1.0; 8], &cfg(0.75, 8, 2)).unwrap();
        assert_eq!(m.masked(), &[0, 1, 3, 4]);
    }

    #[test]
    fn rejects_bad_config_and_surprisal() {
        assert!(select_mask(&[1.0], &cfg(1.0, 4, 2)).is_err());
        assert!(select_mask(&[1.0], &cfg(0.5, 1, 1)).is_err());
        assert!(select_mask(&[1.0], &cfg(0.5, 4, 4)).is_err());
        assert!(select_mask(&[f64::NAN], &cfg(0.5, 4, 2)).is_err());
        assert!(select_mask(&[-1.0], &cfg(0.5, 4, 2)).is_err());
    }

    #[test]
    fn zero_masking_is_lossless() {
        let m = BuiltinModel::new(256, 1, 1.0).unwrap();
        let tokens: Vec<u32> = b"the quick brown fox".iter().map(|&b| b as u32).collect();
        let out = pm_compress(&tokens, 19, &m, &cfg(0.0, 64, 16)).unwrap();
        assert_eq!(out.ledger.bits_pos, 8 * out.payload.streams.positions.len() as u64);
        assert_eq!(pm_decompress(&out.payload, &m).unwrap(), tokens);
    }

    #[test]
    fn periodic_kept_stream_costs_one_bit_per_symbol() {
        let tokens: Vec<u32> = (0..600).map(|i| i % 2).collect();
        let m = BuiltinModel::new(2, 0, 1.0).unwrap();
        let out = pm_compress(&tokens, 600, &m, &cfg(0.5, 64, 16)).unwrap();
        let kept = out.mask.len() - out.mask.masked_count();
        // net of the fixed 32-bit state flush
        let per = (out.ledger.bits_tok - 32) as f64 / kept as f64;
        assert!((per - 1.0).abs() < 0.05, "{per}");
    }

    #[test]
    fn oracle_recovers_everything_and_uniform_keeps_stored_tokens() {
        let tokens: Vec<u32> = (0..500).map(|i| (i * 7 % 31) as u32).collect();
        let oracle = SyntheticPredictor::oracle(tokens.clone(), 31).unwrap();
        let out = pm_compress(&tokens, 500, &oracle, &cfg(0.8, 64, 16)).unwrap();
        assert_eq!(pm_decompress(&out.payload, &oracle).unwrap(), tokens);

        let uniform = UniformPredictor::new(31);
        let out = pm_compress(&tokens, 500, &uniform, &cfg(0.6, 64, 16)).unwrap();
        let decoded = pm_decompress(&out.payload, &uniform).unwrap();
        for i in out.mask.kept() {
            assert_eq!(decoded[i], tokens[i]);
        }
    }

    #[test]
    fn decoder_rejects_foreign_payloads() {
        let m = BuiltinModel::new(4, 0, 1.0).unwrap();
        let out = pm_compress(&[0, 1, 2, 3, 0, 1], 6, &m, &PmConfig::default()).unwrap();
        let other = BuiltinModel::new(5, 0, 1.0).unwrap();
        assert!(matches!(pm_decompress(&out.payload, &other), Err(Error::Integrity(_))));
        let mut wrong_n = out.payload.clone();
        wrong_n.header.tokens = 7;
        assert!(matches!(pm_decompress(&wrong_n, &m), Err(Error::Integrity(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn mask_invariants(
            s in prop::collection::vec(0.0f64..20.0, 1..600),
            p in 0u32..100,
            window in 2u32..80,
            run in 1u32..80,
        ) {
            let c = PmConfig {
                p_mask: Fraction::new(p, 100).unwrap(),
                window,
                max_run: run.min(window - 1),
                ..Default::default()
            };
            let flags = select_mask(&s, &c).unwrap().flags();
            let mut run_len = 0;
            for &f in &flags {
                run_len = if f { run_len + 1 } else { 0 };
                prop_assert!(run_len <= c.max_run as usize);
            }
            for w in flags.chunks(window as usize) {
                let masked = w.iter().filter(|&&f| f).count();
                prop_assert!(masked <= c.p_mask.floor_mul(w.len()));
                prop_assert!(masked < w.len());
            }
        }

        #[test]
        fn kept_tokens_survive_and_ledger_adds_up(
            tokens in prop::collection::vec(0u32..6, 1..300),
            p in 0u32..90,
            order in 0u8..2,
        ) {
            let m = BuiltinModel::new(6, order, 1.0).unwrap();
            let c = PmConfig { p_mask: Fraction::new(p, 100).unwrap(), aux_order: order, ..Default::default() };
            let out = pm_compress(&tokens, tokens.len() as u64, &m, &c).unwrap();
            let bytes = write_payload(&out.payload);
            prop_assert_eq!(out.ledger.payload_bits(), 8 * bytes.len() as u64);
            let decoded = pm_decompress(&read_payload(&bytes).unwrap(), &m).unwrap();
            for i in out.mask.kept() {
                prop_assert_eq!(decoded[i], tokens[i]);
            }
        }
    }
}
