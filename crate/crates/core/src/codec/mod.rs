//! Predictive codecs built on the shared container.

mod epc;
mod patch;
mod pm;
pub mod residual;

pub use epc::{epc_compress, epc_decompress, epc_error_bound, EpcConfig, EpcDecoded};
pub use patch::{apply_patch, make_patch, PatchConfig, Patched};
pub use pm::{pm_compress, pm_decompress, select_mask, PmConfig};
pub use residual::{Correction, ResidualStreams};

use crate::entropy::{CodedStream, TokenCoder, SCALE_BITS};
use crate::error::{Error, Result};
use crate::metrics::CostLedger;
use crate::payload::{CodecId, Payload};
use crate::positions::{decode_positions, encode_min, MaskSet};
use crate::predictor::{PredictiveDistribution, Predictor};

/// Requested list length when the caller does not pin one.
pub const DEFAULT_TOP_K: u32 = 64;

/// Output of any compressor.
#[derive(Debug, Clone)]
pub struct Compressed {
    pub payload: Payload,
    pub ledger: CostLedger,
    /// Masked set (PM/EPC) or mismatch set (patch).
    pub mask: MaskSet,
    /// Residual corrections, absent for PM.
    pub residual: Option<ResidualStreams>,
}

/// A stream with no symbols is stored as zero bytes, not a bare flushed state.
pub(crate) fn pack(stream: CodedStream) -> Vec<u8> {
    if stream.symbol_count == 0 {
        Vec::new()
    } else {
        stream.bytes
    }
}

pub(crate) fn check_empty(bytes: &[u8], what: &str) -> Result<()> {
    if bytes.is_empty() {
        Ok(())
    } else {
        Err(Error::Integrity(format!("{what} stream should be empty, has {} bytes", bytes.len())))
    }
}

pub(crate) fn check_tokens(tokens: &[u32], vocab: u32) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Input(format!("token {t} outside predictor vocabulary {vocab}")));
    }
    Ok(())
}

/// Header fields every decoder checks before touching a stream.
pub(crate) fn check_header(payload: &Payload, codec: CodecId, predictor: &dyn Predictor) -> Result<usize> {
    let h = &payload.header;
    if h.codec != codec {
        return Err(Error::Format(format!(
            "payload holds {} data, expected {}",
            h.codec.name(),
            codec.name()
        )));
    }
    if h.scale_bits != SCALE_BITS {
        return Err(Error::Format(format!("coder scale {} unsupported", h.scale_bits)));
    }
    if h.vocab != predictor.vocab_size() {
        return Err(Error::Integrity(format!(
            "payload vocabulary {} but predictor has {}",
            h.vocab,
            predictor.vocab_size()
        )));
    }
    usize::try_from(h.tokens).map_err(|_| Error::Format("token count too large".into()))
}

pub(crate) struct KeptChannel {
    pub positions: Vec<u8>,
    pub kept: Vec<u8>,
    pub ideal_bits: f64,
}

pub(crate) fn encode_kept_channel(tokens: &[u32], mask: &MaskSet, vocab: u32, order: u8) -> Result<KeptChannel> {
    let positions = encode_min(mask).bits.into_bytes();
    let kept: Vec<u32> = mask.kept().into_iter().map(|i| tokens[i]).collect();
    let coding = TokenCoder::new(vocab, order)?.encode(&kept)?;
    Ok(KeptChannel {
        positions,
        kept: pack(coding.stream),
        ideal_bits: coding.ideal_bits,
    })
}

/// Rebuilds the mask and the sequence with stored tokens in place and
/// zeros in the holes.
pub(crate) fn decode_kept_channel(payload: &Payload, n: usize) -> Result<(MaskSet, Vec<u32>)> {
    let mask = decode_positions(&payload.streams.positions)?;
    if mask.len() != n {
        return Err(Error::Integrity(format!(
            "position stream covers {} tokens, header says {n}",
            mask.len()
        )));
    }
    let kept_idx = mask.kept();
    let kept = if kept_idx.is_empty() {
        check_empty(&payload.streams.kept, "kept-token")?;
        Vec::new()
    } else {
        TokenCoder::new(payload.header.vocab, payload.header.aux_order)?
            .decode(&payload.streams.kept, kept_idx.len())?
    };
    let mut tokens = vec![0u32; n];
    for (i, t) in kept_idx.into_iter().zip(kept) {
        tokens[i] = t;
    }
    Ok((mask, tokens))
}

/// `predict` with the shape of the answer checked against the request.
pub(crate) fn checked_predict(
    predictor: &dyn Predictor,
    tokens: &[u32],
    positions: &[usize],
    top_k: usize,
    leave_one_out: bool,
) -> Result<Vec<PredictiveDistribution>> {
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let dists = if leave_one_out {
        predictor.predict_leave_one_out(tokens, positions, top_k)?
    } else {
        predictor.predict(tokens, positions, top_k)?
    };
    if dists.len() != positions.len() {
        return Err(Error::predictor(format!(
            "asked for {} distributions, got {}",
            positions.len(),
            dists.len()
        )));
    }
    for (d, &i) in dists.iter().zip(positions) {
        if d.position != i {
            return Err(Error::predictor_at(i, format!("answer is for position {}", d.position)));
        }
        if d.top.is_empty() {
            return Err(Error::predictor_at(i, "empty ranked list"));
        }
    }
    Ok(dists)
}
