//! Entropy coding for every payload stream: static-table rANS, adaptive
//! Bernoulli and small-alphabet coders, and the vocabulary-sized adaptive
//! coder with its ideal arithmetic-coding bound.

mod adaptive;
mod rans;
mod table;

pub use adaptive::{
    adaptive_bernoulli_decode, adaptive_bernoulli_encode, adaptive_kway_decode,
    adaptive_kway_encode, adaptive_multi_decode, adaptive_multi_encode, adaptive_vway_decode,
    adaptive_vway_encode, AdaptiveCounts, TokenCoder, TokenCoding, VocabModel,
};
pub use rans::{
    rans_decode, rans_encode, CodedStream, RansDecoder, RansEncoder, RANS_LOWER_BOUND,
    STATE_BYTES,
};
pub use table::{normalize_freqs, FreqTable};

/// Table precision for every coder in this crate.
pub const SCALE_BITS: u32 = 12;
