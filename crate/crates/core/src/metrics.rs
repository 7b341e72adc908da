//! Rate and distortion measurements.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::container::write_payload;
use crate::payload::Payload;

/// Per-stream bit accounting for one payload.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub bits_pos: u64,
    pub bits_tok: u64,
    pub bits_flag: u64,
    pub bits_rank: u64,
    pub bits_fallback: u64,
    /// Magic, header, stream lengths and checksum.
    pub bits_container: u64,
    pub ideal_tok: Option<f64>,
    pub ideal_fallback: Option<f64>,
    pub static_bits: u64,
    pub n_copies: u64,
}

impl CostLedger {
    pub fn for_payload(payload: &Payload) -> Self {
        let total = 8 * write_payload(payload).len() as u64;
        let s = &payload.streams;
        let bits = |v: &Vec<u8>| 8 * v.len() as u64;
        let streams = s.total_bytes() as u64 * 8;
        Self {
            bits_pos: bits(&s.positions),
            bits_tok: bits(&s.kept),
            bits_flag: bits(&s.flags),
            bits_rank: bits(&s.ranks),
            bits_fallback: bits(&s.fallback),
            bits_container: total - streams,
            ideal_tok: None,
            ideal_fallback: None,
            static_bits: 0,
            n_copies: 1,
        }
    }

    pub fn with_static(mut self, static_bits: u64, n_copies: u64) -> Self {
        self.static_bits = static_bits;
        self.n_copies = n_copies.max(1);
        self
    }

    pub fn stream_bits(&self) -> u64 {
        self.bits_pos + self.bits_tok + self.bits_flag + self.bits_rank + self.bits_fallback
    }

    pub fn payload_bits(&self) -> u64 {
        self.stream_bits() + self.bits_container
    }
}

pub fn bpc(ledger: &CostLedger, char_count: u64) -> f64 {
    ledger.payload_bits() as f64 / char_count.max(1) as f64
}

pub fn amortised_bpc(ledger: &CostLedger, char_count: u64) -> f64 {
    let per_copy = ledger.static_bits as f64 / ledger.n_copies.max(1) as f64;
    (ledger.payload_bits() as f64 + per_copy) / char_count.max(1) as f64
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `1 - edit_distance / max(|a|, |b|, 1)`, lengths in characters.
pub fn char_fidelity(original: &str, decoded: &str) -> f64 {
    let longest = original.chars().count().max(decoded.chars().count()).max(1);
    1.0 - levenshtein(original, decoded) as f64 / longest as f64
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for g in chars.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score, whitespace included. Precision and recall are
/// averaged over the orders `1..=n_max` that occur on both sides.
pub fn chrf(original: &str, decoded: &str, n_max: usize, beta: f64) -> f64 {
    let reference: Vec<char> = original.chars().collect();
    let hypothesis: Vec<char> = decoded.chars().collect();
    if reference.is_empty() && hypothesis.is_empty() {
        return 1.0;
    }
    let (mut precision, mut recall, mut orders) = (0.0, 0.0, 0);
    for n in 1..=n_max {
        let r = char_ngrams(&reference, n);
        let h = char_ngrams(&hypothesis, n);
        let (r_total, h_total): (usize, usize) = (r.values().sum(), h.values().sum());
        if r_total == 0 || h_total == 0 {
            continue;
        }
        let matched: usize = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        precision += matched as f64 / h_total as f64;
        recall += matched as f64 / r_total as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let (p, r) = (precision / orders as f64, recall / orders as f64);
    if p + r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (b2 * p + r)
}
