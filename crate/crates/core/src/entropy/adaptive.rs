//! Adaptive coders. The model evolves forward in coding order; since rANS
//! is LIFO, each encoder records the per-step intervals in a forward pass
//! and feeds them to the rANS encoder in reverse.

use std::collections::HashMap;

use super::rans::{encode_intervals, CodedStream, RansDecoder};
use super::table::{split2, FreqTable};
use super::SCALE_BITS;
use crate::error::{Error, Result};

/// Laplace-smoothed counts over a small alphabet.
#[derive(Debug, Clone)]
pub struct AdaptiveCounts {
    counts: Vec<u64>,
    alpha: u64,
    total: u64,
}

impl AdaptiveCounts {
    pub fn new(alphabet: usize, alpha: u64) -> Self {
        assert!(alpha >= 1, "zero smoothing leaves unseen symbols uncodable");
        Self {
            counts: vec![0; alphabet],
            alpha,
            total: 0,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, symbol: usize) -> u64 {
        self.counts[symbol]
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        (self.counts[symbol] + self.alpha) as f64
            / (self.total + self.alpha * self.counts.len() as u64) as f64
    }

    pub fn table(&self) -> FreqTable {
        let smoothed: Vec<u64> = self.counts.iter().map(|c| c + self.alpha).collect();
        FreqTable::normalize(&smoothed, SCALE_BITS).expect("alphabet checked at construction")
    }

    pub fn update(&mut self, symbol: usize) {
        self.counts[symbol] += 1;
        self.total += 1;
    }
}

fn check_alphabet(alphabet: usize) -> Result<()> {
    if alphabet == 0 || alphabet > 1 << SCALE_BITS {
        return Err(Error::TableOverflow {
            alphabet,
            scale_bits: SCALE_BITS,
        });
    }
    Ok(())
}

pub fn adaptive_bernoulli_encode(bits: &[bool]) -> CodedStream {
    let (mut c0, mut c1) = (1u64, 1u64);
    let mut intervals = Vec::with_capacity(bits.len());
    for &bit in bits {
        let f0 = split2(c0, c1, SCALE_BITS);
        if bit {
            intervals.push((f0, (1 << SCALE_BITS) - f0));
            c1 += 1;
        } else {
            intervals.push((0, f0));
            c0 += 1;
        }
    }
    CodedStream {
        bytes: encode_intervals(&intervals, SCALE_BITS),
        symbol_count: bits.len(),
    }
}

pub fn adaptive_bernoulli_decode(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    let mut dec = RansDecoder::new(bytes)?;
    let (mut c0, mut c1) = (1u64, 1u64);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let f0 = split2(c0, c1, SCALE_BITS);
        let bit = dec.peek(SCALE_BITS) >= f0;
        if bit {
            dec.advance(f0, (1 << SCALE_BITS) - f0, SCALE_BITS)?;
            c1 += 1;
        } else {
            dec.advance(0, f0, SCALE_BITS)?;
            c0 += 1;
        }
        out.push(bit);
    }
    dec.finish()?;
    Ok(out)
}

/// Adaptive Laplace-1 coding over `{0..alphabet}`.
pub fn adaptive_multi_encode(symbols: &[usize], alphabet: usize) -> Result<CodedStream> {
    check_alphabet(alphabet)?;
    let mut model = AdaptiveCounts::new(alphabet, 1);
    let mut intervals = Vec::with_capacity(symbols.len());
    for &s in symbols {
        if s >= alphabet {
            return Err(Error::SymbolOutOfRange {
                symbol: s as u64,
                alphabet: alphabet as u64,
            });
        }
        intervals.push(model.table().interval(s)?);
        model.update(s);
    }
    Ok(CodedStream {
        bytes: encode_intervals(&intervals, SCALE_BITS),
        symbol_count: symbols.len(),
    })
}

pub fn adaptive_multi_decode(bytes: &[u8], alphabet: usize, n: usize) -> Result<Vec<usize>> {
    check_alphabet(alphabet)?;
    let mut model = AdaptiveCounts::new(alphabet, 1);
    let mut dec = RansDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = dec.decode(&model.table())?;
        model.update(s);
        out.push(s);
    }
    dec.finish()?;
    Ok(out)
}

/// Codes rank values `2..=k` with an adaptive model over `k - 1` symbols.
pub fn adaptive_kway_encode(ranks: &[u32], k: u32) -> Result<CodedStream> {
    if k < 2 {
        return Err(Error::Config(format!("rank threshold {k} < 2")));
    }
    let symbols = ranks
        .iter()
        .map(|&r| {
            if (2..=k).contains(&r) {
                Ok((r - 2) as usize)
            } else {
                Err(Error::SymbolOutOfRange {
                    symbol: r as u64,
                    alphabet: k as u64,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    adaptive_multi_encode(&symbols, (k - 1) as usize)
}

pub fn adaptive_kway_decode(bytes: &[u8], k: u32, n: usize) -> Result<Vec<u32>> {
    if k < 2 {
        return Err(Error::Config(format!("rank threshold {k} < 2")));
    }
    Ok(adaptive_multi_decode(bytes, (k - 1) as usize, n)?
        .into_iter()
        .map(|s| s as u32 + 2)
        .collect())
}

const DENSE_NODE_LIMIT: usize = 1 << 13;

#[derive(Debug, Clone)]
enum NodeCounts {
    Dense(Vec<u64>),
    Sparse(HashMap<usize, u64>),
}

impl NodeCounts {
    fn get(&self, node: usize) -> u64 {
        match self {
            NodeCounts::Dense(v) => v[node],
            NodeCounts::Sparse(m) => m.get(&node).copied().unwrap_or(0),
        }
    }

    fn bump(&mut self, node: usize) {
        match self {
            NodeCounts::Dense(v) => v[node] += 1,
            NodeCounts::Sparse(m) => *m.entry(node).or_insert(0) += 1,
        }
    }
}

/// Adaptive unigram over a vocabulary of arbitrary size, coded as a path of
/// binary decisions. Each decision is a two-symbol alphabet whose masses
/// merge the smoothed counts of the symbols on either side, so the product
/// along the path is `(c_s + alpha) / (C + alpha * V)` before quantization.
#[derive(Debug, Clone)]
pub struct VocabModel {
    vocab: u32,
    depth: u32,
    alpha: u64,
    total: u64,
    nodes: NodeCounts,
}

impl VocabModel {
    pub fn new(vocab: u32, alpha: u64) -> Self {
        assert!(vocab >= 1 && alpha >= 1);
        let depth = if vocab <= 1 {
            0
        } else {
            32 - (vocab - 1).leading_zeros()
        };
        let node_count = 2usize << depth;
        let nodes = if node_count <= DENSE_NODE_LIMIT {
            NodeCounts::Dense(vec![0; node_count])
        } else {
            NodeCounts::Sparse(HashMap::new())
        };
        Self {
            vocab,
            depth,
            alpha,
            total: 0,
            nodes,
        }
    }

    fn mass(&self, node: usize, lo: u64, width: u64) -> u64 {
        let real = (lo + width).min(self.vocab as u64).saturating_sub(lo);
        self.nodes.get(node) + self.alpha * real
    }

    pub fn count(&self, symbol: u32) -> u64 {
        self.nodes.get((1usize << self.depth) + symbol as usize)
    }

    pub fn probability(&self, symbol: u32) -> f64 {
        (self.count(symbol) + self.alpha) as f64
            / (self.total + self.alpha * self.vocab as u64) as f64
    }

    pub fn ideal_bits(&self, symbol: u32) -> f64 {
        -self.probability(symbol).log2()
    }

    /// Appends the binary-decision intervals that code `symbol`.
    fn intervals(&self, symbol: u32, out: &mut Vec<(u32, u32)>) {
        let mut node = 1usize;
        let mut lo = 0u64;
        for level in (0..self.depth).rev() {
            let half = 1u64 << level;
            let left = self.mass(2 * node, lo, half);
            let right = self.mass(2 * node + 1, lo + half, half);
            let go_right = (symbol as u64 >> level) & 1 == 1;
            if right > 0 {
                let f0 = split2(left, right, SCALE_BITS);
                out.push(if go_right {
                    (f0, (1 << SCALE_BITS) - f0)
                } else {
                    (0, f0)
                });
            }
            node = 2 * node + go_right as usize;
            if go_right {
                lo += half;
            }
        }
    }

    fn decode(&self, dec: &mut RansDecoder<'_>) -> Result<u32> {
        let mut node = 1usize;
        let mut lo = 0u64;
        for level in (0..self.depth).rev() {
            let half = 1u64 << level;
            let left = self.mass(2 * node, lo, half);
            let right = self.mass(2 * node + 1, lo + half, half);
            let mut go_right = false;
            if right > 0 {
                let f0 = split2(left, right, SCALE_BITS);
                go_right = dec.peek(SCALE_BITS) >= f0;
                if go_right {
                    dec.advance(f0, (1 << SCALE_BITS) - f0, SCALE_BITS)?;
                } else {
                    dec.advance(0, f0, SCALE_BITS)?;
                }
            }
            node = 2 * node + go_right as usize;
            if go_right {
                lo += half;
            }
        }
        Ok(lo as u32)
    }

    pub fn update(&mut self, symbol: u32) {
        let mut node = (1usize << self.depth) + symbol as usize;
        while node >= 1 {
            self.nodes.bump(node);
            node /= 2;
        }
        self.total += 1;
    }
}

/// Kept-token / fallback-token coder: order 0 is a single adaptive
/// unigram; order 1 keeps one unigram per previous symbol.
#[derive(Debug, Clone)]
pub struct TokenCoder {
    vocab: u32,
    order: u8,
    alpha: u64,
    contexts: HashMap<Option<u32>, VocabModel>,
    prev: Option<u32>,
}

impl TokenCoder {
    pub fn new(vocab: u32, order: u8) -> Result<Self> {
        if order > 1 {
            return Err(Error::Config(format!("token coder order {order} > 1")));
        }
        if vocab == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        Ok(Self {
            vocab,
            order,
            alpha: 1,
            contexts: HashMap::new(),
            prev: None,
        })
    }

    fn model(&mut self) -> &mut VocabModel {
        let key = if self.order == 0 { None } else { self.prev };
        let (vocab, alpha) = (self.vocab, self.alpha);
        self.contexts
            .entry(key)
            .or_insert_with(|| VocabModel::new(vocab, alpha))
    }

    fn check(&self, symbol: u32) -> Result<()> {
        if symbol >= self.vocab {
            return Err(Error::SymbolOutOfRange {
                symbol: symbol as u64,
                alphabet: self.vocab as u64,
            });
        }
        Ok(())
    }

    pub fn encode(mut self, symbols: &[u32]) -> Result<TokenCoding> {
        let mut intervals = Vec::new();
        let mut ideal_bits = 0.0;
        for &s in symbols {
            self.check(s)?;
            let model = self.model();
            ideal_bits += model.ideal_bits(s);
            model.intervals(s, &mut intervals);
            model.update(s);
            self.prev = Some(s);
        }
        Ok(TokenCoding {
            stream: CodedStream {
                bytes: encode_intervals(&intervals, SCALE_BITS),
                symbol_count: symbols.len(),
            },
            ideal_bits,
        })
    }

    pub fn decode(mut self, bytes: &[u8], n: usize) -> Result<Vec<u32>> {
        let mut dec = RansDecoder::new(bytes)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let model = self.model();
            let s = model.decode(&mut dec)?;
            model.update(s);
            self.prev = Some(s);
            out.push(s);
        }
        dec.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TokenCoding {
    pub stream: CodedStream,
    pub ideal_bits: f64,
}

/// Order-0 adaptive vocabulary coder with alpha = 1; returns the realized
/// stream and the ideal adaptive arithmetic bound.
pub fn adaptive_vway_encode(symbols: &[u32], vocab: u32) -> Result<TokenCoding> {
    TokenCoder::new(vocab, 0)?.encode(symbols)
}

pub fn adaptive_vway_decode(bytes: &[u8], vocab: u32, n: usize) -> Result<Vec<u32>> {
    TokenCoder::new(vocab, 0)?.decode(bytes, n)
}
