//! Kept-versus-masked position coding.
//!
//! Every position stream is bit-packed MSB-first as
//! `[coder tag: 1 bit][varint N][varint k][body]` where tag 0 is the
//! enumerative coder and tag 1 the run-length coder.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Masked index set over `0..n`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskSet {
    n: usize,
    masked: Vec<usize>,
}

impl MaskSet {
    pub fn new(n: usize, mut masked: Vec<usize>) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        if masked.last().is_some_and(|&i| i >= n) {
            return Err(Error::Input(format!("masked index beyond sequence of {n}")));
        }
        Ok(Self { n, masked })
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        Self {
            n: flags.len(),
            masked: flags
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect(),
        }
    }

    pub fn empty(n: usize) -> Self {
        Self { n, masked: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn masked_count(&self) -> usize {
        self.masked.len()
    }

    pub fn kept(&self) -> Vec<usize> {
        let flags = self.flags();
        (0..self.n).filter(|&i| !flags[i]).collect()
    }

    pub fn flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n];
        for &i in &self.masked {
            flags[i] = true;
        }
        flags
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionCoder {
    Enumerative,
    RunLength,
}

/// A position stream before byte padding.
#[derive(Debug, Clone)]
pub struct PositionCode {
    pub bits: BitWriter,
    pub coder: PositionCoder,
}

impl PositionCode {
    pub fn bit_len(&self) -> u64 {
        self.bits.bit_len()
    }
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Exact size of the enumerative body: `ceil(log2 C(n, k))`.
pub fn enumerative_body_bits(n: u64, k: u64) -> u64 {
    let count = binomial(n, k);
    if count <= BigUint::one() {
        0
    } else {
        (count - 1u32).bits()
    }
}

/// Colex rank of the mask among all masks with the same length and weight.
pub fn mask_rank(flags: &[bool]) -> BigUint {
    let mut rank = BigUint::zero();
    // binom == C(p, ones + 1)
    let mut binom = BigUint::zero();
    let mut ones = 0u64;
    for (p, &bit) in flags.iter().enumerate() {
        let p = p as u64;
        if bit {
            rank += &binom;
            ones += 1;
            binom = if p < ones + 1 {
                BigUint::zero()
            } else {
                binom * (p - ones) / (ones + 1)
            };
        }
        binom = if p + 1 < ones + 1 {
            BigUint::zero()
        } else if p + 1 == ones + 1 {
            BigUint::one()
        } else {
            binom * (p + 1) / (p - ones)
        };
    }
    rank
}

pub fn mask_unrank(n: u64, k: u64, mut rank: BigUint) -> Result<Vec<bool>> {
    if k > n {
        return Err(Error::Format(format!("{k} masked of {n} positions")));
    }
    let mut flags = vec![false; n as usize];
    if k == 0 {
        return if rank.is_zero() {
            Ok(flags)
        } else {
            Err(Error::Format("nonzero rank for empty mask".into()))
        };
    }
    let mut remaining = k;
    let mut p = n - 1;
    // binom == C(p, remaining)
    let mut binom = binomial(p, remaining);
    loop {
        if binom <= rank {
            flags[p as usize] = true;
            rank -= &binom;
            let next = remaining - 1;
            binom = if p < next {
                BigUint::zero()
            } else if p < remaining {
                BigUint::one()
            } else {
                binom * remaining / (p - remaining + 1)
            };
            remaining = next;
            if remaining == 0 {
                break;
            }
        }
        if p == 0 {
            return Err(Error::Format("rank does not describe a mask".into()));
        }
        binom = if p < remaining {
            BigUint::zero()
        } else {
            binom * (p - remaining) / p
        };
        p -= 1;
    }
    if !rank.is_zero() {
        return Err(Error::Format("rank exceeds C(N, k)".into()));
    }
    Ok(flags)
}

pub fn encode_enumerative(mask: &MaskSet) -> PositionCode {
    let (n, k) = (mask.len() as u64, mask.masked_count() as u64);
    let mut bits = BitWriter::new();
    bits.push_varint(n);
    bits.push_varint(k);
    bits.push_biguint(&mask_rank(&mask.flags()), enumerative_body_bits(n, k));
    PositionCode {
        bits,
        coder: PositionCoder::Enumerative,
    }
}

fn decode_enumerative_body(reader: &mut BitReader<'_>, n: u64, k: u64) -> Result<Vec<bool>> {
    let rank = reader.read_biguint(enumerative_body_bits(n, k))?;
    mask_unrank(n, k, rank)
}

/// Alternating run lengths, kept run first. The first run is coded as
/// `gamma(len + 1)` since it may be empty; later runs as `gamma(len)`.
/// Coding stops once the remaining positions are all of one kind.
pub fn encode_rle(mask: &MaskSet) -> PositionCode {
    let flags = mask.flags();
    let (n, k) = (mask.len() as u64, mask.masked_count() as u64);
    let mut bits = BitWriter::new();
    bits.push_varint(n);
    bits.push_varint(k);
    let (mut kept_left, mut masked_left) = (n - k, k);
    let mut pos = 0usize;
    let mut masked_run = false;
    let mut first = true;
    while kept_left > 0 && masked_left > 0 {
        let len = flags[pos..].iter().take_while(|&&f| f == masked_run).count() as u64;
        bits.push_gamma(if first { len + 1 } else { len });
        if masked_run {
            masked_left -= len;
        } else {
            kept_left -= len;
        }
        pos += len as usize;
        masked_run = !masked_run;
        first = false;
    }
    PositionCode {
        bits,
        coder: PositionCoder::RunLength,
    }
}

fn decode_rle_body(reader: &mut BitReader<'_>, n: u64, k: u64) -> Result<Vec<bool>> {
    if k > n {
        return Err(Error::Format(format!("{k} masked of {n} positions")));
    }
    let mut flags = Vec::with_capacity(n as usize);
    let (mut kept_left, mut masked_left) = (n - k, k);
    let mut masked_run = false;
    let mut first = true;
    while kept_left > 0 && masked_left > 0 {
        let code = reader.read_gamma()?;
        let len = if first { code - 1 } else { code };
        let left = if masked_run { &mut masked_left } else { &mut kept_left };
        if len > *left || (!first && len == 0) {
            return Err(Error::Format("run length overflows the mask".into()));
        }
        *left -= len;
        flags.extend(std::iter::repeat_n(masked_run, len as usize));
        masked_run = !masked_run;
        first = false;
    }
    flags.extend(std::iter::repeat_n(masked_left > 0, (kept_left + masked_left) as usize));
    Ok(flags)
}

/// Runs both coders and keeps the shorter, prefixed by a one-bit tag.
pub fn encode_min(mask: &MaskSet) -> PositionCode {
    let enumerative = encode_enumerative(mask);
    let rle = encode_rle(mask);
    let (tag, chosen) = if rle.bit_len() < enumerative.bit_len() {
        (true, rle)
    } else {
        (false, enumerative)
    };
    let mut bits = BitWriter::new();
    bits.push_bit(tag);
    bits.append(&chosen.bits);
    PositionCode {
        bits,
        coder: chosen.coder,
    }
}

pub fn decode_positions(bytes: &[u8]) -> Result<MaskSet> {
    let mut reader = BitReader::new(bytes);
    let tag = reader.read_bit()?;
    let n = reader.read_varint()?;
    let k = reader.read_varint()?;
    if n > u32::MAX as u64 {
        return Err(Error::Format(format!("position count {n} too large")));
    }
    let flags = if tag {
        decode_rle_body(&mut reader, n, k)?
    } else {
        decode_enumerative_body(&mut reader, n, k)?
    };
    let consumed = reader.position();
    if consumed.div_ceil(8) != bytes.len() as u64 {
        return Err(Error::Format("trailing bytes after position stream".into()));
    }
    Ok(MaskSet::from_flags(&flags))
}

/// Binary entropy in bits.
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }
}
