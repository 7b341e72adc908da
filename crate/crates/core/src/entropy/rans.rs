//! Byte-renormalized rANS with a 32-bit state.
//!
//! Stream layout: renormalization bytes in the order the encoder emitted
//! them, followed by the final 32-bit state in little-endian. The decoder
//! reads the state from the tail and then consumes bytes backwards.

use super::table::FreqTable;
use crate::error::{Error, Result};

pub const RANS_LOWER_BOUND: u32 = 1 << 23;
pub const STATE_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodedStream {
    pub bytes: Vec<u8>,
    pub symbol_count: usize,
}

impl CodedStream {
    pub fn exact_bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }
}

/// Encoder fed with symbol intervals in reverse coding order.
#[derive(Debug)]
pub struct RansEncoder {
    state: u32,
    out: Vec<u8>,
}

impl Default for RansEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RansEncoder {
    pub fn new() -> Self {
        Self {
            state: RANS_LOWER_BOUND,
            out: Vec::new(),
        }
    }

    pub fn put(&mut self, start: u32, freq: u32, scale_bits: u32) {
        debug_assert!(freq > 0);
        let x_max = ((RANS_LOWER_BOUND >> scale_bits) << 8) * freq;
        let mut x = self.state;
        while x >= x_max {
            self.out.push(x as u8);
            x >>= 8;
        }
        self.state = ((x / freq) << scale_bits) + (x % freq) + start;
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&self.state.to_le_bytes());
        self.out
    }
}

#[derive(Debug)]
pub struct RansDecoder<'a> {
    state: u32,
    bytes: &'a [u8],
    // bytes[..cursor] are still unread
    cursor: usize,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < STATE_BYTES {
            return Err(Error::Decode("stream shorter than the state flush"));
        }
        let cursor = bytes.len() - STATE_BYTES;
        let state = u32::from_le_bytes(bytes[cursor..].try_into().unwrap());
        if state < RANS_LOWER_BOUND {
            return Err(Error::Decode("flushed state below lower bound"));
        }
        Ok(Self {
            state,
            bytes,
            cursor,
        })
    }

    pub fn peek(&self, scale_bits: u32) -> u32 {
        self.state & ((1 << scale_bits) - 1)
    }

    pub fn advance(&mut self, start: u32, freq: u32, scale_bits: u32) -> Result<()> {
        let slot = self.peek(scale_bits);
        self.state = freq * (self.state >> scale_bits) + slot - start;
        while self.state < RANS_LOWER_BOUND {
            if self.cursor == 0 {
                return Err(Error::Decode("state underflow: stream truncated"));
            }
            self.cursor -= 1;
            self.state = (self.state << 8) | self.bytes[self.cursor] as u32;
        }
        Ok(())
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let slot = self.peek(table.scale_bits());
        let symbol = table.lookup(slot);
        let (start, freq) = table.interval(symbol)?;
        self.advance(start, freq, table.scale_bits())?;
        Ok(symbol)
    }

    /// Checks that the stream was consumed exactly.
    pub fn finish(self) -> Result<()> {
        if self.cursor != 0 || self.state != RANS_LOWER_BOUND {
            return Err(Error::Decode("stream not fully consumed"));
        }
        Ok(())
    }
}

/// Encodes `(start, freq)` intervals listed in forward order.
pub(crate) fn encode_intervals(intervals: &[(u32, u32)], scale_bits: u32) -> Vec<u8> {
    let mut enc = RansEncoder::new();
    for &(start, freq) in intervals.iter().rev() {
        enc.put(start, freq, scale_bits);
    }
    enc.finish()
}

pub fn rans_encode(symbols: &[usize], table: &FreqTable) -> Result<CodedStream> {
    let intervals = symbols
        .iter()
        .map(|&s| table.interval(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(CodedStream {
        bytes: encode_intervals(&intervals, table.scale_bits()),
        symbol_count: symbols.len(),
    })
}

pub fn rans_decode(stream: &[u8], table: &FreqTable, n: usize) -> Result<Vec<usize>> {
    let mut dec = RansDecoder::new(stream)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(dec.decode(table)?);
    }
    dec.finish()?;
    Ok(out)
}
