//! MSB-first bit packing, Elias-gamma codes and LEB128 varints.

use num_bigint::BigUint;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn push_bit(&mut self, bit: bool) {
        let offset = (self.len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Writes `value` as exactly `width` bits, most significant first.
    pub fn push_biguint(&mut self, value: &BigUint, width: u64) {
        for i in (0..width).rev() {
            self.push_bit(value.bit(i));
        }
    }

    pub fn push_gamma(&mut self, value: u64) {
        assert!(value >= 1, "Elias gamma codes positive integers only");
        let width = 64 - value.leading_zeros();
        for _ in 1..width {
            self.push_bit(false);
        }
        self.push_bits(value, width);
    }

    pub fn push_varint(&mut self, value: u64) {
        let mut buf = Vec::with_capacity(10);
        leb128::write::unsigned(&mut buf, value).expect("write to Vec");
        for b in buf {
            self.push_bits(b as u64, 8);
        }
    }

    /// Appends every bit written to `other`.
    pub fn append(&mut self, other: &BitWriter) {
        let mut reader = BitReader::new(&other.bytes);
        for _ in 0..other.len {
            self.push_bit(reader.read_bit().expect("length tracked"));
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = *self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or(Error::Truncated)?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_biguint(&mut self, width: u64) -> Result<BigUint> {
        let mut v = BigUint::default();
        for i in (0..width).rev() {
            if self.read_bit()? {
                v.set_bit(i, true);
            }
        }
        Ok(v)
    }

    pub fn read_gamma(&mut self) -> Result<u64> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros >= 64 {
                return Err(Error::Format("gamma code longer than 64 bits".into()));
            }
        }
        Ok((1u64 << zeros) | self.read_bits(zeros)?)
    }

    pub fn read_varint(&mut self) -> Result<u64> {
        let mut buf = Vec::with_capacity(10);
        loop {
            let b = self.read_bits(8)? as u8;
            buf.push(b);
            if b & 0x80 == 0 {
                break;
            }
            if buf.len() > 10 {
                return Err(Error::Format("varint too long".into()));
            }
        }
        leb128::read::unsigned(&mut buf.as_slice())
            .map_err(|e| Error::Format(format!("bad varint: {e}")))
    }
}

pub fn gamma_len(value: u64) -> u64 {
    2 * (64 - value.leading_zeros() as u64) - 1
}
