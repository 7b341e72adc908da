//! In-memory form of the compressed container shared by every codec.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecId {
    Pm = 1,
    Epc = 2,
    Patch = 3,
}

impl CodecId {
    pub fn from_id(id: u64) -> Result<Self> {
        match id {
            1 => Ok(CodecId::Pm),
            2 => Ok(CodecId::Epc),
            3 => Ok(CodecId::Patch),
            other => Err(Error::Format(format!("unknown codec id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Pm => "pm",
            CodecId::Epc => "epc",
            CodecId::Patch => "patch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FallbackMode {
    #[default]
    Off = 0,
    Budget = 1,
    Full = 2,
}

impl FallbackMode {
    pub fn from_id(id: u64) -> Result<Self> {
        match id {
            0 => Ok(FallbackMode::Off),
            1 => Ok(FallbackMode::Budget),
            2 => Ok(FallbackMode::Full),
            other => Err(Error::Format(format!("unknown fallback mode {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FallbackMode::Off => "off",
            FallbackMode::Budget => "budget",
            FallbackMode::Full => "full",
        }
    }
}

impl std::str::FromStr for FallbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(FallbackMode::Off),
            "budget" => Ok(FallbackMode::Budget),
            "full" => Ok(FallbackMode::Full),
            other => Err(Error::Config(format!("unknown fallback mode '{other}'"))),
        }
    }
}

/// Exact rational in `[0, 1]`, stored as numerator and denominator so that
/// quotas are computed without floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u32,
    den: u32,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Config(format!("fraction {num}/{den} outside [0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Nearest fraction with denominator 10^4.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Config(format!("{x} outside [0, 1]")));
        }
        Self::new((x * 10_000.0).round() as u32, 10_000)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    /// `floor(self * n)`.
    pub fn floor_mul(self, n: usize) -> usize {
        (n as u64 * self.num as u64 / self.den as u64) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// How the patcher conditions its predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PatchContext {
    /// Reconstruction with every mismatch hidden at once.
    #[default]
    MaskMismatches = 0,
    /// Reconstruction with only the queried position hidden.
    FullReconstruction = 1,
}

impl PatchContext {
    pub fn from_id(id: u64) -> Result<Self> {
        match id {
            0 => Ok(PatchContext::MaskMismatches),
            1 => Ok(PatchContext::FullReconstruction),
            other => Err(Error::Format(format!("unknown patch context {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadHeader {
    pub codec: CodecId,
    pub p_mask: Fraction,
    pub window: u32,
    pub max_run: u32,
    pub k: u32,
    pub mode: FallbackMode,
    pub beta: Fraction,
    pub vocab: u32,
    pub tokens: u64,
    pub chars: u64,
    pub aux_order: u8,
    pub scale_bits: u32,
    pub top_k: u32,
    pub refine_iters: u32,
    pub infill_chunk: u32,
    pub patch_context: PatchContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Streams {
    pub positions: Vec<u8>,
    pub kept: Vec<u8>,
    pub flags: Vec<u8>,
    pub ranks: Vec<u8>,
    pub fallback: Vec<u8>,
}

impl Streams {
    pub fn as_array(&self) -> [&Vec<u8>; 5] {
        [
            &self.positions,
            &self.kept,
            &self.flags,
            &self.ranks,
            &self.fallback,
        ]
    }

    pub fn total_bytes(&self) -> usize {
        self.as_array().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub header: PayloadHeader,
    pub streams: Streams,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_reduce_and_floor() {
        let f = Fraction::from_f64(0.6).unwrap();
        assert_eq!((f.num(), f.den()), (3, 5));
        assert_eq!(f.floor_mul(64), 38);
        assert_eq!(Fraction::from_f64(0.5).unwrap().floor_mul(7), 3);
        assert_eq!(Fraction::ZERO.floor_mul(100), 0);
        assert!(Fraction::new(3, 2).is_err());
        assert!(Fraction::new(0, 0).is_err());
        assert!(Fraction::from_f64(-0.1).is_err());
    }
}
