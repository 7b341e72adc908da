use crate::error::{Error, Result};

/// Normalized integer frequencies summing to `2^scale_bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
    scale_bits: u32,
}

impl FreqTable {
    /// Quantizes raw counts to a table of total `2^scale_bits`.
    ///
    /// Every symbol receives at least one slot. The remaining mass is
    /// apportioned by largest remainder, ties to the lower symbol index.
    /// When the one-slot floor overdraws the budget, slots are taken back
    /// from the largest entries (ties to the lower index).
    pub fn normalize(raw: &[u64], scale_bits: u32) -> Result<Self> {
        let freqs = normalize_freqs(raw, scale_bits)?;
        Ok(Self::from_normalized(freqs, scale_bits))
    }

    fn from_normalized(freqs: Vec<u32>, scale_bits: u32) -> Self {
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in &freqs {
            acc += f;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, 1 << scale_bits);
        Self {
            freqs,
            cumulative,
            scale_bits,
        }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn total(&self) -> u32 {
        1 << self.scale_bits
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn interval(&self, symbol: usize) -> Result<(u32, u32)> {
        match self.freqs.get(symbol) {
            Some(&f) => Ok((self.cumulative[symbol], f)),
            None => Err(Error::SymbolOutOfRange {
                symbol: symbol as u64,
                alphabet: self.freqs.len() as u64,
            }),
        }
    }

    /// Symbol whose interval contains `slot`.
    pub fn lookup(&self, slot: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= slot) - 1
    }
}

pub fn normalize_freqs(raw: &[u64], scale_bits: u32) -> Result<Vec<u32>> {
    let n = raw.len();
    if n == 0 || scale_bits > 16 || n as u64 > 1u64 << scale_bits {
        return Err(Error::TableOverflow {
            alphabet: n,
            scale_bits,
        });
    }
    let target = 1u64 << scale_bits;
    let mut total: u128 = raw.iter().map(|&r| r as u128).sum();
    let ones;
    let raw = if total == 0 {
        ones = vec![1u64; n];
        total = n as u128;
        &ones[..]
    } else {
        raw
    };

    let mut freqs = Vec::with_capacity(n);
    let mut rems = Vec::with_capacity(n);
    let mut sum = 0u64;
    for &r in raw {
        let scaled = r as u128 * target as u128;
        let q = (scaled / total) as u64;
        let rem = scaled % total;
        freqs.push(q.max(1));
        // floor-bumped symbols have already been over-served
        rems.push(if q == 0 { 0 } else { rem });
        sum += q.max(1);
    }

    if sum < target {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
        let short = (target - sum) as usize;
        for &i in order.iter().cycle().take(short) {
            freqs[i] += 1;
        }
    } else {
        for _ in 0..(sum - target) {
            let (i, _) = freqs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("nonempty");
            debug_assert!(freqs[i] > 1);
            freqs[i] -= 1;
        }
    }
    Ok(freqs.into_iter().map(|f| f as u32).collect())
}

/// Two-symbol special case of [`normalize_freqs`]: returns the slot count of
/// symbol 0. Both inputs must be positive.
pub(crate) fn split2(a: u64, b: u64, scale_bits: u32) -> u32 {
    debug_assert!(a > 0 && b > 0);
    let target = 1u128 << scale_bits;
    let total = a as u128 + b as u128;
    let sa = a as u128 * target;
    let sb = b as u128 * target;
    let (qa, ra) = (sa / total, sa % total);
    let (qb, rb) = (sb / total, sb % total);
    let (mut fa, mut fb) = (qa.max(1), qb.max(1));
    let (ra, rb) = (if qa == 0 { 0 } else { ra }, if qb == 0 { 0 } else { rb });
    let sum = fa + fb;
    if sum < target {
        // at most one slot short for two symbols
        if rb > ra {
            fb += 1;
        } else {
            fa += 1;
        }
    } else if sum > target {
        if fb > fa {
            fb -= 1;
        } else {
            fa -= 1;
        }
    }
    debug_assert_eq!(fa + fb, target);
    fa as u32
}
