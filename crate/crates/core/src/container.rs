//! Byte layout of a payload:
//!
//! ```text
//! "MLC1" | version | codec | p_mask num | p_mask den | window | max_run | K
//!        | mode | beta num | beta den | V | N | chars
//!        | aux order | scale bits | top_k | refine iters | infill chunk | patch context
//!        | (len | bytes) x 5 streams: positions, kept, flags, ranks, fallback
//!        | crc32 (little-endian, over everything before it)
//! ```
//!
//! Every integer except the CRC is an unsigned LEB128 varint.

use crate::error::{Error, Result};
use crate::payload::{CodecId, FallbackMode, Fraction, PatchContext, Payload, PayloadHeader, Streams};

pub const MAGIC: &[u8; 4] = b"MLC1";
pub const FORMAT_VERSION: u64 = 1;
const CRC_BYTES: usize = 4;

fn put(out: &mut Vec<u8>, v: u64) {
    leb128::write::unsigned(out, v).expect("write to Vec");
}

pub fn write_payload(payload: &Payload) -> Vec<u8> {
    let h = &payload.header;
    let mut out = Vec::with_capacity(64 + payload.streams.total_bytes());
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        h.codec as u64,
        h.p_mask.num() as u64,
        h.p_mask.den() as u64,
        h.window as u64,
        h.max_run as u64,
        h.k as u64,
        h.mode as u64,
        h.beta.num() as u64,
        h.beta.den() as u64,
        h.vocab as u64,
        h.tokens,
        h.chars,
        h.aux_order as u64,
        h.scale_bits as u64,
        h.top_k as u64,
        h.refine_iters as u64,
        h.infill_chunk as u64,
        h.patch_context as u64,
    ] {
        put(&mut out, v);
    }
    for stream in payload.streams.as_array() {
        put(&mut out, stream.len() as u64);
        out.extend_from_slice(stream);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn varint(&mut self) -> Result<u64> {
        leb128::read::unsigned(&mut self.bytes).map_err(|e| match e {
            leb128::read::Error::IoError(_) => Error::Truncated,
            leb128::read::Error::Overflow => Error::Format("varint overflow".into()),
        })
    }

    fn small(&mut self, what: &str) -> Result<u32> {
        let v = self.varint()?;
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} out of range")))
    }

    fn take(&mut self, n: u64) -> Result<Vec<u8>> {
        if n > self.bytes.len() as u64 {
            return Err(Error::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n as usize);
        self.bytes = rest;
        Ok(head.to_vec())
    }
}

pub fn read_payload(bytes: &[u8]) -> Result<Payload> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut version_probe = Cursor {
        bytes: &bytes[MAGIC.len()..],
    };
    let version = version_probe.varint()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < MAGIC.len() + 1 + CRC_BYTES {
        return Err(Error::Truncated);
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - CRC_BYTES);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::BadCrc { stored, computed });
    }

    let mut c = Cursor {
        bytes: &body[MAGIC.len()..],
    };
    c.varint()?;
    let codec = CodecId::from_id(c.varint()?)?;
    let p_mask = Fraction::new(c.small("p_mask numerator")?, c.small("p_mask denominator")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let window = c.small("window")?;
    let max_run = c.small("max_run")?;
    let k = c.small("K")?;
    let mode = FallbackMode::from_id(c.varint()?)?;
    let beta = Fraction::new(c.small("beta numerator")?, c.small("beta denominator")?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let vocab = c.small("vocab")?;
    let tokens = c.varint()?;
    let chars = c.varint()?;
    let aux_order = c.small("aux order")?;
    if aux_order > 1 {
        return Err(Error::Format(format!("aux coder order {aux_order}")));
    }
    let scale_bits = c.small("scale bits")?;
    let top_k = c.small("top_k")?;
    let refine_iters = c.small("refine iterations")?;
    let infill_chunk = c.small("infill chunk")?;
    let patch_context = PatchContext::from_id(c.varint()?)?;

    let mut stream = || -> Result<Vec<u8>> {
        let len = c.varint()?;
        c.take(len)
    };
    let streams = Streams {
        positions: stream()?,
        kept: stream()?,
        flags: stream()?,
        ranks: stream()?,
        fallback: stream()?,
    };
    if !c.bytes.is_empty() {
        return Err(Error::Format(format!("{} unexpected bytes before crc", c.bytes.len())));
    }
    Ok(Payload {
        header: PayloadHeader {
            codec,
            p_mask,
            window,
            max_run,
            k,
            mode,
            beta,
            vocab,
            tokens,
            chars,
            aux_order: aux_order as u8,
            scale_bits,
            top_k,
            refine_iters,
            infill_chunk,
            patch_context,
        },
        streams,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn arb_payload() -> impl Strategy<Value = Payload> {
        let header = (
            prop_oneof![Just(CodecId::Pm), Just(CodecId::Epc), Just(CodecId::Patch)],
            (0u32..1000, 1u32..1000),
            (any::<u32>(), any::<u32>(), any::<u32>()),
            prop_oneof![Just(FallbackMode::Off), Just(FallbackMode::Budget), Just(FallbackMode::Full)],
            (0u32..50, 50u32..100),
            (any::<u32>(), any::<u64>(), any::<u64>()),
            (0u8..2, any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>(), any::<bool>()),
        )
            .prop_map(|(codec, (pn, pd), (window, max_run, k), mode, (bn, bd), (vocab, tokens, chars), ext)| {
                PayloadHeader {
                    codec,
                    p_mask: Fraction::new(pn.min(pd), pd).unwrap(),
                    window,
                    max_run,
                    k,
                    mode,
                    beta: Fraction::new(bn, bd).unwrap(),
                    vocab,
                    tokens,
                    chars,
                    aux_order: ext.0,
                    scale_bits: ext.1,
                    top_k: ext.2,
                    refine_iters: ext.3,
                    infill_chunk: ext.4,
                    patch_context: if ext.5 {
                        PatchContext::FullReconstruction
                    } else {
                        PatchContext::MaskMismatches
                    },
                }
            });
        let stream = || prop::collection::vec(any::<u8>(), 0..300);
        (header, stream(), stream(), stream(), stream(), stream()).prop_map(|(header, a, b, c, d, e)| Payload {
            header,
            streams: Streams {
                positions: a,
                kept: b,
                flags: c,
                ranks: d,
                fallback: e,
            },
        })
    }

    fn sample() -> Payload {
        Payload {
            header: PayloadHeader {
                codec: CodecId::Epc,
                p_mask: Fraction::from_f64(0.6).unwrap(),
                window: 64,
                max_run: 16,
                k: 4,
                mode: FallbackMode::Budget,
                beta: Fraction::from_f64(0.25).unwrap(),
                vocab: 256,
                tokens: 1000,
                chars: 990,
                aux_order: 0,
                scale_bits: 12,
                top_k: 64,
                refine_iters: 2,
                infill_chunk: 8,
                patch_context: PatchContext::MaskMismatches,
            },
            streams: Streams {
                positions: vec![1, 2, 3],
                kept: vec![4; 10],
                ..Default::default()
            },
        }
    }

    #[test]
    fn empty_streams_make_a_minimal_container() {
        let mut p = sample();
        p.streams = Streams::default();
        let bytes = write_payload(&p);
        // magic + 19 header varints (3 of them two bytes wide) + 5 zero lengths + crc
        assert_eq!(bytes.len(), 4 + 19 + 3 + 5 + 4);
        assert_eq!(read_payload(&bytes).unwrap(), p);
    }

    #[test]
    fn distinct_errors() {
        let bytes = write_payload(&sample());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(read_payload(&bad_magic), Err(Error::BadMagic));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert_eq!(read_payload(&bad_version), Err(Error::UnsupportedVersion(9)));

        let mut flipped = bytes.clone();
        flipped[20] ^= 0x10;
        assert!(matches!(read_payload(&flipped), Err(Error::BadCrc { .. })));

        assert_eq!(read_payload(&bytes[..3]), Err(Error::Truncated));
        assert_eq!(read_payload(&bytes[..5]), Err(Error::Truncated));
    }

    #[test]
    fn well_formed_crc_over_truncated_body_reports_truncation() {
        let bytes = write_payload(&sample());
        let mut body = bytes[..bytes.len() - 4 - 5].to_vec();
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(read_payload(&body), Err(Error::Truncated));
    }

    proptest! {
        #[test]
        fn roundtrip(p in arb_payload()) {
            prop_assert_eq!(read_payload(&write_payload(&p)).unwrap(), p);
        }

        #[test]
        fn any_single_byte_flip_is_caught(p in arb_payload(), at in any::<prop::sample::Index>(), mask in 1u8..=255) {
            let mut bytes = write_payload(&p);
            let i = at.index(bytes.len());
            bytes[i] ^= mask;
            prop_assert!(read_payload(&bytes).is_err());
        }
    }
}
