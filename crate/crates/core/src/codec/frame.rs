//! Bit-packed feedback frames.
//!
//! Codes are written MSB-first, sub-channel-major, and within a sub-channel
//! in emission order. The final byte is zero-padded.

use serde::{Deserialize, Serialize};

use super::angles::{angle_layout, AngleKind};
use super::quant::{BitWidths, QuantizedAngleSet};
use super::CodecError;

/// Frame metadata carried alongside the payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub user_id: u8,
    pub timestamp: f64,
    pub m: u8,
    pub n_ss: u8,
    pub b_phi: u8,
}

/// One user's feedback report for all sub-channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BfiFrame {
    pub meta: FrameMeta,
    pub subchannels: u16,
    pub payload: Vec<u8>,
}

/// Payload size in bits for `k` sub-channels, before byte padding.
pub fn payload_bits(k: usize, m: usize, n_ss: usize, widths: BitWidths) -> usize {
    let per_sub: usize = angle_layout(m, n_ss)
        .iter()
        .map(|s| usize::from(widths.bits(s.kind)))
        .sum();
    k * per_sub
}

pub fn payload_bytes(k: usize, m: usize, n_ss: usize, widths: BitWidths) -> usize {
    payload_bits(k, m, n_ss, widths).div_ceil(8)
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn with_capacity(bytes: usize) -> Self {
        Self { bytes: Vec::with_capacity(bytes), used: 0 }
    }

    fn push(&mut self, value: u16, bits: u8) {
        for b in (0..bits).rev() {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> b) & 1) as u8;
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= bit << (7 - self.used);
            self.used = (self.used + 1) % 8;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read(&mut self, bits: u8) -> Result<u16, CodecError> {
        let end = self.pos + usize::from(bits);
        if end > self.bytes.len() * 8 {
            return Err(CodecError::Truncated { needed_bits: end, available_bits: self.bytes.len() * 8 });
        }
        let mut v = 0u16;
        for p in self.pos..end {
            let bit = (self.bytes[p / 8] >> (7 - (p % 8))) & 1;
            v = (v << 1) | u16::from(bit);
        }
        self.pos = end;
        Ok(v)
    }
}

/// Packs per-sub-channel codes (index = sub-channel) into one frame.
pub fn pack_frame(
    codes: &[QuantizedAngleSet],
    user_id: u8,
    timestamp: f64,
) -> Result<BfiFrame, CodecError> {
    let first = codes
        .first()
        .ok_or_else(|| CodecError::Frame("frame needs at least one sub-channel".into()))?;
    let k = u16::try_from(codes.len())
        .map_err(|_| CodecError::Frame(format!("{} sub-channels exceed u16", codes.len())))?;
    let (m, n_ss, b_phi) = (first.m, first.n_ss, first.b_phi);
    let widths = BitWidths::new(b_phi)?;
    let m8 = u8::try_from(m).map_err(|_| CodecError::Frame(format!("M={m} exceeds u8")))?;
    let n8 = u8::try_from(n_ss).map_err(|_| CodecError::Frame(format!("N_ss={n_ss} exceeds u8")))?;

    let mut w = BitWriter::with_capacity(payload_bytes(codes.len(), m, n_ss, widths));
    for (idx, q) in codes.iter().enumerate() {
        if (q.m, q.n_ss, q.b_phi) != (m, n_ss, b_phi) {
            return Err(CodecError::Frame(format!(
                "sub-channel {idx} has (M, N_ss, b_phi) = ({}, {}, {}), expected ({m}, {n_ss}, {b_phi})",
                q.m, q.n_ss, q.b_phi
            )));
        }
        q.validate()?;
        for (kind, code) in q.emission_codes() {
            w.push(code, widths.bits(kind));
        }
    }
    Ok(BfiFrame {
        meta: FrameMeta { user_id, timestamp, m: m8, n_ss: n8, b_phi },
        subchannels: k,
        payload: w.finish(),
    })
}

pub fn unpack_frame(frame: &BfiFrame) -> Result<Vec<QuantizedAngleSet>, CodecError> {
    let m = usize::from(frame.meta.m);
    let n_ss = usize::from(frame.meta.n_ss);
    let k = usize::from(frame.subchannels);
    let widths = BitWidths::new(frame.meta.b_phi)?;
    if m == 0 || n_ss == 0 || n_ss > m {
        return Err(CodecError::Frame(format!("invalid frame shape M={m}, N_ss={n_ss}")));
    }
    let expected = payload_bytes(k, m, n_ss, widths);
    if frame.payload.len() < expected {
        return Err(CodecError::Truncated {
            needed_bits: payload_bits(k, m, n_ss, widths),
            available_bits: frame.payload.len() * 8,
        });
    }
    if frame.payload.len() > expected {
        return Err(CodecError::Frame(format!(
            "payload is {} bytes, metadata implies {expected}",
            frame.payload.len()
        )));
    }
    let layout = angle_layout(m, n_ss);
    let mut r = BitReader::new(&frame.payload);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut q = QuantizedAngleSet { m, n_ss, b_phi: frame.meta.b_phi, q_phi: Vec::new(), q_psi: Vec::new() };
        for slot in &layout {
            let code = r.read(widths.bits(slot.kind))?;
            match slot.kind {
                AngleKind::Phi => q.q_phi.push(code),
                AngleKind::Psi => q.q_psi.push(code),
            }
        }
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_codes(k: usize) -> Vec<QuantizedAngleSet> {
        vec![QuantizedAngleSet { m: 3, n_ss: 1, b_phi: 9, q_phi: vec![0, 0], q_psi: vec![0, 0] }; k]
    }

    #[test]
    fn payload_lengths() {
        let w = BitWidths::new(9).unwrap();
        assert_eq!(payload_bits(1, 3, 1, w), 32);
        assert_eq!(payload_bytes(1, 3, 1, w), 4);
        assert_eq!(payload_bytes(234, 3, 1, w), 936);
        let w7 = BitWidths::new(7).unwrap();
        // 3 φ x 7 + 3 ψ x 5 = 36 bits per sub-channel.
        assert_eq!(payload_bits(3, 3, 2, w7), 108);
        assert_eq!(payload_bytes(3, 3, 2, w7), 14);
    }

    #[test]
    fn zero_codes_zero_payload() {
        let f = pack_frame(&zero_codes(234), 1, 0.5).unwrap();
        assert_eq!(f.payload.len(), 936);
        assert!(f.payload.iter().all(|&b| b == 0));
    }

    #[test]
    fn msb_first_layout() {
        let q = QuantizedAngleSet { m: 3, n_ss: 1, b_phi: 9, q_phi: vec![0x1FF, 0], q_psi: vec![1, 0x40] };
        let f = pack_frame(&[q], 0, 0.0).unwrap();
        // 111111111 000000000 0000001 1000000
        assert_eq!(f.payload, vec![0xFF, 0x80, 0x00, 0xC0]);
    }

    #[test]
    fn errors() {
        assert!(pack_frame(&[], 0, 0.0).is_err());
        let mut mixed = zero_codes(2);
        mixed[1].b_phi = 7;
        assert!(pack_frame(&mixed, 0, 0.0).is_err());
        let mut f = pack_frame(&zero_codes(3), 0, 0.0).unwrap();
        f.payload.pop();
        assert!(matches!(unpack_frame(&f), Err(CodecError::Truncated { .. })));
        f.payload.extend([0, 0]);
        assert!(matches!(unpack_frame(&f), Err(CodecError::Frame(_))));
    }

    fn codes_strategy() -> impl Strategy<Value = (u8, usize, Vec<u16>)> {
        (prop::sample::select(vec![7u8, 9]), prop::sample::select(vec![1usize, 20, 234]), 1usize..=2)
            .prop_flat_map(|(b, k, n_ss)| {
                let per = angle_layout(3, n_ss).len();
                (Just(b), Just(n_ss), prop::collection::vec(any::<u16>(), k * per))
            })
    }

    proptest! {
        #[test]
        fn pack_unpack_identity((b_phi, n_ss, raw) in codes_strategy()) {
            let widths = BitWidths::new(b_phi).unwrap();
            let layout = angle_layout(3, n_ss);
            let codes: Vec<QuantizedAngleSet> = raw
                .chunks(layout.len())
                .map(|chunk| {
                    let masked: Vec<u16> = chunk
                        .iter()
                        .zip(&layout)
                        .map(|(c, s)| c % (widths.levels(s.kind) as u16))
                        .collect();
                    QuantizedAngleSet::from_emission_codes(3, n_ss, b_phi, &masked).unwrap()
                })
                .collect();
            let frame = pack_frame(&codes, 2, 1.25).unwrap();
            prop_assert_eq!(frame.payload.len(), payload_bytes(codes.len(), 3, n_ss, widths));
            prop_assert_eq!(unpack_frame(&frame).unwrap(), codes);
        }
    }
}
