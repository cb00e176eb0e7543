//! Record files of feedback frames and their JSON angle dump.
//!
//! Layout: magic `BFI1`, then per record
//! `user_id u8 | timestamp f64 LE | K u16 LE | M u8 | N_ss u8 | b_phi u8 |
//! payload_len u32 LE | payload`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::angles::{angle_layout, AngleKind, AngleSet};
use super::frame::{pack_frame, unpack_frame, BfiFrame, FrameMeta};
use super::quant::{dequantize, quantize};
use super::CodecError;

pub const RECORD_MAGIC: [u8; 4] = *b"BFI1";

const RECORD_HEADER_LEN: usize = 1 + 8 + 2 + 1 + 1 + 1 + 4;

pub fn write_header<W: Write>(mut w: W) -> io::Result<()> {
    w.write_all(&RECORD_MAGIC)
}

pub fn write_record<W: Write>(mut w: W, frame: &BfiFrame) -> Result<(), CodecError> {
    let len = u32::try_from(frame.payload.len())
        .map_err(|_| CodecError::Frame("payload exceeds u32 length".into()))?;
    let mut head = [0u8; RECORD_HEADER_LEN];
    head[0] = frame.meta.user_id;
    head[1..9].copy_from_slice(&frame.meta.timestamp.to_le_bytes());
    head[9..11].copy_from_slice(&frame.subchannels.to_le_bytes());
    head[11] = frame.meta.m;
    head[12] = frame.meta.n_ss;
    head[13] = frame.meta.b_phi;
    head[14..18].copy_from_slice(&len.to_le_bytes());
    w.write_all(&head)?;
    w.write_all(&frame.payload)?;
    Ok(())
}

/// Writes a complete record file.
pub fn write_records<W: Write>(mut w: W, frames: &[BfiFrame]) -> Result<(), CodecError> {
    write_header(&mut w)?;
    for f in frames {
        write_record(&mut w, f)?;
    }
    Ok(())
}

pub fn encode_records(frames: &[BfiFrame]) -> Result<Vec<u8>, CodecError> {
    let mut buf = Vec::new();
    write_records(&mut buf, frames)?;
    Ok(buf)
}

/// Parses a complete record file held in memory.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<BfiFrame>, CodecError> {
    if bytes.len() < 4 || bytes[..4] != RECORD_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let mut pos = 4;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < RECORD_HEADER_LEN {
            return Err(CodecError::Truncated {
                needed_bits: (pos + RECORD_HEADER_LEN) * 8,
                available_bits: bytes.len() * 8,
            });
        }
        let h = &bytes[pos..pos + RECORD_HEADER_LEN];
        let timestamp = f64::from_le_bytes(h[1..9].try_into().expect("8 bytes"));
        let subchannels = u16::from_le_bytes([h[9], h[10]]);
        let len = u32::from_le_bytes(h[14..18].try_into().expect("4 bytes")) as usize;
        pos += RECORD_HEADER_LEN;
        if bytes.len() - pos < len {
            return Err(CodecError::Truncated {
                needed_bits: (pos + len) * 8,
                available_bits: bytes.len() * 8,
            });
        }
        frames.push(BfiFrame {
            meta: FrameMeta { user_id: h[0], timestamp, m: h[11], n_ss: h[12], b_phi: h[13] },
            subchannels,
            payload: bytes[pos..pos + len].to_vec(),
        });
        pos += len;
    }
    Ok(frames)
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<BfiFrame>, CodecError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_records(&buf)
}

/// Dequantized angles of one sub-channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubchannelAngles {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

/// JSON view of one frame with its angles dequantized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDump {
    pub user_id: u8,
    pub timestamp: f64,
    pub k: u16,
    pub m: u8,
    pub n_ss: u8,
    pub b_phi: u8,
    pub subchannels: Vec<SubchannelAngles>,
}

pub fn dump_frame(frame: &BfiFrame) -> Result<FrameDump, CodecError> {
    let codes = unpack_frame(frame)?;
    let subchannels = codes
        .iter()
        .map(|q| {
            let set = dequantize(q)?;
            Ok(SubchannelAngles {
                phi: set.phi.iter().map(|a| a.value).collect(),
                psi: set.psi.iter().map(|a| a.value).collect(),
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    Ok(FrameDump {
        user_id: frame.meta.user_id,
        timestamp: frame.meta.timestamp,
        k: frame.subchannels,
        m: frame.meta.m,
        n_ss: frame.meta.n_ss,
        b_phi: frame.meta.b_phi,
        subchannels,
    })
}

/// Re-quantizes a dump back into a frame. Exact for dumps produced by
/// [`dump_frame`], since dequantized values quantize to their own code.
pub fn frame_from_dump(dump: &FrameDump) -> Result<BfiFrame, CodecError> {
    if dump.subchannels.len() != usize::from(dump.k) {
        return Err(CodecError::Frame(format!(
            "dump declares K={} but lists {} sub-channels",
            dump.k,
            dump.subchannels.len()
        )));
    }
    let (m, n_ss) = (usize::from(dump.m), usize::from(dump.n_ss));
    let layout = angle_layout(m, n_ss);
    let codes = dump
        .subchannels
        .iter()
        .map(|sc| {
            let (mut p, mut q) = (sc.phi.iter().copied(), sc.psi.iter().copied());
            let values = layout
                .iter()
                .map(|slot| match slot.kind {
                    AngleKind::Phi => p.next(),
                    AngleKind::Psi => q.next(),
                })
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| CodecError::MalformedAngles("too few angles in dump".into()))?;
            if p.next().is_some() || q.next().is_some() {
                return Err(CodecError::MalformedAngles("too many angles in dump".into()));
            }
            quantize(&AngleSet::from_emission_values(m, n_ss, &values)?, dump.b_phi)
        })
        .collect::<Result<Vec<_>, _>>()?;
    pack_frame(&codes, dump.user_id, dump.timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::quant::QuantizedAngleSet;

    fn frame(k: usize, user: u8, t: f64) -> BfiFrame {
        let codes: Vec<_> = (0..k)
            .map(|i| QuantizedAngleSet {
                m: 3,
                n_ss: 1,
                b_phi: 9,
                q_phi: vec![(i * 7 % 512) as u16, (i * 13 % 512) as u16],
                q_psi: vec![(i * 3 % 128) as u16, (i * 5 % 128) as u16],
            })
            .collect();
        pack_frame(&codes, user, t).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let frames = vec![frame(1, 0, 0.0), frame(234, 2, 0.01), frame(20, 1, 1e9)];
        let bytes = encode_records(&frames).unwrap();
        assert_eq!(&bytes[..4], b"BFI1");
        assert_eq!(bytes.len(), 4 + 3 * 18 + 4 + 936 + 80);
        assert_eq!(decode_records(&bytes).unwrap(), frames);
    }

    #[test]
    fn header_byte_layout() {
        let bytes = encode_records(&[frame(1, 7, 0.5)]).unwrap();
        assert_eq!(bytes[4], 7);
        assert_eq!(&bytes[5..13], &0.5f64.to_le_bytes());
        assert_eq!(&bytes[13..15], &[1, 0]);
        assert_eq!(&bytes[15..18], &[3, 1, 9]);
        assert_eq!(&bytes[18..22], &[4, 0, 0, 0]);
        assert_eq!(bytes.len(), 26);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_records(&[frame(5, 0, 0.0)]).unwrap();
        assert!(matches!(decode_records(b"BFI2"), Err(CodecError::BadMagic)));
        assert!(matches!(decode_records(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_records(&bytes[..10]), Err(CodecError::Truncated { .. })));
        assert!(decode_records(b"BFI1").unwrap().is_empty());
    }

    #[test]
    fn dump_round_trip() {
        let f = frame(20, 1, 0.25);
        let dump = dump_frame(&f).unwrap();
        let json = serde_json::to_string(&dump).unwrap();
        let back: FrameDump = serde_json::from_str(&json).unwrap();
        assert_eq!(frame_from_dump(&back).unwrap(), f);
    }
}
