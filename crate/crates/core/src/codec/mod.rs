//! Compressed beamforming feedback: channel SVD, φ/ψ decomposition,
//! quantization and bit-exact frame packing.

mod angles;
mod frame;
mod matrix;
mod quant;
mod record;
mod selftest;

use thiserror::Error;

pub use angles::{
    angle_layout, angles_per_kind, apply_residual, build_d_matrix, build_g_matrix, decompose,
    reconstruct, Angle, AngleKind, AngleSet, AngleSlot, ResidualPhases,
};
pub use frame::{pack_frame, payload_bits, payload_bytes, unpack_frame, BfiFrame, FrameMeta};
pub use matrix::{
    channel_svd, effective_gains, max_abs_diff, orthonormality_error, svd_beamforming_matrix,
    BeamformingMatrix, CfrMatrix, ChannelSvd, ORTHONORMAL_TOL,
};
pub use quant::{
    dequantize, dequantize_angle, quantize, quantize_angle, BitWidths, QuantizedAngleSet, PHI_BITS,
};
pub use selftest::{case_shape, random_channel, selftest, SelftestReport, SELFTEST_TOL};
pub use record::{
    decode_records, dump_frame, encode_records, frame_from_dump, read_records, write_header,
    write_record, write_records, FrameDump, SubchannelAngles, RECORD_MAGIC,
};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("SVD failed to converge")]
    SvdNoConvergence,
    #[error("columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("malformed angle set: {0}")]
    MalformedAngles(String),
    #[error("{kind:?} angle {value} outside its range")]
    AngleOutOfRange { kind: AngleKind, value: f64 },
    #[error("{kind:?} code {code} does not fit in {bits} bits")]
    CodeOutOfRange { kind: AngleKind, code: u16, bits: u8 },
    #[error("unsupported phi bit width {0} (expected 7 or 9)")]
    UnsupportedBits(u8),
    #[error("payload truncated: need {needed_bits} bits, have {available_bits}")]
    Truncated { needed_bits: usize, available_bits: usize },
    #[error("frame error: {0}")]
    Frame(String),
    #[error("record file does not start with BFI1")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// SVD, decomposition and quantization of one sub-channel.
pub fn compress_subchannel(h: &CfrMatrix, n_ss: usize, b_phi: u8) -> Result<QuantizedAngleSet, CodecError> {
    let (v, _) = svd_beamforming_matrix(h, n_ss)?;
    let (angles, _) = decompose(&v)?;
    quantize(&angles, b_phi)
}

/// Builds one user's frame from per-sub-channel channel matrices. Sub-channels
/// are compressed in parallel when the `parallel` feature is on.
pub fn compress_frame(
    channels: &[CfrMatrix],
    n_ss: usize,
    b_phi: u8,
    user_id: u8,
    timestamp: f64,
) -> Result<BfiFrame, CodecError> {
    let codes = crate::exec::map_indexed(channels.len(), |k| compress_subchannel(&channels[k], n_ss, b_phi))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    pack_frame(&codes, user_id, timestamp)
}

/// Unpacks and dequantizes every sub-channel of a frame.
pub fn decompress_frame(frame: &BfiFrame) -> Result<Vec<AngleSet>, CodecError> {
    unpack_frame(frame)?.iter().map(dequantize).collect()
}
