//! Randomized round-trip checks over the whole codec.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::angles::{apply_residual, decompose, reconstruct, AngleKind};
use super::frame::{pack_frame, unpack_frame};
use super::matrix::{effective_gains, max_abs_diff, svd_beamforming_matrix, CfrMatrix};
use super::quant::{dequantize_angle, quantize, quantize_angle, BitWidths};
use super::CodecError;
use crate::rng::substream;

/// Reconstruction and gain tolerance.
pub const SELFTEST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub cases: usize,
    pub seed: u64,
    pub max_reconstruction_error: f64,
    pub max_gain_error: f64,
    /// Largest quantization error as a fraction of half a step.
    pub max_quantization_ratio: f64,
    pub codewords_checked: usize,
    pub random_angles_checked: usize,
    pub code_round_trip_ok: bool,
    pub frame_round_trip_ok: bool,
    pub passed: bool,
}

/// i.i.d. circular Gaussian `m × n` channel.
pub fn random_channel<R: Rng>(rng: &mut R, k: usize, m: usize, n: usize) -> Result<CfrMatrix, CodecError> {
    let h = DMatrix::from_fn(m, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    CfrMatrix::new(k, h)
}

/// Shape of case `i`: `M = 3`, `N` cycles through 1..=3, `N_ss ∈ {1, 2}`
/// where the channel has at least two receive antennas.
pub fn case_shape(i: usize) -> (usize, usize, usize) {
    let n = 1 + i % 3;
    let n_ss = if n == 1 { 1 } else { 1 + (i / 3) % 2 };
    (3, n, n_ss)
}

pub fn selftest(cases: usize, seed: u64) -> Result<SelftestReport, CodecError> {
    let mut rng = substream(seed, "codec-selftest", 0);
    let mut max_rec: f64 = 0.0;
    let mut max_gain: f64 = 0.0;
    let mut frame_ok = true;
    for i in 0..cases {
        let (m, n, n_ss) = case_shape(i);
        let h = random_channel(&mut rng, i, m, n)?;
        let (v, _) = svd_beamforming_matrix(&h, n_ss)?;
        let (angles, residual) = decompose(&v)?;
        let v_tilde = reconstruct(&angles)?;
        max_rec = max_rec.max(max_abs_diff(v.matrix(), &apply_residual(&v_tilde, &residual)));
        let g = effective_gains(&h, v.matrix())?;
        let gt = effective_gains(&h, v_tilde.matrix())?;
        for (a, b) in g.iter().zip(&gt) {
            max_gain = max_gain.max((a - b).abs());
        }
        let q = quantize(&angles, 9)?;
        let frame = pack_frame(std::slice::from_ref(&q), 0, i as f64)?;
        frame_ok &= unpack_frame(&frame)? == vec![q];
    }

    let widths = BitWidths::new(9)?;
    let mut ratio: f64 = 0.0;
    let mut codes_ok = true;
    let mut codewords = 0;
    for kind in [AngleKind::Phi, AngleKind::Psi] {
        let step = widths.step(kind);
        for code in 0..widths.levels(kind) as u16 {
            let centre = dequantize_angle(code, kind, widths)?;
            codes_ok &= quantize_angle(centre, kind, widths)? == code;
            for edge in [centre - 0.499_999 * step, centre + 0.499_999 * step] {
                let q = quantize_angle(edge, kind, widths)?;
                let err = (dequantize_angle(q, kind, widths)? - edge).abs();
                ratio = ratio.max(err / (0.5 * step));
                codes_ok &= q == code;
            }
            codewords += 1;
        }
    }
    let random = 10_000;
    for j in 0..random {
        let kind = if j % 2 == 0 { AngleKind::Phi } else { AngleKind::Psi };
        let value = match kind {
            AngleKind::Phi => rng.random_range(0.0..std::f64::consts::TAU),
            AngleKind::Psi => rng.random_range(0.0..=std::f64::consts::FRAC_PI_2),
        };
        let q = quantize_angle(value, kind, widths)?;
        let err = (dequantize_angle(q, kind, widths)? - value).abs();
        ratio = ratio.max(err / (0.5 * widths.step(kind)));
    }

    let passed = max_rec <= SELFTEST_TOL
        && max_gain <= SELFTEST_TOL
        && ratio <= 1.0 + 1e-12
        && codes_ok
        && frame_ok;
    Ok(SelftestReport {
        cases,
        seed,
        max_reconstruction_error: max_rec,
        max_gain_error: max_gain,
        max_quantization_ratio: ratio,
        codewords_checked: codewords,
        random_angles_checked: random,
        code_round_trip_ok: codes_ok,
        frame_round_trip_ok: frame_ok,
        passed,
    })
}
