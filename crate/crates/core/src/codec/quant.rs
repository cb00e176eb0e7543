//! Uniform mid-rise angle quantization.
//!
//! φ codewords sit at `π(2q+1)/2^{b_φ}` over `[0, 2π)` and ψ codewords at
//! `π(2q+1)/2^{b_ψ+2}` over `[0, π/2]`, with `b_ψ = b_φ − 2`. Quantization
//! picks the nearest codeword, breaking exact ties toward the even index.
//! The IEEE codebooks differ from these by an offset convention.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::angles::{angle_layout, Angle, AngleKind, AngleSet};
use super::CodecError;

/// Supported φ resolutions.
pub const PHI_BITS: [u8; 2] = [7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitWidths {
    pub phi: u8,
    pub psi: u8,
}

impl BitWidths {
    pub fn new(b_phi: u8) -> Result<Self, CodecError> {
        if !PHI_BITS.contains(&b_phi) {
            return Err(CodecError::UnsupportedBits(b_phi));
        }
        Ok(Self { phi: b_phi, psi: b_phi - 2 })
    }

    pub fn bits(&self, kind: AngleKind) -> u8 {
        match kind {
            AngleKind::Phi => self.phi,
            AngleKind::Psi => self.psi,
        }
    }

    /// Codebook step in radians.
    pub fn step(&self, kind: AngleKind) -> f64 {
        match kind {
            AngleKind::Phi => TAU / f64::from(1u32 << self.phi),
            AngleKind::Psi => PI / f64::from(1u32 << (self.psi + 1)),
        }
    }

    pub fn levels(&self, kind: AngleKind) -> u32 {
        1u32 << self.bits(kind)
    }
}

/// Quantized φ/ψ codes of one sub-channel, in the same order as [`AngleSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedAngleSet {
    pub m: usize,
    pub n_ss: usize,
    pub b_phi: u8,
    pub q_phi: Vec<u16>,
    pub q_psi: Vec<u16>,
}

impl QuantizedAngleSet {
    pub fn widths(&self) -> Result<BitWidths, CodecError> {
        BitWidths::new(self.b_phi)
    }

    /// Codes in emission order, paired with their kind.
    pub fn emission_codes(&self) -> Vec<(AngleKind, u16)> {
        let (mut p, mut q) = (0, 0);
        angle_layout(self.m, self.n_ss)
            .into_iter()
            .map(|slot| match slot.kind {
                AngleKind::Phi => {
                    p += 1;
                    (AngleKind::Phi, self.q_phi[p - 1])
                }
                AngleKind::Psi => {
                    q += 1;
                    (AngleKind::Psi, self.q_psi[q - 1])
                }
            })
            .collect()
    }

    /// Inverse of [`emission_codes`](Self::emission_codes).
    pub fn from_emission_codes(
        m: usize,
        n_ss: usize,
        b_phi: u8,
        codes: &[u16],
    ) -> Result<Self, CodecError> {
        let layout = angle_layout(m, n_ss);
        if layout.len() != codes.len() {
            return Err(CodecError::MalformedAngles(format!(
                "expected {} codes, got {}",
                layout.len(),
                codes.len()
            )));
        }
        let mut out = Self { m, n_ss, b_phi, q_phi: Vec::new(), q_psi: Vec::new() };
        for (slot, &c) in layout.iter().zip(codes) {
            match slot.kind {
                AngleKind::Phi => out.q_phi.push(c),
                AngleKind::Psi => out.q_psi.push(c),
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let widths = self.widths()?;
        let n = super::angles::angles_per_kind(self.m, self.n_ss);
        if self.q_phi.len() != n || self.q_psi.len() != n || self.n_ss == 0 || self.n_ss > self.m {
            return Err(CodecError::MalformedAngles(format!(
                "code counts ({}, {}) do not fit M={}, N_ss={}",
                self.q_phi.len(),
                self.q_psi.len(),
                self.m,
                self.n_ss
            )));
        }
        for (kind, codes) in [(AngleKind::Phi, &self.q_phi), (AngleKind::Psi, &self.q_psi)] {
            let bits = widths.bits(kind);
            if let Some(&code) = codes.iter().find(|&&c| u32::from(c) >= widths.levels(kind)) {
                return Err(CodecError::CodeOutOfRange { kind, code, bits });
            }
        }
        Ok(())
    }
}

/// Nearest codeword index for one angle.
pub fn quantize_angle(value: f64, kind: AngleKind, widths: BitWidths) -> Result<u16, CodecError> {
    let in_range = match kind {
        AngleKind::Phi => (0.0..TAU).contains(&value),
        AngleKind::Psi => (0.0..=FRAC_PI_2).contains(&value),
    };
    if !in_range {
        return Err(CodecError::AngleOutOfRange { kind, value });
    }
    let levels = widths.levels(kind);
    // Codeword q is centred at (q + 1/2) steps.
    let pos = value / widths.step(kind) - 0.5;
    let q = pos.round_ties_even().clamp(0.0, f64::from(levels - 1));
    Ok(q as u16)
}

pub fn dequantize_angle(code: u16, kind: AngleKind, widths: BitWidths) -> Result<f64, CodecError> {
    if u32::from(code) >= widths.levels(kind) {
        return Err(CodecError::CodeOutOfRange { kind, code, bits: widths.bits(kind) });
    }
    Ok((f64::from(code) + 0.5) * widths.step(kind))
}

pub fn quantize(angles: &AngleSet, b_phi: u8) -> Result<QuantizedAngleSet, CodecError> {
    let widths = BitWidths::new(b_phi)?;
    angles.validate()?;
    let q = |list: &[Angle], kind| {
        list.iter()
            .map(|a| quantize_angle(a.value, kind, widths))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(QuantizedAngleSet {
        m: angles.m,
        n_ss: angles.n_ss,
        b_phi,
        q_phi: q(&angles.phi, AngleKind::Phi)?,
        q_psi: q(&angles.psi, AngleKind::Psi)?,
    })
}

pub fn dequantize(q: &QuantizedAngleSet) -> Result<AngleSet, CodecError> {
    q.validate()?;
    let widths = q.widths()?;
    let layout = angle_layout(q.m, q.n_ss);
    let mut set = AngleSet { m: q.m, n_ss: q.n_ss, phi: Vec::new(), psi: Vec::new() };
    let mut phis = q.q_phi.iter();
    let mut psis = q.q_psi.iter();
    for slot in layout {
        let (list, code) = match slot.kind {
            AngleKind::Phi => (&mut set.phi, *phis.next().expect("validated")),
            AngleKind::Psi => (&mut set.psi, *psis.next().expect("validated")),
        };
        list.push(Angle {
            row: slot.row,
            col: slot.col,
            value: dequantize_angle(code, slot.kind, widths)?,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive nearest-codeword search; ties go to the even index.
    fn brute_force(value: f64, kind: AngleKind, widths: BitWidths) -> u16 {
        let dist: Vec<f64> = (0..widths.levels(kind))
            .map(|q| (value - dequantize_angle(q as u16, kind, widths).unwrap()).abs())
            .collect();
        let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let nearest: Vec<u16> = (0..dist.len())
            .filter(|&q| dist[q] - min <= 1e-12)
            .map(|q| q as u16)
            .collect();
        nearest.iter().copied().find(|q| q % 2 == 0).unwrap_or(nearest[0])
    }

    #[test]
    fn phi_pi_ties_to_even() {
        let w = BitWidths::new(9).unwrap();
        assert_eq!(brute_force(PI, AngleKind::Phi, w), 256);
        assert_eq!(quantize_angle(PI, AngleKind::Phi, w).unwrap(), 256);
    }

    #[test]
    fn psi_zero_is_lowest_code() {
        for b in PHI_BITS {
            let w = BitWidths::new(b).unwrap();
            assert_eq!(quantize_angle(0.0, AngleKind::Psi, w).unwrap(), 0);
        }
    }

    #[test]
    fn first_codeword_centres() {
        let w = BitWidths::new(9).unwrap();
        assert_eq!(dequantize_angle(0, AngleKind::Phi, w).unwrap(), PI / 512.0);
        assert_eq!(dequantize_angle(0, AngleKind::Psi, w).unwrap(), PI / 512.0);
        assert_eq!(w.psi, 7);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for b in PHI_BITS {
            let w = BitWidths::new(b).unwrap();
            for _ in 0..2000 {
                let phi = rng.random_range(0.0..TAU);
                let psi = rng.random_range(0.0..=FRAC_PI_2);
                assert_eq!(quantize_angle(phi, AngleKind::Phi, w).unwrap(), brute_force(phi, AngleKind::Phi, w));
                assert_eq!(quantize_angle(psi, AngleKind::Psi, w).unwrap(), brute_force(psi, AngleKind::Psi, w));
            }
        }
    }

    #[test]
    fn random_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for b in PHI_BITS {
            let w = BitWidths::new(b).unwrap();
            for _ in 0..10_000 {
                let phi = rng.random_range(0.0..TAU);
                let q = quantize_angle(phi, AngleKind::Phi, w).unwrap();
                let back = dequantize_angle(q, AngleKind::Phi, w).unwrap();
                assert!((phi - back).abs() <= PI / f64::from(1u32 << b) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn codes_round_trip_exhaustively() {
        for b in PHI_BITS {
            let w = BitWidths::new(b).unwrap();
            for kind in [AngleKind::Phi, AngleKind::Psi] {
                for q in 0..w.levels(kind) {
                    let v = dequantize_angle(q as u16, kind, w).unwrap();
                    assert_eq!(quantize_angle(v, kind, w).unwrap(), q as u16);
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let w = BitWidths::new(9).unwrap();
        assert!(quantize_angle(-0.1, AngleKind::Phi, w).is_err());
        assert!(quantize_angle(TAU, AngleKind::Phi, w).is_err());
        assert!(quantize_angle(FRAC_PI_2 + 1e-9, AngleKind::Psi, w).is_err());
        assert!(quantize_angle(f64::NAN, AngleKind::Phi, w).is_err());
        assert!(dequantize_angle(512, AngleKind::Phi, w).is_err());
        assert!(dequantize_angle(128, AngleKind::Psi, w).is_err());
        assert!(matches!(BitWidths::new(8), Err(CodecError::UnsupportedBits(8))));
    }

    #[test]
    fn set_level_round_trip() {
        let angles = AngleSet::from_emission_values(3, 2, &[0.3, 6.0, 1.2, 0.01, 2.2, 0.7]).unwrap();
        let q = quantize(&angles, 7).unwrap();
        assert_eq!(q.q_phi.len(), 3);
        let back = dequantize(&q).unwrap();
        assert_eq!(quantize(&back, 7).unwrap(), q);
        let codes: Vec<u16> = q.emission_codes().into_iter().map(|(_, c)| c).collect();
        assert_eq!(QuantizedAngleSet::from_emission_codes(3, 2, 7, &codes).unwrap(), q);
    }
}
