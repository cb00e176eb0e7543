//! Givens-rotation decomposition of a beamforming matrix into φ/ψ angles.
//!
//! A matrix `V` with orthonormal columns is written as `V = Ṽ · D̃`, where
//! `D̃` is a diagonal of unit phases (not transmitted) and
//!
//! ```text
//! Ṽ = Π_i ( D_i · Π_{ℓ=i+1..M} G_{ℓ,i}ᵀ ) · I_{M×N_ss},   i = 1..min(N_ss, M−1)
//! ```
//!
//! Indices `ℓ` (row) and `i` (column) are 1-based throughout this module,
//! matching the usual φ_{ℓ,i} / ψ_{ℓ,i} naming of the feedback angles.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::matrix::BeamformingMatrix;
use super::CodecError;

const UNIT_MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleKind {
    Phi,
    Psi,
}

/// One position of the emission order: kind plus 1-based `(ℓ, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AngleSlot {
    pub kind: AngleKind,
    pub row: usize,
    pub col: usize,
}

/// Emission order of the angles for an `M x N_ss` matrix: for each column
/// `i` ascending, the φ's (`ℓ = i..M−1`) followed by the ψ's (`ℓ = i+1..M`).
pub fn angle_layout(m: usize, n_ss: usize) -> Vec<AngleSlot> {
    let mut slots = Vec::new();
    for i in 1..=n_ss.min(m.saturating_sub(1)) {
        for l in i..m {
            slots.push(AngleSlot { kind: AngleKind::Phi, row: l, col: i });
        }
        for l in (i + 1)..=m {
            slots.push(AngleSlot { kind: AngleKind::Psi, row: l, col: i });
        }
    }
    slots
}

/// Number of φ angles, which is also the number of ψ angles.
pub fn angles_per_kind(m: usize, n_ss: usize) -> usize {
    (1..=n_ss.min(m.saturating_sub(1))).map(|i| m - i).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle {
    /// 1-based row `ℓ`.
    pub row: usize,
    /// 1-based column `i`.
    pub col: usize,
    /// Radians.
    pub value: f64,
}

/// φ and ψ angles of one sub-channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSet {
    pub m: usize,
    pub n_ss: usize,
    pub phi: Vec<Angle>,
    pub psi: Vec<Angle>,
}

impl AngleSet {
    /// Builds a set from values listed in emission order.
    pub fn from_emission_values(m: usize, n_ss: usize, values: &[f64]) -> Result<Self, CodecError> {
        let layout = angle_layout(m, n_ss);
        if layout.len() != values.len() {
            return Err(CodecError::MalformedAngles(format!(
                "expected {} angles for M={m}, N_ss={n_ss}, got {}",
                layout.len(),
                values.len()
            )));
        }
        let mut set = AngleSet { m, n_ss, phi: Vec::new(), psi: Vec::new() };
        for (slot, &value) in layout.iter().zip(values) {
            let angle = Angle { row: slot.row, col: slot.col, value };
            match slot.kind {
                AngleKind::Phi => set.phi.push(angle),
                AngleKind::Psi => set.psi.push(angle),
            }
        }
        set.validate()?;
        Ok(set)
    }

    /// Values in emission order.
    pub fn emission_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.phi.len() + self.psi.len());
        let (mut p, mut q) = (0, 0);
        for slot in angle_layout(self.m, self.n_ss) {
            match slot.kind {
                AngleKind::Phi => {
                    out.push(self.phi[p].value);
                    p += 1;
                }
                AngleKind::Psi => {
                    out.push(self.psi[q].value);
                    q += 1;
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.phi.len() + self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks counts, index order and ranges against the layout for `(m, n_ss)`.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.m == 0 || self.n_ss == 0 || self.n_ss > self.m {
            return Err(CodecError::MalformedAngles(format!(
                "invalid shape M={}, N_ss={}",
                self.m, self.n_ss
            )));
        }
        let layout = angle_layout(self.m, self.n_ss);
        let expect = |kind| layout.iter().filter(move |s| s.kind == kind);
        for (kind, list) in [(AngleKind::Phi, &self.phi), (AngleKind::Psi, &self.psi)] {
            let slots: Vec<_> = expect(kind).collect();
            if slots.len() != list.len() {
                return Err(CodecError::MalformedAngles(format!(
                    "{kind:?} count {} != expected {}",
                    list.len(),
                    slots.len()
                )));
            }
            for (slot, a) in slots.iter().zip(list.iter()) {
                if slot.row != a.row || slot.col != a.col {
                    return Err(CodecError::MalformedAngles(format!(
                        "{kind:?} index ({}, {}) where ({}, {}) expected",
                        a.row, a.col, slot.row, slot.col
                    )));
                }
                let ok = match kind {
                    AngleKind::Phi => (0.0..TAU).contains(&a.value),
                    AngleKind::Psi => (0.0..=FRAC_PI_2).contains(&a.value),
                };
                if !ok {
                    return Err(CodecError::AngleOutOfRange { kind, value: a.value });
                }
            }
        }
        Ok(())
    }
}

/// Diagonal of `D̃`, the per-stream phase that is not fed back.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPhases {
    pub d_tilde: Vec<Complex64>,
}

impl ResidualPhases {
    pub fn is_unit_modulus(&self) -> bool {
        self.d_tilde
            .iter()
            .all(|z| (z.norm() - 1.0).abs() <= UNIT_MODULUS_TOL)
    }
}

/// Phase of `z` in `[0, 2π)`, with the phase of zero defined as 0.
fn phase(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    let a = if a < 0.0 { a + TAU } else { a };
    if a >= TAU {
        0.0
    } else {
        a
    }
}

fn unit_phasor(z: Complex64) -> Complex64 {
    Complex64::from_polar(1.0, phase(z))
}

/// `D_i`: identity except `e^{jφ}` at diagonal positions `i..M−1`.
pub fn build_d_matrix(phis: &[f64], i: usize, m: usize) -> Result<DMatrix<Complex64>, CodecError> {
    if i == 0 || i >= m {
        return Err(CodecError::Index(format!("D matrix column {i} outside 1..{m}")));
    }
    if phis.len() != m - i {
        return Err(CodecError::Index(format!(
            "D matrix for i={i}, M={m} needs {} phases, got {}",
            m - i,
            phis.len()
        )));
    }
    let mut d = DMatrix::identity(m, m);
    for (offset, &phi) in phis.iter().enumerate() {
        let pos = i - 1 + offset;
        d[(pos, pos)] = Complex64::from_polar(1.0, phi);
    }
    Ok(d)
}

/// Givens rotation `G_{ℓ,i}` with `cos ψ` at `(i,i)`/`(ℓ,ℓ)`, `sin ψ` at
/// `(i,ℓ)` and `−sin ψ` at `(ℓ,i)`.
pub fn build_g_matrix(psi: f64, l: usize, i: usize, m: usize) -> Result<DMatrix<f64>, CodecError> {
    if i == 0 || i >= l || l > m {
        return Err(CodecError::Index(format!(
            "Givens indices need 1 <= i < l <= M, got i={i}, l={l}, M={m}"
        )));
    }
    if !(0.0..=FRAC_PI_2).contains(&psi) {
        return Err(CodecError::AngleOutOfRange { kind: AngleKind::Psi, value: psi });
    }
    let (s, c) = psi.sin_cos();
    let mut g = DMatrix::identity(m, m);
    let (a, b) = (i - 1, l - 1);
    g[(a, a)] = c;
    g[(b, b)] = c;
    g[(a, b)] = s;
    g[(b, a)] = -s;
    Ok(g)
}

/// Decomposes `V` into feedback angles and the residual phases `D̃`.
pub fn decompose(v: &BeamformingMatrix) -> Result<(AngleSet, ResidualPhases), CodecError> {
    let v = BeamformingMatrix::new(v.matrix().clone())?;
    let m = v.tx_antennas();
    let n_ss = v.streams();
    let vm = v.matrix();

    let d_tilde: Vec<Complex64> = (0..n_ss).map(|c| unit_phasor(vm[(m - 1, c)])).collect();
    let mut omega = vm.clone();
    for (c, d) in d_tilde.iter().enumerate() {
        let conj = d.conj();
        for r in 0..m {
            omega[(r, c)] *= conj;
        }
    }

    let mut phi = Vec::new();
    let mut psi = Vec::new();
    for i in 1..=n_ss.min(m - 1) {
        let col = i - 1;
        for l in i..m {
            let value = phase(omega[(l - 1, col)]);
            phi.push(Angle { row: l, col: i, value });
            // Ω ← D_i† Ω: only row ℓ changes.
            let rot = Complex64::from_polar(1.0, -value);
            for c in 0..n_ss {
                omega[(l - 1, c)] *= rot;
            }
        }
        for l in (i + 1)..=m {
            let a = omega[(i - 1, col)].norm();
            let b = omega[(l - 1, col)].norm();
            let r = a.hypot(b);
            let value = if r == 0.0 { 0.0 } else { (a / r).clamp(0.0, 1.0).acos() };
            psi.push(Angle { row: l, col: i, value });
            // Ω ← G_{ℓ,i} Ω: rows i and ℓ mix.
            let (s, cth) = value.sin_cos();
            for c in 0..n_ss {
                let xi = omega[(i - 1, c)];
                let xl = omega[(l - 1, c)];
                omega[(i - 1, c)] = xi * cth + xl * s;
                omega[(l - 1, c)] = xi * (-s) + xl * cth;
            }
        }
    }

    let set = AngleSet { m, n_ss, phi, psi };
    Ok((set, ResidualPhases { d_tilde }))
}

/// Rebuilds `Ṽ` from the feedback angles.
pub fn reconstruct(angles: &AngleSet) -> Result<BeamformingMatrix, CodecError> {
    angles.validate()?;
    let m = angles.m;
    let n_ss = angles.n_ss;
    let mut acc: DMatrix<Complex64> = DMatrix::identity(m, m);
    let mut phis = angles.phi.iter();
    let mut psis = angles.psi.iter();
    for i in 1..=n_ss.min(m - 1) {
        // acc ← acc · D_i
        for l in i..m {
            let a = phis.next().expect("validated count");
            let scale = Complex64::from_polar(1.0, a.value);
            for r in 0..m {
                acc[(r, l - 1)] *= scale;
            }
        }
        // acc ← acc · G_{ℓ,i}ᵀ
        for l in (i + 1)..=m {
            let a = psis.next().expect("validated count");
            let (s, c) = a.value.sin_cos();
            for r in 0..m {
                let xi = acc[(r, i - 1)];
                let xl = acc[(r, l - 1)];
                acc[(r, i - 1)] = xi * c + xl * s;
                acc[(r, l - 1)] = xl * c - xi * s;
            }
        }
    }
    Ok(BeamformingMatrix::new_unchecked(acc.columns(0, n_ss).into_owned()))
}

/// `Ṽ · D̃`.
pub fn apply_residual(v_tilde: &BeamformingMatrix, residual: &ResidualPhases) -> DMatrix<Complex64> {
    let mut out = v_tilde.matrix().clone();
    for (c, d) in residual.d_tilde.iter().enumerate() {
        for r in 0..out.nrows() {
            out[(r, c)] *= *d;
        }
    }
    out
}
