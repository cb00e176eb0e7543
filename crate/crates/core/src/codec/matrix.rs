//! Channel and beamforming matrix types plus the SVD that links them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::CodecError;

/// Column-orthonormality tolerance for [`BeamformingMatrix`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Complex channel frequency response of one sub-channel, `M` transmit by
/// `N` receive antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct CfrMatrix {
    pub k: usize,
    h: DMatrix<Complex64>,
}

impl CfrMatrix {
    pub fn new(k: usize, h: DMatrix<Complex64>) -> Result<Self, CodecError> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(CodecError::Dimension(format!(
                "channel matrix must be at least 1x1, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        Ok(Self { k, h })
    }

    pub fn tx_antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn rx_antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.h
    }
}

/// `M x N_ss` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix {
    v: DMatrix<Complex64>,
}

impl BeamformingMatrix {
    /// Wraps `v` after checking `‖Vᴴ V − I‖_max ≤ 1e-9`.
    pub fn new(v: DMatrix<Complex64>) -> Result<Self, CodecError> {
        if v.ncols() == 0 || v.ncols() > v.nrows() {
            return Err(CodecError::Dimension(format!(
                "beamforming matrix must have 1..=M columns, got {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        let dev = orthonormality_error(&v);
        if dev > ORTHONORMAL_TOL {
            return Err(CodecError::NotOrthonormal(dev));
        }
        Ok(Self { v })
    }

    pub(crate) fn new_unchecked(v: DMatrix<Complex64>) -> Self {
        Self { v }
    }

    pub fn tx_antennas(&self) -> usize {
        self.v.nrows()
    }

    pub fn streams(&self) -> usize {
        self.v.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.v
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.v
    }
}

/// `max |(Vᴴ V − I)_{ij}|`.
pub fn orthonormality_error(v: &DMatrix<Complex64>) -> f64 {
    let gram = v.adjoint() * v;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Full output of the channel SVD `Hᵀ = U S Z†`.
#[derive(Debug, Clone)]
pub struct ChannelSvd {
    /// `N x r` left singular vectors, `r = min(M, N)`.
    pub u: DMatrix<Complex64>,
    /// Non-increasing singular values, length `r`.
    pub singular_values: Vec<f64>,
    /// `M x r` leading right singular vectors (the leading columns of `Z`).
    pub z: DMatrix<Complex64>,
}

impl ChannelSvd {
    /// `U · diag(S) · Z†`, which should reproduce `Hᵀ`.
    pub fn reassemble(&self) -> DMatrix<Complex64> {
        let r = self.singular_values.len();
        let mut us = self.u.clone();
        for c in 0..r {
            let s = self.singular_values[c];
            us.column_mut(c).scale_mut(s);
        }
        us * self.z.adjoint()
    }
}

/// Thin SVD of `Hᵀ`.
pub fn channel_svd(h: &CfrMatrix) -> Result<ChannelSvd, CodecError> {
    let ht = h.matrix().transpose();
    let svd = nalgebra::SVD::try_new(ht, true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(CodecError::SvdNoConvergence)?;
    let u = svd.u.ok_or(CodecError::SvdNoConvergence)?;
    let v_t = svd.v_t.ok_or(CodecError::SvdNoConvergence)?;
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    if singular_values.iter().any(|s| !s.is_finite()) {
        return Err(CodecError::SvdNoConvergence);
    }
    Ok(ChannelSvd {
        u,
        singular_values,
        z: v_t.adjoint(),
    })
}

/// Beamforming matrix `V`: the first `n_ss` columns of `Z` in `Hᵀ = U S Z†`,
/// together with the singular values in non-increasing order.
pub fn svd_beamforming_matrix(
    h: &CfrMatrix,
    n_ss: usize,
) -> Result<(BeamformingMatrix, Vec<f64>), CodecError> {
    let max_ss = h.tx_antennas().min(h.rx_antennas());
    if n_ss == 0 || n_ss > max_ss {
        return Err(CodecError::Dimension(format!(
            "n_ss = {n_ss} outside 1..={max_ss} for a {}x{} channel",
            h.tx_antennas(),
            h.rx_antennas()
        )));
    }
    let svd = channel_svd(h)?;
    let v = svd.z.columns(0, n_ss).into_owned();
    let dev = orthonormality_error(&v);
    if dev > ORTHONORMAL_TOL {
        return Err(CodecError::SvdNoConvergence);
    }
    Ok((BeamformingMatrix::new_unchecked(v), svd.singular_values))
}

/// Singular values of `Hᵀ · V`, non-increasing.
pub fn effective_gains(h: &CfrMatrix, v: &DMatrix<Complex64>) -> Result<Vec<f64>, CodecError> {
    let prod = h.matrix().transpose() * v;
    let svd = nalgebra::SVD::try_new(prod, false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or(CodecError::SvdNoConvergence)?;
    Ok(svd.singular_values.iter().copied().collect())
}
