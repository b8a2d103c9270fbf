//! Dual-absolute-quadric self-calibration and the projective-to-metric upgrade.
//!
//! All quantities live in the projective frame whose first camera is `[I | 0]`.
//! In that frame the DAQ is fixed by the shared intrinsics `K` and the plane at
//! infinity `Π∞ = (n∞ᵀ, 1)ᵀ`:
//!
//! ```text
//! Q = [  ω      -ω·n∞   ]      ω = K·Kᵀ
//!     [ -n∞ᵀ·ω  n∞ᵀ·ω·n∞ ]
//! ```
//!
//! and every view images it as `ωⁱ ∼ Pⁱ·Q·Pⁱᵀ`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraMatrix, GeometryError, Homography4, ProjectiveReconstruction};

/// Frobenius norm below which a projected DIAC is considered degenerate.
pub const DIAC_DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("degenerate DIAC projection")]
    DegenerateProjection,
    #[error("DIAC is not positive definite")]
    NotPositiveDefinite,
    #[error("intrinsics matrix is singular")]
    SingularIntrinsics,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type Result<T> = std::result::Result<T, CalibError>;

/// Image coordinate convention that intrinsics are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageFrame {
    #[default]
    Pixel,
    Normalized,
}

/// Upper-triangular camera calibration with `K[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics(Matrix3<f64>);

impl Intrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(CalibError::InvalidIntrinsics("non-finite entry"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(CalibError::InvalidIntrinsics("not upper triangular"));
        }
        if k[(2, 2)] == 0.0 {
            return Err(CalibError::InvalidIntrinsics("K[2][2] is zero"));
        }
        let k = k / k[(2, 2)];
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(CalibError::InvalidIntrinsics("focal lengths must be positive"));
        }
        Ok(Self(k))
    }

    pub fn from_params(fx: f64, fy: f64, skew: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `(fx, fy, skew, cx, cy)`
    pub fn params(&self) -> [f64; 5] {
        let k = &self.0;
        [k[(0, 0)], k[(1, 1)], k[(0, 1)], k[(0, 2)], k[(1, 2)]]
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.0[(0, 0)] + self.0[(1, 1)])
    }

    /// `ω = K·Kᵀ`
    pub fn diac_matrix(&self) -> Matrix3<f64> {
        self.0 * self.0.transpose()
    }

    /// Re-expresses `K` after the image transform `x ↦ T·x`.
    pub fn transformed(&self, t: &Matrix3<f64>) -> Result<Self> {
        Self::new(t * self.0)
    }
}

/// Matrix `K` built from raw parameters without validation, so optimizers can
/// wander through invalid regions.
pub fn intrinsics_matrix(params: &[f64; 5]) -> Matrix3<f64> {
    let [fx, fy, s, cx, cy] = *params;
    Matrix3::new(fx, s, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

/// `n∞` with `Π∞ = (n∞ᵀ, 1)ᵀ` in the first-camera projective frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneAtInfinity(pub Vector3<f64>);

impl PlaneAtInfinity {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn homogeneous(&self) -> nalgebra::Vector4<f64> {
        nalgebra::Vector4::new(self.0.x, self.0.y, self.0.z, 1.0)
    }
}

/// Symmetric rank-3 4×4 quadric of planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualAbsoluteQuadric(pub Matrix4<f64>);

/// Symmetric positive-definite 3×3 conic with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diac(Matrix3<f64>);

impl Diac {
    /// Symmetrizes, Frobenius-normalizes, and fixes the sign to positive trace.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let sym = 0.5 * (m + m.transpose());
        let norm = sym.norm();
        if !norm.is_finite() || norm < DIAC_DEGENERACY_TOL {
            return Err(CalibError::DegenerateProjection);
        }
        let mut out = sym / norm;
        if out.trace() < 0.0 {
            out = -out;
        }
        Ok(Self(out))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// `Q` from `(K, n∞)`.
pub fn daq_from_calibration(k: &Intrinsics, n: &PlaneAtInfinity) -> DualAbsoluteQuadric {
    daq_from_raw(k.matrix(), &n.0)
}

pub(crate) fn daq_from_raw(k: &Matrix3<f64>, n: &Vector3<f64>) -> DualAbsoluteQuadric {
    let omega = k * k.transpose();
    let on = omega * n;
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&omega);
    q.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-on));
    q.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-on.transpose()));
    q[(3, 3)] = n.dot(&on);
    DualAbsoluteQuadric(q)
}

/// `P·Q·Pᵀ`, normalized.
pub fn diac_project(p: &CameraMatrix, q: &DualAbsoluteQuadric) -> Result<Diac> {
    let m = p.entries() * q.0 * p.entries().transpose();
    Diac::from_matrix(m)
}

/// η together with the views that had to be skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct DaqResidual {
    pub value: f64,
    pub skipped_views: Vec<usize>,
}

/// `η = Σᵢ ‖PⁱQPⁱᵀ/‖PⁱQPⁱᵀ‖ − ω¹/‖ω¹‖‖_F`.
///
/// Cameras must be in the frame where the first one is `[I | 0]`.
pub fn daq_residual(cameras: &[CameraMatrix], k: &Intrinsics, n: &PlaneAtInfinity) -> DaqResidual {
    let mats: Vec<_> = cameras.iter().map(|c| *c.entries()).collect();
    daq_residual_raw(&mats, k.matrix(), &n.0)
}

/// Same as [`daq_residual`] on unchecked camera blocks and raw `K`.
pub fn daq_residual_raw(cameras: &[nalgebra::Matrix3x4<f64>], k: &Matrix3<f64>, n: &Vector3<f64>) -> DaqResidual {
    let q = daq_from_raw(k, n);
    let omega = k * k.transpose();
    let omega_norm = omega.norm();
    let mut skipped = Vec::new();
    if omega_norm < DIAC_DEGENERACY_TOL || !omega_norm.is_finite() {
        return DaqResidual { value: f64::NAN, skipped_views: (0..cameras.len()).collect() };
    }
    let target = omega / omega_norm;
    let mut value = 0.0;
    for (i, p) in cameras.iter().enumerate() {
        let proj = p * q.0 * p.transpose();
        match Diac::from_matrix(proj) {
            Ok(d) => value += (d.0 - target).norm(),
            Err(_) => skipped.push(i),
        }
    }
    DaqResidual { value, skipped_views: skipped }
}

/// Upper-triangular `K` with `ω ∝ K·Kᵀ` and `K[2][2] = 1`.
///
/// Reverse Cholesky: with the exchange matrix `J`, `J·ω·J = L·Lᵀ` gives
/// `ω = (J·L·J)·(J·L·J)ᵀ` and `J·L·J` is upper triangular.
pub fn intrinsics_from_diac(omega: &Diac) -> Result<Intrinsics> {
    let w = omega.matrix();
    let j = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let flipped = j * w * j;
    let chol = nalgebra::Cholesky::new(flipped).ok_or(CalibError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut k = j * l * j;
    for c in 0..3 {
        for r in (c + 1)..3 {
            k[(r, c)] = 0.0;
        }
    }
    Intrinsics::new(k)
}

/// `(H_M, H_M⁻¹)` with `H_M = [[K⁻¹, 0], [n∞ᵀ, 1]]` and `H_M⁻¹ = [[K, 0], [−n∞ᵀK, 1]]`.
pub fn metric_upgrade_homography(k: &Intrinsics, n: &PlaneAtInfinity) -> Result<(Matrix4<f64>, Matrix4<f64>)> {
    let km = k.matrix();
    let k_inv = km.try_inverse().ok_or(CalibError::SingularIntrinsics)?;
    let mut h = Matrix4::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&k_inv);
    h.fixed_view_mut::<1, 3>(3, 0).copy_from(&n.0.transpose());
    h[(3, 3)] = 1.0;
    let mut h_inv = Matrix4::zeros();
    h_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(km);
    h_inv.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-(n.0.transpose() * km)));
    h_inv[(3, 3)] = 1.0;
    Ok((h, h_inv))
}

/// Cameras become `Pⁱ·H_M⁻¹` and points `H_M·Xⱼ`.
pub fn metric_upgrade(recon: &ProjectiveReconstruction, k: &Intrinsics, n: &PlaneAtInfinity) -> Result<ProjectiveReconstruction> {
    let (h, _) = metric_upgrade_homography(k, n)?;
    let h = Homography4::new(h)?;
    Ok(recon.apply_homography(&h)?)
}

/// A calibration estimate as serialized to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEstimate {
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    pub n_inf: [f64; 3],
    pub frame: ImageFrame,
}

impl CalibrationEstimate {
    pub fn new(k: &Matrix3<f64>, n: &Vector3<f64>, frame: ImageFrame) -> Self {
        Self {
            k: [
                [k[(0, 0)], k[(0, 1)], k[(0, 2)]],
                [k[(1, 0)], k[(1, 1)], k[(1, 2)]],
                [k[(2, 0)], k[(2, 1)], k[(2, 2)]],
            ],
            n_inf: [n.x, n.y, n.z],
            frame,
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.k[r][c])
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.k_matrix())
    }

    pub fn plane_at_infinity(&self) -> PlaneAtInfinity {
        PlaneAtInfinity(Vector3::from(self.n_inf))
    }

    pub fn daq(&self) -> DualAbsoluteQuadric {
        daq_from_raw(&self.k_matrix(), &Vector3::from(self.n_inf))
    }

    /// `H_M` from this estimate.
    pub fn upgrade_homography(&self) -> Result<Matrix4<f64>> {
        Ok(metric_upgrade_homography(&self.intrinsics()?, &self.plane_at_infinity())?.0)
    }
}
