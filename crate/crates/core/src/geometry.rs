//! Homogeneous projective-geometry primitives.
//!
//! Everything here is a thin newtype over `nalgebra` fixed-size types. Values
//! are validated on construction and immutable afterwards.

use nalgebra::{Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Relative tolerance for "last coordinate is zero" tests.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Tolerance on the distance between unit-normalized vectors for projective equality.
pub const PROJECTIVE_EQ_TOL: f64 = 1e-9;

/// Scale-free singularity threshold for 4×4 homographies: |det H| / ‖H‖_F⁴.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("zero vector is not a valid homogeneous point")]
    ZeroVector,
    #[error("degenerate projection: point lies (numerically) in the camera null space")]
    DegenerateProjection,
    #[error("point at infinity cannot be dehomogenized")]
    PointAtInfinity,
    #[error("camera matrix is rank deficient (σ₃/σ₁ = {0:e})")]
    RankDeficientCamera(f64),
    #[error("homography is singular")]
    SingularHomography,
    #[error("non-finite value in input")]
    NonFinite,
}

/// Homogeneous image point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomPoint2(Vector3<f64>);

/// Homogeneous world (or projective-frame) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomPoint3(Vector4<f64>);

/// A 3×4 projective camera of full row rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMatrix(Matrix3x4<f64>);

/// A nonsingular 4×4 projective transformation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography4(Matrix4<f64>);

impl HomPoint2 {
    pub fn new(coords: Vector3<f64>) -> Result<Self, GeometryError> {
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if coords.norm() == 0.0 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self(coords))
    }

    /// Pixel (or normalized) coordinates lifted with a unit weight.
    pub fn from_euclidean(x: f64, y: f64) -> Self {
        Self(Vector3::new(x, y, 1.0))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn dehomogenize(&self) -> Result<Vector2<f64>, GeometryError> {
        let w = self.0.z;
        if w.abs() <= DEGENERACY_TOL * self.0.norm() {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Vector2::new(self.0.x / w, self.0.y / w))
    }

    pub fn projectively_equal(&self, other: &Self) -> bool {
        projectively_equal(self.0.as_slice(), other.0.as_slice())
    }
}

impl HomPoint3 {
    pub fn new(coords: Vector4<f64>) -> Result<Self, GeometryError> {
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if coords.norm() == 0.0 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self(coords))
    }

    pub fn from_euclidean(p: &Vector3<f64>) -> Self {
        Self(Vector4::new(p.x, p.y, p.z, 1.0))
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn dehomogenize(&self) -> Result<Vector3<f64>, GeometryError> {
        let w = self.0.w;
        if w.abs() <= DEGENERACY_TOL * self.0.norm() {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(self.0.xyz() / w)
    }

    pub fn projectively_equal(&self, other: &Self) -> bool {
        projectively_equal(self.0.as_slice(), other.0.as_slice())
    }
}

impl CameraMatrix {
    pub fn new(entries: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let sv = entries.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if max == 0.0 || min / max < DEGENERACY_TOL {
            return Err(GeometryError::RankDeficientCamera(if max == 0.0 { 0.0 } else { min / max }));
        }
        Ok(Self(entries))
    }

    /// The canonical camera `[I | 0]`.
    pub fn canonical() -> Self {
        Self(Matrix3x4::identity())
    }

    pub fn entries(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    pub fn projectively_equal(&self, other: &Self) -> bool {
        projectively_equal(self.0.as_slice(), other.0.as_slice())
    }
}

impl Homography4 {
    pub fn new(entries: Matrix4<f64>) -> Result<Self, GeometryError> {
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let scale = entries.norm();
        if scale == 0.0 || entries.determinant().abs() / scale.powi(4) <= SINGULAR_TOL {
            return Err(GeometryError::SingularHomography);
        }
        Ok(Self(entries))
    }

    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn entries(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        self.0
            .try_inverse()
            .ok_or(GeometryError::SingularHomography)
            .and_then(Self::new)
    }

    /// `self · other`
    pub fn compose(&self, other: &Self) -> Result<Self, GeometryError> {
        Self::new(self.0 * other.0)
    }
}

/// Cameras and points consistent up to a 4×4 homography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveReconstruction {
    pub cameras: Vec<CameraMatrix>,
    pub points: Vec<HomPoint3>,
}

impl ProjectiveReconstruction {
    pub fn new(cameras: Vec<CameraMatrix>, points: Vec<HomPoint3>) -> Self {
        Self { cameras, points }
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Stacked `3n × 4` camera matrix.
    pub fn camera_stack(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(3 * self.cameras.len(), 4);
        for (i, cam) in self.cameras.iter().enumerate() {
            out.fixed_view_mut::<3, 4>(3 * i, 0).copy_from(cam.entries());
        }
        out
    }

    /// `4 × m` point matrix.
    pub fn point_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(4, self.points.len());
        for (j, p) in self.points.iter().enumerate() {
            out.fixed_view_mut::<4, 1>(0, j).copy_from(p.coords());
        }
        out
    }

    /// Maps cameras through `P ↦ P·H⁻¹` and points through `X ↦ H·X`.
    pub fn apply_homography(&self, h: &Homography4) -> Result<Self, GeometryError> {
        let h_inv = h.inverse()?;
        let cameras = self
            .cameras
            .iter()
            .map(|c| CameraMatrix::new(c.entries() * h_inv.entries()))
            .collect::<Result<Vec<_>, _>>()?;
        let points = self
            .points
            .iter()
            .map(|p| HomPoint3::new(h.entries() * p.coords()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cameras, points })
    }

    /// Premultiplies every camera by a 3×3 image-frame transform `T` (`P ↦ T·P`).
    pub fn map_image_frame(&self, t: &nalgebra::Matrix3<f64>) -> Result<Self, GeometryError> {
        let cameras = self
            .cameras
            .iter()
            .map(|c| CameraMatrix::new(t * c.entries()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cameras, points: self.points.clone() })
    }
}

/// `P·X` as a homogeneous image point.
pub fn project_point(p: &CameraMatrix, x: &HomPoint3) -> Result<HomPoint2, GeometryError> {
    let v = p.entries() * x.coords();
    let scale = p.entries().norm() * x.coords().norm();
    if v.norm() <= DEGENERACY_TOL * scale {
        return Err(GeometryError::DegenerateProjection);
    }
    HomPoint2::new(v)
}

/// `‖a/‖a‖ ± b/‖b‖‖ < 1e-9`, sign taken from the dot product.
pub fn projectively_equal(a: &[f64], b: &[f64]) -> bool {
    projective_distance(a, b) < PROJECTIVE_EQ_TOL
}

/// Distance between unit-normalized, sign-aligned copies of `a` and `b`.
pub fn projective_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { f64::INFINITY };
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x / na - sign * y / nb;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Cross-product residual `‖x × (P·X)‖` between unit-normalized vectors.
pub fn reprojection_cross_residual(x: &HomPoint2, p: &CameraMatrix, pt: &HomPoint3) -> f64 {
    let proj = p.entries() * pt.coords();
    let a = x.coords().normalize();
    let n = proj.norm();
    if n == 0.0 {
        return f64::INFINITY;
    }
    a.cross(&(proj / n)).norm()
}
