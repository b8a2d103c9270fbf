//! Measurement matrices and Sturm/Triggs projective factorization.
//!
//! A measurement matrix stacks depth-scaled homogeneous observations, one
//! 3-row block per view and one column per track. It may be zero-padded; the
//! validity masks say which views and columns carry data and every numeric
//! routine here operates on the valid block only.

use nalgebra::{DMatrix, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraMatrix, GeometryError, HomPoint2, HomPoint3, Homography4, ProjectiveReconstruction};
use crate::linalg::{null_vector_3x4, ThinSvd};

/// σ₄/σ₁ below which a factorization is declared rank deficient.
pub const RANK_DEFICIENCY_TOL: f64 = 1e-12;

/// Depth magnitude below which a propagated depth is flagged degenerate.
pub const DEGENERATE_DEPTH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorizationError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least {required} correspondences, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("rank deficient: σ₄/σ₁ = {0:e}")]
    RankDeficient(f64),
    #[error("fundamental matrix has rank < 2")]
    FundamentalRankDeficient,
    #[error("first camera is rank deficient")]
    DegenerateFirstCamera,
    #[error("invalid measurement matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type Result<T> = std::result::Result<T, FactorizationError>;

/// Observations of `m` tracks in `n` views, all tracks visible in all views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceTracks {
    n_views: usize,
    n_tracks: usize,
    /// Row-major `view × track`.
    points: Vec<HomPoint2>,
}

impl CorrespondenceTracks {
    /// `points[i][j]` is track `j` seen in view `i`.
    pub fn new(points: Vec<Vec<HomPoint2>>) -> Result<Self> {
        let n_views = points.len();
        if n_views == 0 {
            return Err(FactorizationError::DimensionMismatch("no views".into()));
        }
        let n_tracks = points[0].len();
        if n_tracks == 0 {
            return Err(FactorizationError::DimensionMismatch("no tracks".into()));
        }
        if points.iter().any(|row| row.len() != n_tracks) {
            return Err(FactorizationError::DimensionMismatch(
                "every view must observe every track".into(),
            ));
        }
        Ok(Self { n_views, n_tracks, points: points.into_iter().flatten().collect() })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_tracks(&self) -> usize {
        self.n_tracks
    }

    pub fn get(&self, view: usize, track: usize) -> &HomPoint2 {
        &self.points[view * self.n_tracks + track]
    }

    pub fn set(&mut self, view: usize, track: usize, p: HomPoint2) {
        self.points[view * self.n_tracks + track] = p;
    }

    pub fn view(&self, view: usize) -> &[HomPoint2] {
        &self.points[view * self.n_tracks..(view + 1) * self.n_tracks]
    }

    /// Applies a 3×3 image transform to every observation.
    pub fn transformed(&self, t: &Matrix3<f64>) -> Result<Self> {
        let points = self
            .points
            .iter()
            .map(|p| HomPoint2::new(t * p.coords()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { points, ..*self })
    }

    /// Keeps only the tracks whose flag is `true`.
    pub fn select_tracks(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n_tracks {
            return Err(FactorizationError::DimensionMismatch("track mask length".into()));
        }
        let rows = (0..self.n_views)
            .map(|i| {
                self.view(i)
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(p, _)| *p)
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::new(rows)
    }
}

/// Projective depths `λ[i][j]`, all nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthAssignment {
    lambdas: DMatrix<f64>,
}

impl DepthAssignment {
    pub fn new(lambdas: DMatrix<f64>) -> Result<Self> {
        if lambdas.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(FactorizationError::InvalidMatrix("projective depths must be finite and nonzero".into()));
        }
        Ok(Self { lambdas })
    }

    pub fn ones(n_views: usize, n_tracks: usize) -> Self {
        Self { lambdas: DMatrix::from_element(n_views, n_tracks, 1.0) }
    }

    pub fn n_views(&self) -> usize {
        self.lambdas.nrows()
    }

    pub fn n_tracks(&self) -> usize {
        self.lambdas.ncols()
    }

    pub fn get(&self, view: usize, track: usize) -> f64 {
        self.lambdas[(view, track)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.lambdas
    }
}

/// A `3n × m` measurement matrix with per-view and per-column validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    entries: DMatrix<f64>,
    row_valid: Vec<bool>,
    col_valid: Vec<bool>,
}

impl MeasurementMatrix {
    /// Validates shape, zero padding, and that no valid column is all zero.
    pub fn new(entries: DMatrix<f64>, row_valid: Vec<bool>, col_valid: Vec<bool>) -> Result<Self> {
        let out = Self::from_parts(entries, row_valid, col_valid)?;
        let block = out.valid_block();
        for j in 0..block.ncols() {
            if block.column(j).iter().all(|&v| v == 0.0) {
                return Err(FactorizationError::InvalidMatrix(format!("valid column {j} is all zero")));
            }
        }
        Ok(out)
    }

    /// Every view and column valid.
    pub fn dense(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() % 3 != 0 {
            return Err(FactorizationError::DimensionMismatch("row count must be a multiple of 3".into()));
        }
        let n = entries.nrows() / 3;
        let m = entries.ncols();
        Self::new(entries, vec![true; n], vec![true; m])
    }

    /// Shape and padding checks only.
    pub(crate) fn from_parts(entries: DMatrix<f64>, row_valid: Vec<bool>, col_valid: Vec<bool>) -> Result<Self> {
        if entries.nrows() != 3 * row_valid.len() || entries.ncols() != col_valid.len() {
            return Err(FactorizationError::DimensionMismatch(format!(
                "{}x{} entries vs {} views / {} columns",
                entries.nrows(),
                entries.ncols(),
                row_valid.len(),
                col_valid.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(FactorizationError::InvalidMatrix("non-finite entry".into()));
        }
        for (j, &cv) in col_valid.iter().enumerate() {
            for (i, &rv) in row_valid.iter().enumerate() {
                if !(cv && rv) && (0..3).any(|r| entries[(3 * i + r, j)] != 0.0) {
                    return Err(FactorizationError::InvalidMatrix(format!(
                        "padding entry at view {i}, column {j} is nonzero"
                    )));
                }
            }
        }
        Ok(Self { entries, row_valid, col_valid })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn row_valid(&self) -> &[bool] {
        &self.row_valid
    }

    pub fn col_valid(&self) -> &[bool] {
        &self.col_valid
    }

    /// Total view slots (`rows / 3`), including padding.
    pub fn n_views(&self) -> usize {
        self.row_valid.len()
    }

    /// Total columns, including padding.
    pub fn n_cols(&self) -> usize {
        self.col_valid.len()
    }

    pub fn valid_views(&self) -> Vec<usize> {
        self.row_valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
    }

    pub fn valid_cols(&self) -> Vec<usize> {
        self.col_valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
    }

    pub fn n_valid_views(&self) -> usize {
        self.row_valid.iter().filter(|&&v| v).count()
    }

    pub fn n_valid_cols(&self) -> usize {
        self.col_valid.iter().filter(|&&v| v).count()
    }

    /// The `3n_valid × m_valid` block carrying data.
    pub fn valid_block(&self) -> DMatrix<f64> {
        let views = self.valid_views();
        let cols = self.valid_cols();
        if views.len() == self.n_views() && cols.len() == self.n_cols() {
            return self.entries.clone();
        }
        DMatrix::from_fn(3 * views.len(), cols.len(), |r, c| self.entries[(3 * views[r / 3] + r % 3, cols[c])])
    }

    /// Copy of `self` with the valid block replaced; padding stays zero.
    pub fn with_valid_block(&self, block: &DMatrix<f64>) -> Result<Self> {
        let views = self.valid_views();
        let cols = self.valid_cols();
        if block.shape() != (3 * views.len(), cols.len()) {
            return Err(FactorizationError::DimensionMismatch("replacement block shape".into()));
        }
        let mut entries = DMatrix::zeros(self.entries.nrows(), self.entries.ncols());
        for (c, &j) in cols.iter().enumerate() {
            for (v, &i) in views.iter().enumerate() {
                for r in 0..3 {
                    entries[(3 * i + r, j)] = block[(3 * v + r, c)];
                }
            }
        }
        Self::from_parts(entries, self.row_valid.clone(), self.col_valid.clone())
    }

    /// Marks the flagged columns invalid and zeroes them.
    pub fn with_columns_excluded(&self, exclude: &[bool]) -> Result<Self> {
        if exclude.len() != self.n_cols() {
            return Err(FactorizationError::DimensionMismatch("exclusion mask length".into()));
        }
        let mut entries = self.entries.clone();
        let mut col_valid = self.col_valid.clone();
        for (j, &ex) in exclude.iter().enumerate() {
            if ex {
                entries.column_mut(j).fill(0.0);
                col_valid[j] = false;
            }
        }
        Self::from_parts(entries, self.row_valid.clone(), col_valid)
    }

    /// Restricted to the valid block with every flag set.
    pub fn compacted(&self) -> Self {
        let block = self.valid_block();
        let n = block.nrows() / 3;
        let m = block.ncols();
        Self { entries: block, row_valid: vec![true; n], col_valid: vec![true; m] }
    }
}

/// Stacks `λᵢⱼ·xᵢⱼ` into a `3n × m` matrix.
pub fn build_measurement_matrix(tracks: &CorrespondenceTracks, depths: &DepthAssignment) -> Result<MeasurementMatrix> {
    if depths.n_views() != tracks.n_views() || depths.n_tracks() != tracks.n_tracks() {
        return Err(FactorizationError::DimensionMismatch(format!(
            "tracks {}x{} vs depths {}x{}",
            tracks.n_views(),
            tracks.n_tracks(),
            depths.n_views(),
            depths.n_tracks()
        )));
    }
    let (n, m) = (tracks.n_views(), tracks.n_tracks());
    let entries = DMatrix::from_fn(3 * n, m, |r, j| {
        let i = r / 3;
        depths.get(i, j) * tracks.get(i, j).coords()[r % 3]
    });
    MeasurementMatrix::new(entries, vec![true; n], vec![true; m])
}

/// A rank-2 fundamental matrix with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn entries(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Wraps an arbitrary 3×3 matrix; rank is checked by [`epipole`].
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// `x_bᵀ·F·x_a`
    pub fn residual(&self, a: &HomPoint2, b: &HomPoint2) -> f64 {
        b.coords().dot(&(self.0 * a.coords()))
    }
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley_normalization(pts: &[nalgebra::Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized 8-point estimate of `F` with `x_bᵀ·F·x_a = 0`.
pub fn estimate_fundamental(pts_a: &[HomPoint2], pts_b: &[HomPoint2]) -> Result<FundamentalMatrix> {
    if pts_a.len() != pts_b.len() {
        return Err(FactorizationError::DimensionMismatch("correspondence lists differ in length".into()));
    }
    if pts_a.len() < 8 {
        return Err(FactorizationError::InsufficientPoints { required: 8, got: pts_a.len() });
    }
    let a = pts_a.iter().map(|p| p.dehomogenize()).collect::<std::result::Result<Vec<_>, _>>()?;
    let b = pts_b.iter().map(|p| p.dehomogenize()).collect::<std::result::Result<Vec<_>, _>>()?;
    let ta = hartley_normalization(&a);
    let tb = hartley_normalization(&b);
    let na: Vec<Vector3<f64>> = a.iter().map(|p| ta * Vector3::new(p.x, p.y, 1.0)).collect();
    let nb: Vec<Vector3<f64>> = b.iter().map(|p| tb * Vector3::new(p.x, p.y, 1.0)).collect();

    for pts in [&na, &nb] {
        let sv = DMatrix::from_fn(3, pts.len(), |r, c| pts[c][r]).singular_values();
        if sv[2] <= 1e-10 * sv[0] {
            return Err(FactorizationError::DegenerateConfiguration("points are collinear"));
        }
    }

    let rows = na.len().max(9);
    let mut design = DMatrix::zeros(rows, 9);
    for (k, (x, y)) in na.iter().zip(&nb).enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                design[(k, 3 * r + c)] = y[r] * x[c];
            }
        }
    }
    let svd = ThinSvd::new(&design);
    let s = &svd.singular_values;
    let numerical_rank = s.iter().filter(|&&v| v > 1e-10 * s[0]).count();
    // Pure rotation leaves a 3-dimensional solution family (rank 6); every
    // member still satisfies the epipolar constraint, so only rank < 6 is fatal.
    if numerical_rank < 6 {
        return Err(FactorizationError::DegenerateConfiguration("design matrix rank below 6"));
    }
    let f_vec = svd.v.column(8);
    let f_norm = DMatrix::from_fn(3, 3, |r, c| f_vec[3 * r + c]);
    let f_rank2 = ThinSvd::new(&f_norm).truncated(2);
    let mut f = tb.transpose() * Matrix3::from_fn(|r, c| f_rank2[(r, c)]) * ta;
    let norm = f.norm();
    f /= norm;
    let mut best = (0, 0);
    for r in 0..3 {
        for c in 0..3 {
            if f[(r, c)].abs() > f[best].abs() {
                best = (r, c);
            }
        }
    }
    if f[best] < 0.0 {
        f = -f;
    }
    Ok(FundamentalMatrix(f))
}

/// Left null vector `e'` with `Fᵀ·e' = 0`, unit norm.
pub fn epipole(f: &FundamentalMatrix) -> Result<HomPoint2> {
    let svd = ThinSvd::new(&DMatrix::from_fn(3, 3, |r, c| f.0[(r, c)]));
    let s = &svd.singular_values;
    if s[0] == 0.0 || s[1] / s[0] < RANK_DEFICIENCY_TOL {
        return Err(FactorizationError::FundamentalRankDeficient);
    }
    let mut e = Vector3::new(svd.u[(0, 2)], svd.u[(1, 2)], svd.u[(2, 2)]);
    let mut best = 0;
    for i in 1..3 {
        if e[i].abs() > e[best].abs() {
            best = i;
        }
    }
    if e[best] < 0.0 {
        e = -e;
    }
    Ok(HomPoint2::new(e / e.norm())?)
}

/// How projective depths are initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthStrategy {
    Unit,
    GroundTruth(DepthAssignment),
    /// Pairwise against view 1 through `F¹ⁱ` and its epipole.
    FundamentalChain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    pub depths: DepthAssignment,
    /// Tracks whose propagated depth vanished; their entries hold a
    /// placeholder of 1 and should be excluded from the measurement matrix.
    pub degenerate_tracks: Vec<bool>,
}

pub fn estimate_depths(tracks: &CorrespondenceTracks, strategy: &DepthStrategy) -> Result<DepthEstimate> {
    let (n, m) = (tracks.n_views(), tracks.n_tracks());
    match strategy {
        DepthStrategy::Unit => Ok(DepthEstimate { depths: DepthAssignment::ones(n, m), degenerate_tracks: vec![false; m] }),
        DepthStrategy::GroundTruth(d) => {
            if d.n_views() != n || d.n_tracks() != m {
                return Err(FactorizationError::DimensionMismatch("ground-truth depth shape".into()));
            }
            Ok(DepthEstimate { depths: d.clone(), degenerate_tracks: vec![false; m] })
        }
        DepthStrategy::FundamentalChain => {
            if n < 2 {
                return Err(FactorizationError::DimensionMismatch("fundamental chain needs at least 2 views".into()));
            }
            propagate_depths(tracks, &vec![1.0; m])
        }
    }
}

/// Sturm/Triggs depth transfer from view 1:
/// `λⱼⁱ = λⱼ¹ · ((e × xⱼⁱ)·(F xⱼ¹)) / ‖e × xⱼⁱ‖²`.
pub fn propagate_depths(tracks: &CorrespondenceTracks, first_view_depths: &[f64]) -> Result<DepthEstimate> {
    let (n, m) = (tracks.n_views(), tracks.n_tracks());
    if first_view_depths.len() != m {
        return Err(FactorizationError::DimensionMismatch("first-view depth count".into()));
    }
    let mut lambdas = DMatrix::zeros(n, m);
    let mut degenerate = vec![false; m];
    for (j, &d) in first_view_depths.iter().enumerate() {
        lambdas[(0, j)] = d;
        if d.abs() < DEGENERATE_DEPTH_TOL {
            degenerate[j] = true;
        }
    }
    for i in 1..n {
        let f = estimate_fundamental(tracks.view(0), tracks.view(i))?;
        let e = *epipole(&f)?.coords();
        for j in 0..m {
            let xi = tracks.get(i, j).coords();
            let x1 = tracks.get(0, j).coords();
            let ex = e.cross(xi);
            let denom = ex.norm_squared();
            let scale = xi.norm_squared();
            let lambda = if denom <= 1e-20 * scale { 0.0 } else { lambdas[(0, j)] * ex.dot(&(f.entries() * x1)) / denom };
            if lambda.abs() < DEGENERATE_DEPTH_TOL || !lambda.is_finite() {
                degenerate[j] = true;
            }
            lambdas[(i, j)] = lambda;
        }
    }
    for j in 0..m {
        if degenerate[j] {
            lambdas.column_mut(j).fill(1.0);
        }
    }
    Ok(DepthEstimate { depths: DepthAssignment::new(lambdas)?, degenerate_tracks: degenerate })
}

fn check_rank4_dims(block: &DMatrix<f64>) -> Result<()> {
    if block.nrows().min(block.ncols()) < 4 {
        return Err(FactorizationError::DimensionMismatch(format!(
            "valid block {}x{} is too small for a rank-4 projection",
            block.nrows(),
            block.ncols()
        )));
    }
    Ok(())
}

/// Frobenius-nearest rank-≤4 matrix on the valid block.
pub fn rank4_project(m: &MeasurementMatrix) -> Result<MeasurementMatrix> {
    let block = m.valid_block();
    check_rank4_dims(&block)?;
    let svd = ThinSvd::new(&block);
    m.with_valid_block(&svd.truncated(4))
}

/// Singular values of the valid block, descending.
pub fn valid_singular_values(m: &MeasurementMatrix) -> Vec<f64> {
    ThinSvd::new(&m.valid_block()).singular_values.iter().copied().collect()
}

/// Cameras `U·D̂^{1/2}` and points `D̂^{1/2}·Vᵀ` from a dense `3n × m` block.
pub(crate) fn factorize_block(block: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_rank4_dims(block)?;
    let svd = ThinSvd::new(block);
    factors_from_svd(&svd)
}

pub(crate) fn factors_from_svd(svd: &ThinSvd) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = &svd.singular_values;
    if s.len() < 4 {
        return Err(FactorizationError::DimensionMismatch("fewer than four singular values".into()));
    }
    if s[0] == 0.0 || s[3] / s[0] < RANK_DEFICIENCY_TOL {
        return Err(FactorizationError::RankDeficient(if s[0] == 0.0 { 0.0 } else { s[3] / s[0] }));
    }
    let mut cams = svd.u.columns(0, 4).into_owned();
    let mut pts = svd.v.columns(0, 4).transpose();
    for k in 0..4 {
        let r = s[k].sqrt();
        cams.column_mut(k).scale_mut(r);
        pts.row_mut(k).scale_mut(r);
    }
    Ok((cams, pts))
}

fn reconstruction_from_factors(cams: &DMatrix<f64>, pts: &DMatrix<f64>) -> Result<ProjectiveReconstruction> {
    let n = cams.nrows() / 3;
    let cameras = (0..n)
        .map(|i| CameraMatrix::new(cams.fixed_view::<3, 4>(3 * i, 0).into_owned()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let points = (0..pts.ncols())
        .map(|j| HomPoint3::new(pts.fixed_view::<4, 1>(0, j).into_owned()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ProjectiveReconstruction::new(cameras, points))
}

/// Sturm/Triggs factorization of the valid block.
///
/// Cameras are returned for valid views and points for valid columns, in
/// their original order.
pub fn sturm_triggs_factorize(m: &MeasurementMatrix) -> Result<ProjectiveReconstruction> {
    let (cams, pts) = factorize_block(&m.valid_block())?;
    reconstruction_from_factors(&cams, &pts)
}

/// The homography `H = [P¹; r]` with `r` the unit null vector of `P¹`.
pub fn first_camera_homography(first: &nalgebra::Matrix3x4<f64>) -> Result<Matrix4<f64>> {
    let mut r = null_vector_3x4(first).ok_or(FactorizationError::DegenerateFirstCamera)?;
    let mut best = 0;
    for i in 1..4 {
        if r[i].abs() > r[best].abs() {
            best = i;
        }
    }
    if r[best] < 0.0 {
        r = -r;
    }
    let mut h = Matrix4::zeros();
    h.fixed_view_mut::<3, 4>(0, 0).copy_from(first);
    h.fixed_view_mut::<1, 4>(3, 0).copy_from(&r.transpose());
    Ok(h)
}

/// Moves the reconstruction into the frame where the first camera is `[I | 0]`.
pub fn normalize_first_camera(recon: &ProjectiveReconstruction) -> Result<ProjectiveReconstruction> {
    let first = recon.cameras.first().ok_or(FactorizationError::DegenerateFirstCamera)?;
    let h = first_camera_homography(first.entries())?;
    let h = Homography4::new(h).map_err(|_| FactorizationError::DegenerateFirstCamera)?;
    let mut out = recon.apply_homography(&h)?;
    // Exact by construction; clean up round-off.
    out.cameras[0] = CameraMatrix::canonical();
    Ok(out)
}

/// `‖(M − P·X)·diag(w)‖_F` over the valid block; `w` has one entry per column
/// of `m` (padding included).
pub fn weighted_reprojection_residual(m: &MeasurementMatrix, recon: &ProjectiveReconstruction, w: &[f64]) -> Result<f64> {
    if w.len() != m.n_cols() {
        return Err(FactorizationError::DimensionMismatch("weight vector length".into()));
    }
    let block = m.valid_block();
    let cols = m.valid_cols();
    if recon.n_views() * 3 != block.nrows() || recon.n_points() != block.ncols() {
        return Err(FactorizationError::DimensionMismatch("reconstruction does not match valid block".into()));
    }
    let diff = block - recon.camera_stack() * recon.point_matrix();
    let mut acc = 0.0;
    for (c, &j) in cols.iter().enumerate() {
        acc += w[j] * w[j] * diff.column(c).norm_squared();
    }
    Ok(acc.sqrt())
}
