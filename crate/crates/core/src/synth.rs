//! Randomized synthetic scenes with full ground truth.
//!
//! Protocol: every view gets per-axis rotation angles uniform in
//! `[-0.4, 0.4]` rad (composed about x, then y, then z) and a translation
//! uniform in `[-1, 1]³`; points are uniform in `[-1, 1] × [-1, 1] × [2, 4]`.
//! Cameras are `K·[R | t]` and the true projective depth of an observation is
//! the camera-frame z coordinate.
//!
//! Randomness comes from ChaCha8 seeded with the scene seed, with one stream
//! per purpose ([`STREAM_SCENE`], [`STREAM_OUTLIERS`], [`STREAM_NOISE`]), so
//! changing the outlier rate never perturbs the geometry and vice versa.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::factorization::{
    build_measurement_matrix, normalize_first_camera, sturm_triggs_factorize, CorrespondenceTracks, DepthAssignment,
    FactorizationError, MeasurementMatrix,
};
use crate::geometry::{project_point, CameraMatrix, HomPoint2, HomPoint3, ProjectiveReconstruction};
use crate::selfcalib::{ImageFrame, Intrinsics, PlaneAtInfinity};

pub const STREAM_SCENE: u64 = 1;
pub const STREAM_OUTLIERS: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

pub const ROTATION_RANGE: f64 = 0.4;
pub const TRANSLATION_RANGE: f64 = 1.0;
pub const POINT_XY_RANGE: f64 = 1.0;
pub const POINT_Z_RANGE: (f64, f64) = (2.0, 4.0);
pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("point {0} stayed behind a camera after {MAX_RESAMPLES} resamples")]
    BehindCamera(usize),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
}

type Result<T> = std::result::Result<T, SynthError>;

/// Deterministic generator for one purpose of one seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_k() -> [[f64; 3]; 3] {
    [[800.0, 0.0, 320.0], [0.0, 800.0, 240.0], [0.0, 0.0, 1.0]]
}

fn default_image_size() -> [f64; 2] {
    [640.0, 480.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub n_views: usize,
    pub m_points: usize,
    /// Fraction of tracks turned into outliers, `δ ∈ [0, 1)`.
    #[serde(default)]
    pub outlier_rate: f64,
    /// Noise standard deviation as a fraction of the matrix RMS (0.006 for 0.6 %).
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pad_rows: Option<usize>,
    #[serde(default)]
    pub pad_cols: Option<usize>,
    #[serde(default = "default_k", rename = "K_true")]
    pub k_true: [[f64; 3]; 3],
    #[serde(default = "default_image_size")]
    pub image_size: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_views: 10,
            m_points: 200,
            outlier_rate: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            pad_rows: None,
            pad_cols: None,
            k_true: default_k(),
            image_size: default_image_size(),
        }
    }
}

impl SceneConfig {
    pub fn n_outliers(&self) -> usize {
        (self.outlier_rate * self.m_points as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_views < 2 {
            return bad(format!("n_views must be >= 2, got {}", self.n_views));
        }
        if self.m_points < 8 {
            return bad(format!("m_points must be >= 8, got {}", self.m_points));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate must be in [0, 1), got {}", self.outlier_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let k = self.n_outliers();
        if k + 8 > self.m_points {
            return bad(format!("{k} outliers leave fewer than 8 inliers out of {}", self.m_points));
        }
        if k == 1 {
            return bad("exactly one outlier cannot be produced by exchanging observations".into());
        }
        if let Some(r) = self.pad_rows {
            if r < 3 * self.n_views || r % 3 != 0 {
                return bad(format!("pad_rows {r} must be a multiple of 3 and >= {}", 3 * self.n_views));
            }
        }
        if let Some(c) = self.pad_cols {
            if c < self.m_points {
                return bad(format!("pad_cols {c} must be >= {}", self.m_points));
            }
        }
        self.intrinsics()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(Matrix3::from_fn(|r, c| self.k_true[r][c]))
            .map_err(|e| SynthError::InvalidConfig(format!("K_true: {e}")))
    }

    /// Similarity taking pixels to the normalized frame: image center to the
    /// origin, longest image side to unit length.
    pub fn normalization(&self) -> Matrix3<f64> {
        image_normalization(self.image_size)
    }
}

pub fn image_normalization(image_size: [f64; 2]) -> Matrix3<f64> {
    let [w, h] = image_size;
    let s = 1.0 / w.max(h);
    Matrix3::new(s, 0.0, -0.5 * w * s, 0.0, s, -0.5 * h * s, 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub config: SceneConfig,
    pub points_metric: Vec<HomPoint3>,
    pub cameras_metric: Vec<CameraMatrix>,
    /// Depths of the observations actually stored in `tracks` (exchanged with them).
    pub depths_true: DepthAssignment,
    pub inlier_mask_true: Vec<bool>,
    /// Pixel-frame observations, possibly contaminated.
    pub tracks: CorrespondenceTracks,
    pub k_true: Intrinsics,
    /// Plane at infinity in the frame of the clean normalized-image
    /// factorization after first-camera normalization.
    pub n_inf_true: PlaneAtInfinity,
}

/// A camera pose `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.set_column(3, &self.translation);
        m
    }

    /// Camera-frame z coordinate of a Euclidean point.
    pub fn depth_of(&self, p: &Vector3<f64>) -> f64 {
        (self.rotation * p + self.translation).z
    }
}

pub fn sample_pose<R: Rng>(rng: &mut R) -> Pose {
    let ax = rng.random_range(-ROTATION_RANGE..=ROTATION_RANGE);
    let ay = rng.random_range(-ROTATION_RANGE..=ROTATION_RANGE);
    let az = rng.random_range(-ROTATION_RANGE..=ROTATION_RANGE);
    let t = Vector3::new(
        rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
        rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
        rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE),
    );
    // from_euler_angles(roll, pitch, yaw) = Rz(yaw)·Ry(pitch)·Rx(roll)
    Pose { rotation: Rotation3::from_euler_angles(ax, ay, az), translation: t }
}

pub fn sample_point<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-POINT_XY_RANGE..=POINT_XY_RANGE),
        rng.random_range(-POINT_XY_RANGE..=POINT_XY_RANGE),
        rng.random_range(POINT_Z_RANGE.0..=POINT_Z_RANGE.1),
    )
}

/// Projects metric points through the given poses.
pub fn scene_from_poses(
    config: &SceneConfig,
    poses: &[Pose],
    points: &[Vector3<f64>],
) -> Result<GroundTruthScene> {
    let k = config.intrinsics()?;
    let cameras: Vec<CameraMatrix> = poses
        .iter()
        .map(|p| CameraMatrix::new(k.matrix() * p.matrix()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| SynthError::InvalidConfig(format!("camera: {e}")))?;
    let (n, m) = (poses.len(), points.len());
    let mut depths = DMatrix::zeros(n, m);
    let mut rows = Vec::with_capacity(n);
    for (i, cam) in cameras.iter().enumerate() {
        let mut row = Vec::with_capacity(m);
        for (j, p) in points.iter().enumerate() {
            depths[(i, j)] = poses[i].depth_of(p);
            let img = project_point(cam, &HomPoint3::from_euclidean(p))
                .map_err(|e| SynthError::InvalidConfig(format!("projection: {e}")))?;
            let px = img.dehomogenize().map_err(|_| SynthError::BehindCamera(j))?;
            row.push(HomPoint2::from_euclidean(px.x, px.y));
        }
        rows.push(row);
    }
    let tracks = CorrespondenceTracks::new(rows)?;
    let depths_true = DepthAssignment::new(depths)?;
    let mut scene = GroundTruthScene {
        config: config.clone(),
        points_metric: points.iter().map(HomPoint3::from_euclidean).collect(),
        cameras_metric: cameras,
        depths_true,
        inlier_mask_true: vec![true; m],
        tracks,
        k_true: k,
        n_inf_true: PlaneAtInfinity::zero(),
    };
    scene.n_inf_true = scene.clean_plane_at_infinity()?;
    Ok(scene)
}

/// Samples poses and points; no contamination.
pub fn generate_scene(config: &SceneConfig) -> Result<GroundTruthScene> {
    config.validate()?;
    let mut rng = rng_for(config.seed, STREAM_SCENE);
    let poses: Vec<Pose> = (0..config.n_views).map(|_| sample_pose(&mut rng)).collect();
    let mut points = Vec::with_capacity(config.m_points);
    for j in 0..config.m_points {
        let mut accepted = None;
        for _ in 0..=MAX_RESAMPLES {
            let p = sample_point(&mut rng);
            if poses.iter().all(|pose| pose.depth_of(&p) > MIN_DEPTH) {
                accepted = Some(p);
                break;
            }
        }
        points.push(accepted.ok_or(SynthError::BehindCamera(j))?);
    }
    scene_from_poses(config, &poses, &points)
}

/// Exchanges observations among `⌊δ·m⌋` randomly selected tracks.
///
/// One uniformly chosen anchor view stays untouched (always the first view
/// when there are only two); in every other view the selected tracks'
/// observations are moved along a fresh random cycle through the whole
/// selected set, a derangement, so each selected track receives another
/// selected track's point there. Depths travel with the observations.
pub fn inject_outliers(scene: &GroundTruthScene) -> Result<GroundTruthScene> {
    let cfg = &scene.config;
    let n_out = cfg.n_outliers();
    let mut out = scene.clone();
    out.inlier_mask_true = vec![true; cfg.m_points];
    if n_out == 0 {
        return Ok(out);
    }
    if n_out < 2 {
        return Err(SynthError::InvalidConfig("need at least two outliers to exchange".into()));
    }
    let n = cfg.n_views;
    let mut rng = rng_for(cfg.seed, STREAM_OUTLIERS);
    let selected = rand::seq::index::sample(&mut rng, cfg.m_points, n_out).into_vec();

    // With two views the only non-first view must be exchanged.
    let anchor = if n == 2 { 0 } else { rng.random_range(0..n) };
    let views: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();

    use rand::seq::SliceRandom;
    let mut depths = scene.depths_true.as_matrix().clone();
    for &i in &views {
        let mut cycle = selected.clone();
        cycle.shuffle(&mut rng);
        let obs: Vec<_> = cycle.iter().map(|&j| (*scene.tracks.get(i, j), depths[(i, j)])).collect();
        for (k, &j) in cycle.iter().enumerate() {
            let (p, d) = obs[(k + 1) % cycle.len()];
            out.tracks.set(i, j, p);
            depths[(i, j)] = d;
        }
    }
    for &j in &selected {
        out.inlier_mask_true[j] = false;
    }
    out.depths_true = DepthAssignment::new(depths)?;
    Ok(out)
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma × RMS(valid entries)`.
pub fn add_noise(m: &MeasurementMatrix, sigma: f64, seed: u64) -> MeasurementMatrix {
    if sigma == 0.0 {
        return m.clone();
    }
    let block = m.valid_block();
    let rms = (block.norm_squared() / block.len().max(1) as f64).sqrt();
    let std = sigma * rms;
    let mut rng = rng_for(seed, STREAM_NOISE);
    let noisy = block.map(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + std * z
    });
    m.with_valid_block(&noisy).expect("same shape")
}

/// Embeds the matrix into a `rows × cols` zero matrix.
pub fn pad_matrix(m: &MeasurementMatrix, rows: usize, cols: usize) -> std::result::Result<MeasurementMatrix, FactorizationError> {
    let (r, c) = m.entries().shape();
    if rows < r || cols < c || rows % 3 != 0 {
        return Err(FactorizationError::DimensionMismatch(format!(
            "cannot pad {r}x{c} to {rows}x{cols} (rows must be a multiple of 3)"
        )));
    }
    let mut entries = DMatrix::zeros(rows, cols);
    entries.view_mut((0, 0), (r, c)).copy_from(m.entries());
    let mut row_valid = m.row_valid().to_vec();
    row_valid.resize(rows / 3, false);
    let mut col_valid = m.col_valid().to_vec();
    col_valid.resize(cols, false);
    MeasurementMatrix::new(entries, row_valid, col_valid)
}

impl GroundTruthScene {
    /// Observations expressed in the requested image frame.
    pub fn tracks_in(&self, frame: ImageFrame) -> CorrespondenceTracks {
        match frame {
            ImageFrame::Pixel => self.tracks.clone(),
            ImageFrame::Normalized => self.tracks.transformed(&self.config.normalization()).expect("similarity keeps points nonzero"),
        }
    }

    pub fn k_in(&self, frame: ImageFrame) -> Intrinsics {
        match frame {
            ImageFrame::Pixel => self.k_true,
            ImageFrame::Normalized => self.k_true.transformed(&self.config.normalization()).expect("similarity keeps K valid"),
        }
    }

    /// Measurement matrix from the stored tracks and true depths, no noise.
    pub fn measurement_matrix(&self, frame: ImageFrame) -> MeasurementMatrix {
        build_measurement_matrix(&self.tracks_in(frame), &self.depths_true).expect("shapes agree by construction")
    }

    /// Tracks re-projected from the metric ground truth (before contamination).
    pub fn clean_tracks(&self) -> CorrespondenceTracks {
        let rows = self
            .cameras_metric
            .iter()
            .map(|c| {
                self.points_metric
                    .iter()
                    .map(|p| {
                        let px = project_point(c, p).and_then(|x| x.dehomogenize()).expect("validated depths");
                        HomPoint2::from_euclidean(px.x, px.y)
                    })
                    .collect()
            })
            .collect();
        CorrespondenceTracks::new(rows).expect("rectangular")
    }

    /// Clean depths `z` of every metric point in every view.
    pub fn clean_depths(&self) -> DepthAssignment {
        let k_inv = self.k_true.matrix().try_inverse().expect("valid K");
        let lambdas = DMatrix::from_fn(self.cameras_metric.len(), self.points_metric.len(), |i, j| {
            (k_inv * self.cameras_metric[i].entries() * self.points_metric[j].coords()).z
        });
        DepthAssignment::new(lambdas).expect("positive depths")
    }

    /// Normalized-frame projective reconstruction of the clean scene with
    /// first camera `[I | 0]`.
    pub fn clean_projective_reconstruction(&self) -> Result<ProjectiveReconstruction> {
        let tracks = self.clean_tracks().transformed(&self.config.normalization())?;
        let m = build_measurement_matrix(&tracks, &self.clean_depths())?;
        Ok(normalize_first_camera(&sturm_triggs_factorize(&m)?)?)
    }

    fn clean_plane_at_infinity(&self) -> Result<PlaneAtInfinity> {
        let recon = self.clean_projective_reconstruction()?;
        Ok(plane_at_infinity_from_metric(&recon.points, &self.points_metric)
            .ok_or_else(|| SynthError::InvalidConfig("could not align projective and metric points".into()))?)
    }
}

/// `n∞` of a projective frame, given its points and their metric positions.
///
/// Fits `X_metric ∼ G·X_proj` by DLT, then `Π∞ = Gᵀ·(0,0,0,1)ᵀ`.
pub fn plane_at_infinity_from_metric(projective: &[HomPoint3], metric: &[HomPoint3]) -> Option<PlaneAtInfinity> {
    let g = crate::eval::estimate_homography_3d(projective, metric).ok()?;
    let pi = g.transpose() * nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0);
    if pi.w.abs() < 1e-12 * pi.norm() {
        return None;
    }
    Some(PlaneAtInfinity(pi.xyz() / pi.w))
}

/// One end-to-end synthetic instance: scene, contamination, noise, padding.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub scene: GroundTruthScene,
    /// Measurement matrix in the normalized image frame.
    pub matrix: MeasurementMatrix,
}

pub fn synthesize(config: &SceneConfig) -> Result<SyntheticInstance> {
    let scene = inject_outliers(&generate_scene(config)?)?;
    let mut matrix = add_noise(&scene.measurement_matrix(ImageFrame::Normalized), config.noise_sigma, config.seed);
    if config.pad_rows.is_some() || config.pad_cols.is_some() {
        let rows = config.pad_rows.unwrap_or(3 * config.n_views);
        let cols = config.pad_cols.unwrap_or(config.m_points);
        matrix = pad_matrix(&matrix, rows, cols)?;
    }
    Ok(SyntheticInstance { scene, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_one_rejected() {
        let cfg = SceneConfig { outlier_rate: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_outlier_rejected() {
        let cfg = SceneConfig { m_points: 20, outlier_rate: 0.05, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_pose_depths_are_z() {
        let pose = Pose::identity();
        let mut rng = rng_for(3, STREAM_SCENE);
        for _ in 0..100 {
            let p = sample_point(&mut rng);
            assert_eq!(pose.depth_of(&p), p.z);
            assert!((2.0..=4.0).contains(&p.z));
        }
    }

    #[test]
    fn streams_are_independent() {
        let a: u64 = rng_for(5, STREAM_SCENE).random();
        let b: u64 = rng_for(5, STREAM_NOISE).random();
        assert_ne!(a, b);
        let c: u64 = rng_for(5, STREAM_SCENE).random();
        assert_eq!(a, c);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let cfg = SceneConfig { n_views: 3, m_points: 10, ..Default::default() };
        let s = generate_scene(&cfg).unwrap();
        let m = s.measurement_matrix(ImageFrame::Normalized);
        assert_eq!(add_noise(&m, 0.0, 1), m);
    }
}
