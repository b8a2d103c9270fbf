//! Metrics: inlier F1, 2D reprojection error, aligned 3D error, focal error,
//! plus aggregation of sweep trials.

use nalgebra::{DMatrix, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::factorization::CorrespondenceTracks;
use crate::geometry::{project_point, HomPoint3, ProjectiveReconstruction};
use crate::linalg::ThinSvd;
use crate::selfcalib::{CalibrationEstimate, Intrinsics};
use crate::synth::GroundTruthScene;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least {required} points for alignment, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("alignment is singular")]
    SingularAlignment,
    #[error("no observation could be evaluated")]
    NothingEvaluated,
}

type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Precision/recall/F1 with "inlier" as the positive class.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> Result<ClassificationReport> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(format!("pred {} vs truth {}", pred.len(), truth.len())));
    }
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fneg);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(ClassificationReport { precision, recall, f1, true_positives: tp, false_positives: fp, false_negatives: fneg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Error2d {
    pub value: f64,
    /// Observations dropped because they projected degenerately.
    pub excluded: usize,
}

/// Per-point RMS reprojection distance over views, averaged over masked points.
pub fn error_2d(recon: &ProjectiveReconstruction, tracks: &CorrespondenceTracks, eval_mask: &[bool]) -> Result<Error2d> {
    let (n, m) = (tracks.n_views(), tracks.n_tracks());
    if recon.n_views() != n || recon.n_points() != m || eval_mask.len() != m {
        return Err(EvalError::LengthMismatch(format!(
            "reconstruction {}x{}, tracks {n}x{m}, mask {}",
            recon.n_views(),
            recon.n_points(),
            eval_mask.len()
        )));
    }
    let mut total = 0.0;
    let mut points = 0usize;
    let mut excluded = 0usize;
    for j in (0..m).filter(|&j| eval_mask[j]) {
        let mut sq = 0.0;
        let mut used = 0usize;
        for i in 0..n {
            let proj = project_point(&recon.cameras[i], &recon.points[j]).and_then(|x| x.dehomogenize());
            let obs = tracks.get(i, j).dehomogenize();
            match (proj, obs) {
                (Ok(p), Ok(o)) => {
                    sq += (p - o).norm_squared();
                    used += 1;
                }
                _ => excluded += 1,
            }
        }
        if used > 0 {
            total += (sq / used as f64).sqrt();
            points += 1;
        }
    }
    if points == 0 {
        return Err(EvalError::NothingEvaluated);
    }
    Ok(Error2d { value: total / points as f64, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Homography,
    /// Similarity; a mirror-image fit is allowed.
    Similarity,
}

/// Similarity `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * x + self.translation
    }
}

fn euclidean(points: &[HomPoint3]) -> Result<Vec<Vector3<f64>>> {
    points.iter().map(|p| p.dehomogenize().map_err(|_| EvalError::SingularAlignment)).collect()
}

/// Centroid/scale conditioning so the mean distance to the origin is √3.
fn conditioning(points: &[Vector3<f64>]) -> Matrix4<f64> {
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64;
    let d = points.iter().map(|p| (p - c).norm()).sum::<f64>() / points.len() as f64;
    let s = if d > 0.0 { 3f64.sqrt() / d } else { 1.0 };
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-s * c));
    t
}

/// DLT estimate of the 4×4 `H` with `dst ∼ H·src`.
pub fn estimate_homography_3d(src: &[HomPoint3], dst: &[HomPoint3]) -> Result<Matrix4<f64>> {
    if src.len() != dst.len() {
        return Err(EvalError::LengthMismatch(format!("{} vs {}", src.len(), dst.len())));
    }
    if src.len() < 5 {
        return Err(EvalError::InsufficientPoints { required: 5, got: src.len() });
    }
    let dst_e = euclidean(dst)?;
    let t_dst = conditioning(&dst_e);
    // Projective inputs may sit near infinity; condition them only when finite.
    let t_src = match src.iter().map(|p| p.dehomogenize()).collect::<std::result::Result<Vec<_>, _>>() {
        Ok(e) => conditioning(&e),
        Err(_) => Matrix4::identity(),
    };
    let rows = (3 * src.len()).max(16);
    let mut a = DMatrix::zeros(rows, 16);
    for (j, (x, y)) in src.iter().zip(&dst_e).enumerate() {
        let mut xs = t_src * x.coords();
        xs /= xs.norm();
        let yh = t_dst * Vector4::new(y.x, y.y, y.z, 1.0);
        for k in 0..3 {
            let r = 3 * j + k;
            for c in 0..4 {
                a[(r, 4 * k + c)] = yh[3] * xs[c];
                a[(r, 12 + c)] = -yh[k] * xs[c];
            }
        }
    }
    let svd = ThinSvd::new(&a);
    let s = &svd.singular_values;
    if s[14] <= 1e-12 * s[0] {
        return Err(EvalError::SingularAlignment);
    }
    let h = svd.v.column(15);
    let hn = Matrix4::from_fn(|r, c| h[4 * r + c]);
    let t_dst_inv = t_dst.try_inverse().ok_or(EvalError::SingularAlignment)?;
    let out = t_dst_inv * hn * t_src;
    if out.determinant().abs() <= 1e-14 * out.norm().powi(4) {
        return Err(EvalError::SingularAlignment);
    }
    Ok(out / out.norm())
}

/// Least-squares similarity from `src` to `dst` (Umeyama), proper rotation.
pub fn estimate_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    umeyama(src, dst, false)
}

/// Like [`estimate_similarity`] but the orthogonal part may be a reflection.
///
/// Uncalibrated reconstructions do not fix handedness, so a correct metric
/// upgrade can be the mirror image of the truth.
pub fn estimate_similarity_o3(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    umeyama(src, dst, true)
}

fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], allow_reflection: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(EvalError::LengthMismatch(format!("{} vs {}", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(EvalError::InsufficientPoints { required: 3, got: src.len() });
    }
    let n = src.len() as f64;
    let mu_s = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mu_d = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
        var_s += (s - mu_s).norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s <= 0.0 {
        return Err(EvalError::SingularAlignment);
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if !allow_reflection && (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let trace_ds: f64 = (0..3).map(|k| svd.singular_values[k] * d[(k, k)]).sum();
    let scale = trace_ds / var_s;
    Ok(Similarity { scale, rotation, translation: mu_d - scale * rotation * mu_s })
}

/// Mean relative error `‖X_aligned − X_gt‖ / ‖X_gt‖` over masked points.
pub fn error_3d(est: &[HomPoint3], truth: &[HomPoint3], mask: &[bool], alignment: Alignment) -> Result<f64> {
    if est.len() != truth.len() || mask.len() != est.len() {
        return Err(EvalError::LengthMismatch(format!("{} est, {} truth, {} mask", est.len(), truth.len(), mask.len())));
    }
    let idx: Vec<usize> = (0..est.len()).filter(|&j| mask[j]).collect();
    let e: Vec<HomPoint3> = idx.iter().map(|&j| est[j]).collect();
    let t: Vec<HomPoint3> = idx.iter().map(|&j| truth[j]).collect();
    let t_e = euclidean(&t)?;
    let aligned: Vec<Vector3<f64>> = match alignment {
        Alignment::Homography => {
            let h = estimate_homography_3d(&e, &t)?;
            e.iter()
                .map(|x| {
                    let y = h * x.coords();
                    if y.w.abs() <= 1e-300 {
                        Vector3::repeat(f64::INFINITY)
                    } else {
                        y.xyz() / y.w
                    }
                })
                .collect()
        }
        Alignment::Similarity => {
            let e_e = euclidean(&e)?;
            let sim = estimate_similarity_o3(&e_e, &t_e)?;
            e_e.iter().map(|x| sim.apply(x)).collect()
        }
    };
    let sum: f64 = aligned.iter().zip(&t_e).map(|(a, g)| (a - g).norm() / g.norm()).sum();
    Ok(sum / idx.len() as f64)
}

/// `|f_est − f_true| / f_true` with `f = (fx + fy)/2`.
pub fn focal_error(k_est: &Intrinsics, k_true: &Intrinsics) -> f64 {
    let (fe, ft) = (k_est.mean_focal(), k_true.mean_focal());
    (fe - ft).abs() / ft
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub error_2d_px: f64,
    pub error_3d_rel: f64,
    pub focal_error_rel: f64,
    pub alignment_used: Alignment,
}

/// Which tracks the 2D error averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Error2dMask {
    /// Ground-truth inliers (synthetic data only).
    #[default]
    TrueInliers,
    /// Tracks the method classified as inliers.
    PredictedInliers,
    All,
}

/// Metrics of one method output against a synthetic ground truth; a metric
/// is `None` when its input is missing or it could not be computed, with
/// the reason in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvaluation {
    pub classification: Option<ClassificationReport>,
    pub error_2d_px: Option<f64>,
    pub error_3d_rel: Option<f64>,
    pub focal_error_rel: Option<f64>,
    pub alignment_used: Alignment,
    pub notes: Vec<String>,
}

impl SceneEvaluation {
    pub fn report(&self) -> Option<ReconstructionReport> {
        Some(ReconstructionReport {
            error_2d_px: self.error_2d_px?,
            error_3d_rel: self.error_3d_rel?,
            focal_error_rel: self.focal_error_rel?,
            alignment_used: self.alignment_used,
        })
    }
}

/// Evaluates a predicted mask, a reconstruction in the normalized image frame
/// (points for the first `m` columns) and a calibration against `scene`.
pub fn evaluate_scene(
    scene: &GroundTruthScene,
    mask: Option<&[bool]>,
    recon: Option<&ProjectiveReconstruction>,
    calibration: Option<&CalibrationEstimate>,
    alignment: Alignment,
    mask_2d: Error2dMask,
) -> SceneEvaluation {
    let truth = &scene.inlier_mask_true;
    let m = truth.len();
    let mut notes = Vec::new();
    let mask = mask.map(|p| &p[..p.len().min(m)]);
    let classification = mask.and_then(|p| f1_score(p, truth).map_err(|e| notes.push(format!("f1: {e}"))).ok());

    let (mut e2, mut e3) = (None, None);
    if let Some(r) = recon {
        if r.n_points() != m || r.n_views() != scene.tracks.n_views() {
            notes.push(format!("reconstruction is {}x{}, scene is {}x{m}", r.n_views(), r.n_points(), scene.tracks.n_views()));
        } else {
            let eval_mask: Vec<bool> = match (mask_2d, mask) {
                (Error2dMask::TrueInliers, _) => truth.clone(),
                (Error2dMask::PredictedInliers, Some(p)) => p.to_vec(),
                (Error2dMask::PredictedInliers, None) => {
                    notes.push("2d: no predicted mask, using all tracks".into());
                    vec![true; m]
                }
                (Error2dMask::All, _) => vec![true; m],
            };
            let t_inv = scene.config.normalization().try_inverse().expect("image normalization is invertible");
            match r.map_image_frame(&t_inv) {
                Ok(px) => match error_2d(&px, &scene.tracks, &eval_mask) {
                    Ok(e) => e2 = Some(e.value),
                    Err(e) => notes.push(format!("2d: {e}")),
                },
                Err(e) => notes.push(format!("2d: {e}")),
            }
            match error_3d(&r.points, &scene.points_metric, truth, alignment) {
                Ok(e) => e3 = Some(e),
                Err(e) => notes.push(format!("3d: {e}")),
            }
        }
    }
    let focal = calibration.and_then(|c| match c.intrinsics() {
        Ok(k) => Some(focal_error(&k, &scene.k_in(c.frame))),
        Err(e) => {
            notes.push(format!("focal: {e}"));
            None
        }
    });
    SceneEvaluation { classification, error_2d_px: e2, error_3d_rel: e3, focal_error_rel: focal, alignment_used: alignment, notes }
}

/// One trial of a sweep; metrics absent when not applicable or failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: String,
    pub factor: String,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub f1: Option<f64>,
    pub error_2d: Option<f64>,
    pub error_3d: Option<f64>,
    pub focal_error: Option<f64>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation of one metric in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, count: values.len() })
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std / (self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub factor: String,
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    pub f1: Option<Stat>,
    pub error_2d: Option<Stat>,
    pub error_3d: Option<Stat>,
    pub focal_error: Option<Stat>,
}

/// Groups trials by (method, factor, value) in first-seen order.
pub fn aggregate_sweep(records: &[TrialRecord]) -> Vec<SweepCell> {
    let mut keys: Vec<(String, String, f64)> = Vec::new();
    for r in records {
        let k = (r.method.clone(), r.factor.clone(), r.value);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, factor, value)| {
            let cell: Vec<&TrialRecord> =
                records.iter().filter(|r| r.method == method && r.factor == factor && r.value == value).collect();
            let collect = |f: fn(&TrialRecord) -> Option<f64>| Stat::of(&cell.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            SweepCell {
                trials: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
                f1: collect(|r| r.f1),
                error_2d: collect(|r| r.error_2d),
                error_3d: collect(|r| r.error_3d),
                focal_error: collect(|r| r.focal_error),
                method,
                factor,
                value,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct FlatCell<'a> {
    method: &'a str,
    factor: &'a str,
    value: f64,
    trials: usize,
    failures: usize,
    f1_mean: Option<f64>,
    f1_std: Option<f64>,
    error_2d_mean: Option<f64>,
    error_2d_std: Option<f64>,
    error_3d_mean: Option<f64>,
    error_3d_std: Option<f64>,
    focal_error_mean: Option<f64>,
    focal_error_std: Option<f64>,
}

/// CSV table with one row per cell.
pub fn sweep_table_csv(cells: &[SweepCell]) -> std::result::Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(FlatCell {
            method: &c.method,
            factor: &c.factor,
            value: c.value,
            trials: c.trials,
            failures: c.failures,
            f1_mean: c.f1.map(|s| s.mean),
            f1_std: c.f1.map(|s| s.std),
            error_2d_mean: c.error_2d.map(|s| s.mean),
            error_2d_std: c.error_2d.map(|s| s.std),
            error_3d_mean: c.error_3d.map(|s| s.mean),
            error_3d_std: c.error_3d.map(|s| s.std),
            focal_error_mean: c.focal_error.map(|s| s.mean),
            focal_error_std: c.focal_error.map(|s| s.std),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv writes utf-8"))
}
