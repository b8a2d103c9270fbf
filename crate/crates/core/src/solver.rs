//! Unsupervised robust solver.
//!
//! Minimizes `L = L_count + α·L_proj + β·L_DAQ` over per-correspondence
//! weights `w ∈ [0,1]ᵐ` (sigmoid of free logits, or the output of the
//! [`crate::encoder`] network), the shared intrinsics `K` and the plane at
//! infinity `n∞`, with a hand-written Adam optimizer.
//!
//! * `L_count` rewards keeping correspondences. The default is the linear
//!   surrogate `Σⱼ(1 − wⱼ)`; the exponential form `exp(t − Σⱼ sigmoid(wⱼ − 0.5))`
//!   is available as [`CountLossVariant::ExpSigmoid`] and via [`loss_num`].
//! * `L_proj` is the tail `Σ_{k≥5} σ_k(M·diag(w))` (or `σ₄`).
//! * `L_DAQ` refactorizes `M·diag(w)` and measures the DIAC residual η of the
//!   resulting cameras under `(K, n∞)`.
//!
//! Gradients of `L_count` and `L_proj` are analytic. `L_DAQ` is differentiated
//! by central differences in `(K, n∞)`; its weight gradient is obtained by
//! eigen-perturbation of the factorization (default) or by finite differences
//! through the whole factorization.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderOutput, EncoderParams};
use crate::eval::estimate_homography_3d;
use crate::factorization::{factors_from_svd, first_camera_homography, FactorizationError, MeasurementMatrix};
use crate::geometry::{CameraMatrix, Homography4, HomPoint3, ProjectiveReconstruction};
use crate::linalg::ThinSvd;
use crate::selfcalib::{
    daq_residual_raw, intrinsics_from_diac, intrinsics_matrix, CalibrationEstimate, Diac, ImageFrame,
};

/// Exponent clamp for the exponential count loss.
pub const EXP_CLAMP: f64 = 50.0;
/// Relative gap under which singular values are treated as one cluster.
pub const SV_CLUSTER_TOL: f64 = 1e-10;
/// Minimum number of detected inliers for a usable result.
pub const MIN_INLIERS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
}

type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    Direct,
    Encoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjLossVariant {
    #[default]
    TailSum,
    Sigma4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLossVariant {
    /// `Σⱼ (1 − wⱼ)`.
    #[default]
    Linear,
    /// `exp(t − Σⱼ sigmoid(wⱼ − 0.5))`, exponent clamped to ±50.
    ExpSigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaqWeightGradient {
    /// First-order eigen-perturbation of the factorization (cheap).
    #[default]
    Perturbation,
    /// Central differences through a full refactorization per weight.
    FiniteDifference,
    /// No weight gradient: `L_DAQ` only drives `(K, n∞)`.
    Detached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub inlier_threshold: f64,
    pub parameterization: Parameterization,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub proj_loss_variant: ProjLossVariant,
    pub count_loss_variant: CountLossVariant,
    pub daq_weight_gradient: DaqWeightGradient,
    /// Frame of the input matrix; decides the intrinsics initialization.
    pub image_frame: ImageFrame,
    /// `[width, height]`, required for pixel-frame initialization.
    pub image_size: Option<[f64; 2]>,
    /// Loss assigned to `L_DAQ` when the weighted matrix cannot be factorized.
    pub daq_failure_loss: f64,
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            t: 15.0,
            learning_rate: 1e-3,
            max_iters: 2000,
            inlier_threshold: 0.5,
            parameterization: Parameterization::Direct,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            proj_loss_variant: ProjLossVariant::TailSum,
            count_loss_variant: CountLossVariant::Linear,
            daq_weight_gradient: DaqWeightGradient::Perturbation,
            image_frame: ImageFrame::Normalized,
            image_size: None,
            daq_failure_loss: 1e3,
            convergence_window: 100,
            convergence_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be >= 0");
        }
        if !self.t.is_finite() {
            return bad("t must be finite");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold < 1.0) {
            return bad("inlier_threshold must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps < 0.0 {
            return bad("adam moments must be in [0, 1) and eps >= 0");
        }
        if self.image_frame == ImageFrame::Pixel && self.image_size.is_none() {
            return bad("pixel frame requires image_size");
        }
        Ok(())
    }

    /// `(fx, fy, skew, cx, cy)` initialization.
    pub fn initial_intrinsics(&self) -> [f64; 5] {
        match (self.image_frame, self.image_size) {
            (ImageFrame::Pixel, Some([w, h])) => {
                let f = 1.2 * w.max(h);
                [f, f, 0.0, 0.5 * w, 0.5 * h]
            }
            _ => [1.0, 1.0, 0.0, 0.0, 0.0],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `exp(t − Σⱼ sigmoid(wⱼ − 0.5))` with the exponent clamped to `[−50, 50]`.
pub fn loss_num(w: &[f64], t: f64) -> f64 {
    let s: f64 = w.iter().map(|&x| sigmoid(x - 0.5)).sum();
    (t - s).clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Gradient of [`loss_num`]; zero where the clamp is active.
pub fn grad_loss_num(w: &[f64], t: f64) -> Vec<f64> {
    let e = t - w.iter().map(|&x| sigmoid(x - 0.5)).sum::<f64>();
    if e.abs() >= EXP_CLAMP {
        return vec![0.0; w.len()];
    }
    let l = e.exp();
    w.iter()
        .map(|&x| {
            let s = sigmoid(x - 0.5);
            -l * s * (1.0 - s)
        })
        .collect()
}

/// `Σⱼ (1 − wⱼ)`.
pub fn loss_count_linear(w: &[f64]) -> f64 {
    w.iter().map(|x| 1.0 - x).sum()
}

fn count_loss(w: &[f64], cfg: &SolverConfig) -> (f64, Vec<f64>) {
    match cfg.count_loss_variant {
        CountLossVariant::Linear => (loss_count_linear(w), vec![-1.0; w.len()]),
        CountLossVariant::ExpSigmoid => (loss_num(w, cfg.t), grad_loss_num(w, cfg.t)),
    }
}

/// Valid block of `M` and the matching entries of `w`.
fn compact(m: &MeasurementMatrix, w: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if w.len() != m.n_cols() {
        return Err(SolverError::InvalidInput(format!("{} weights for {} columns", w.len(), m.n_cols())));
    }
    Ok((m.valid_block(), m.valid_cols().iter().map(|&j| w[j]).collect()))
}

fn scatter(m: &MeasurementMatrix, compact: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n_cols()];
    for (c, &j) in m.valid_cols().iter().enumerate() {
        out[j] = compact[c];
    }
    out
}

fn weighted(block: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut a = block.clone();
    for (j, mut col) in a.column_iter_mut().enumerate() {
        col *= w[j];
    }
    a
}

fn proj_indices(variant: ProjLossVariant, rank: usize) -> Result<Vec<usize>> {
    match variant {
        ProjLossVariant::TailSum if rank >= 5 => Ok((4..rank).collect()),
        ProjLossVariant::Sigma4 if rank >= 4 => Ok(vec![3]),
        _ => Err(SolverError::InvalidInput(format!(
            "weighted block has only {rank} singular values for the {variant:?} projection loss"
        ))),
    }
}

/// Projection loss on the valid block of `M·diag(w)`.
pub fn loss_proj(w: &[f64], m: &MeasurementMatrix, variant: ProjLossVariant) -> Result<f64> {
    let (block, wc) = compact(m, w)?;
    let svd = ThinSvd::new(&weighted(&block, &wc));
    let ks = proj_indices(variant, svd.singular_values.len())?;
    Ok(ks.iter().map(|&k| svd.singular_values[k]).sum())
}

/// `∂/∂wⱼ Σ_{k∈ks} σ_k` from an SVD of `A = M·diag(w)` and `C = Uᵀ·M`.
///
/// Clusters of (numerically) equal singular values are treated together: a
/// cluster partly inside `ks` contributes its averaged gradient, which is
/// invariant to the arbitrary basis inside the cluster.
fn sv_gradient(svd: &ThinSvd, c: &DMatrix<f64>, ks: &[usize]) -> Vec<f64> {
    let s = &svd.singular_values;
    let r = s.len();
    let m = c.ncols();
    let mut g = vec![0.0; m];
    if r == 0 {
        return g;
    }
    let tol = SV_CLUSTER_TOL * s[0];
    let mut start = 0;
    while start < r {
        let mut end = start + 1;
        while end < r && s[end - 1] - s[end] <= tol {
            end += 1;
        }
        let hits = (start..end).filter(|k| ks.contains(k)).count();
        if hits > 0 {
            let f = hits as f64 / (end - start) as f64;
            for k in start..end {
                for j in 0..m {
                    g[j] += f * c[(k, j)] * svd.v[(j, k)];
                }
            }
        }
        start = end;
    }
    g
}

/// Gradient of `Σ_{k∈ks} σ_k(M·diag(w))` with respect to `w` (one entry per
/// column of `M`; padding columns get zero).
pub fn grad_weighted_singular_values(m: &MeasurementMatrix, w: &[f64], ks: &[usize]) -> Result<Vec<f64>> {
    let (block, wc) = compact(m, w)?;
    let svd = ThinSvd::new(&weighted(&block, &wc));
    let c = svd.u.transpose() * &block;
    Ok(scatter(m, &sv_gradient(&svd, &c, ks)))
}

/// Factor cameras `U₄·Σ₄^{1/2}` moved to the frame with first camera `[I | 0]`.
fn normalized_cameras(cams: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let first: Matrix3x4<f64> = cams.fixed_view::<3, 4>(0, 0).into_owned();
    let h = first_camera_homography(&first).ok()?;
    let h_inv = h.try_inverse()?;
    let mut p: DMatrix<f64> = cams * DMatrix::from_column_slice(4, 4, h_inv.as_slice());
    p.fixed_view_mut::<3, 4>(0, 0).copy_from(&Matrix3x4::identity());
    Some(p)
}

fn camera_blocks(p: &DMatrix<f64>) -> Vec<Matrix3x4<f64>> {
    (0..p.nrows() / 3).map(|i| p.fixed_view::<3, 4>(3 * i, 0).into_owned()).collect()
}

fn eta(p: &DMatrix<f64>, k: &Matrix3<f64>, n: &Vector3<f64>) -> f64 {
    daq_residual_raw(&camera_blocks(p), k, n).value
}

fn eta_of_factors(cams: &DMatrix<f64>, k: &Matrix3<f64>, n: &Vector3<f64>) -> Option<f64> {
    let v = eta(&normalized_cameras(cams)?, k, n);
    v.is_finite().then_some(v)
}

/// η of the cameras recovered from `A`, or `None` when factorization fails.
fn eta_of_matrix(a: &DMatrix<f64>, k: &Matrix3<f64>, n: &Vector3<f64>) -> Option<f64> {
    let (cams, _) = factors_from_svd(&ThinSvd::new(a)).ok()?;
    eta_of_factors(&cams, k, n)
}

/// Value of `L_DAQ`; `degenerate` when the configured failure constant was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaqLoss {
    pub value: f64,
    pub degenerate: bool,
}

/// `L_DAQ`: factorize `M·diag(w)`, normalize the first camera, evaluate η.
pub fn loss_daq(w: &[f64], m: &MeasurementMatrix, k: &Matrix3<f64>, n: &Vector3<f64>, failure_loss: f64) -> Result<DaqLoss> {
    let (block, wc) = compact(m, w)?;
    if block.nrows() == 3 {
        // A single view: only the identically vanishing first term remains.
        return Ok(DaqLoss { value: 0.0, degenerate: false });
    }
    Ok(match eta_of_matrix(&weighted(&block, &wc), k, n) {
        Some(v) => DaqLoss { value: v, degenerate: false },
        None => DaqLoss { value: failure_loss, degenerate: true },
    })
}

/// `∂η/∂P̃` for the un-normalized factor cameras `P̃` (central differences).
///
/// Perturbing a view other than the first leaves the normalizing homography
/// unchanged, so only that view's term has to be re-evaluated.
fn eta_factor_gradient(cams: &DMatrix<f64>, k: &Matrix3<f64>, n: &Vector3<f64>) -> Option<DMatrix<f64>> {
    let first: Matrix3x4<f64> = cams.fixed_view::<3, 4>(0, 0).into_owned();
    let h_inv = first_camera_homography(&first).ok()?.try_inverse()?;
    let step = 1e-6 * cams.amax().max(1e-300);
    let mut g = DMatrix::zeros(cams.nrows(), 4);
    let mut probe = cams.clone();
    for r in 0..3 {
        for c in 0..4 {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + step;
            let up = eta_of_factors(&probe, k, n);
            probe[(r, c)] = orig - step;
            let down = eta_of_factors(&probe, k, n);
            probe[(r, c)] = orig;
            if let (Some(u), Some(d)) = (up, down) {
                g[(r, c)] = (u - d) / (2.0 * step);
            }
        }
    }
    let q = crate::selfcalib::daq_from_raw(k, n).0;
    let omega = k * k.transpose();
    let target = omega / omega.norm();
    let term = |p: &Matrix3x4<f64>| Diac::from_matrix(p * q * p.transpose()).ok().map(|d| (d.matrix() - target).norm());
    for i in 1..cams.nrows() / 3 {
        let base: Matrix3x4<f64> = cams.fixed_view::<3, 4>(3 * i, 0) * h_inv;
        for r in 0..3 {
            for c in 0..4 {
                let mut delta = Matrix3x4::zeros();
                delta.row_mut(r).copy_from(&h_inv.row(c));
                if let (Some(u), Some(d)) = (term(&(base + step * delta)), term(&(base - step * delta))) {
                    g[(3 * i + r, c)] = (u - d) / (2.0 * step);
                }
            }
        }
    }
    Some(g)
}

/// Weight gradient of η through the factorization by eigen-perturbation.
///
/// With `G = A·Aᵀ = Σⱼ wⱼ²·Mⱼ·Mⱼᵀ`, `λ_k = σ_k²` and `c_{kj} = u_kᵀ·Mⱼ`:
/// `∂λ_k/∂wⱼ = 2wⱼ·c_{kj}²` and
/// `∂u_k/∂wⱼ = Σ_{l≠k} u_l·2wⱼ·c_{lj}·c_{kj}/(λ_k − λ_l) + (I − UUᵀ)·2wⱼ·Mⱼ·c_{kj}/λ_k`.
/// The factor camera column is `u_k·λ_k^{1/4}`.
fn daq_weight_gradient_perturbation(block: &DMatrix<f64>, w: &[f64], svd: &ThinSvd, c: &DMatrix<f64>, g_cams: &DMatrix<f64>) -> Vec<f64> {
    let s = &svd.singular_values;
    let r = s.len();
    let lam: Vec<f64> = s.iter().map(|x| x * x).collect();
    let gap_tol = SV_CLUSTER_TOL * lam[0];
    let a = svd.u.transpose() * g_cams; // r × 4
    let complete = r == block.nrows();
    let resid = if complete { None } else { Some(g_cams.transpose() * block - a.transpose() * c) };
    (0..block.ncols())
        .map(|j| {
            let mut gj = 0.0;
            for k in 0..4 {
                let lk = lam[k];
                let mut acc = 0.0;
                for l in 0..r {
                    let d = lk - lam[l];
                    if l != k && d.abs() > gap_tol {
                        acc += a[(l, k)] * c[(l, j)] / d;
                    }
                }
                acc *= c[(k, j)];
                if let Some(res) = &resid {
                    acc += c[(k, j)] * res[(k, j)] / lk;
                }
                gj += 2.0 * w[j] * (lk.powf(0.25) * acc + a[(k, k)] * 0.25 * lk.powf(-0.75) * c[(k, j)] * c[(k, j)]);
            }
            gj
        })
        .collect()
}

/// Weight gradient of η by central differences through a full refactorization
/// per coordinate (step `1e-5·max(1, |wⱼ|)`).
pub fn daq_weight_gradient_fd(block: &DMatrix<f64>, w: &[f64], k: &Matrix3<f64>, n: &Vector3<f64>) -> Vec<f64> {
    let mut a = weighted(block, w);
    (0..block.ncols())
        .map(|j| {
            let h = 1e-5 * w[j].abs().max(1.0);
            a.set_column(j, &(block.column(j) * (w[j] + h)));
            let up = eta_of_matrix(&a, k, n);
            a.set_column(j, &(block.column(j) * (w[j] - h)));
            let down = eta_of_matrix(&a, k, n);
            a.set_column(j, &(block.column(j) * w[j]));
            match (up, down) {
                (Some(u), Some(d)) => (u - d) / (2.0 * h),
                _ => 0.0,
            }
        })
        .collect()
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub num: f64,
    pub proj: f64,
    pub daq: f64,
}

impl LossComponents {
    pub fn total(&self, cfg: &SolverConfig) -> f64 {
        self.num + cfg.alpha * self.proj + cfg.beta * self.daq
    }
}

/// Result of evaluating the loss (and optionally its gradient) on a compact block.
#[derive(Debug, Clone)]
struct Evaluation {
    components: LossComponents,
    daq_degenerate: bool,
    grad_w: Vec<f64>,
    grad_k: [f64; 5],
    grad_n: [f64; 3],
}

fn evaluate(block: &DMatrix<f64>, w: &[f64], kp: &[f64; 5], np: &[f64; 3], cfg: &SolverConfig, want_grad: bool) -> Result<Evaluation> {
    let m = w.len();
    let (num, g_num) = count_loss(w, cfg);
    let svd = ThinSvd::new(&weighted(block, w));
    let ks = proj_indices(cfg.proj_loss_variant, svd.singular_values.len())?;
    let proj: f64 = ks.iter().map(|&k| svd.singular_values[k]).sum();
    let c = if want_grad { Some(svd.u.transpose() * block) } else { None };

    let mut grad_w = g_num;
    if let Some(c) = &c {
        for (g, p) in grad_w.iter_mut().zip(sv_gradient(&svd, c, &ks)) {
            *g += cfg.alpha * p;
        }
    }
    let mut out = Evaluation {
        components: LossComponents { num, proj, daq: 0.0 },
        daq_degenerate: false,
        grad_w,
        grad_k: [0.0; 5],
        grad_n: [0.0; 3],
    };
    if cfg.beta == 0.0 || block.nrows() == 3 {
        return Ok(out);
    }

    let kmat = intrinsics_matrix(kp);
    let nvec = Vector3::from(*np);
    let cams = factors_from_svd(&svd).ok();
    let p = cams.as_ref().and_then(|(c, _)| normalized_cameras(c));
    let value = p.as_ref().map(|p| eta(p, &kmat, &nvec)).filter(|v| v.is_finite());
    let (Some((cams, _)), Some(p), Some(value)) = (cams, p, value) else {
        out.components.daq = cfg.daq_failure_loss;
        out.daq_degenerate = true;
        return Ok(out);
    };
    out.components.daq = value;
    let Some(c) = c else { return Ok(out) };

    // Calibration block: central differences with the cameras held fixed.
    let mut theta = [kp[0], kp[1], kp[2], kp[3], kp[4], np[0], np[1], np[2]];
    for idx in 0..8 {
        let orig = theta[idx];
        let h = 1e-5 * orig.abs().max(1.0);
        let eval_at = |th: &[f64; 8]| {
            let k = intrinsics_matrix(&[th[0], th[1], th[2], th[3], th[4]]);
            eta(&p, &k, &Vector3::new(th[5], th[6], th[7]))
        };
        theta[idx] = orig + h;
        let up = eval_at(&theta);
        theta[idx] = orig - h;
        let down = eval_at(&theta);
        theta[idx] = orig;
        let g = if up.is_finite() && down.is_finite() { cfg.beta * (up - down) / (2.0 * h) } else { 0.0 };
        if idx < 5 {
            out.grad_k[idx] = g;
        } else {
            out.grad_n[idx - 5] = g;
        }
    }

    let gw_daq = match cfg.daq_weight_gradient {
        DaqWeightGradient::Perturbation => match eta_factor_gradient(&cams, &kmat, &nvec) {
            Some(g_cams) => daq_weight_gradient_perturbation(block, w, &svd, &c, &g_cams),
            None => vec![0.0; m],
        },
        DaqWeightGradient::FiniteDifference => daq_weight_gradient_fd(block, w, &kmat, &nvec),
        DaqWeightGradient::Detached => vec![0.0; m],
    };
    for (g, d) in out.grad_w.iter_mut().zip(gw_daq) {
        *g += cfg.beta * d;
    }
    Ok(out)
}

/// One point of the per-iteration loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub num: f64,
    pub proj: f64,
    pub daq: f64,
    pub total: f64,
    /// Best total seen up to and including this iteration.
    pub best: f64,
}

/// Optimizer state. The flat parameter layout is `[logits (one per column of
/// M), K (5), n∞ (3)]` for the direct parameterization and
/// `[encoder parameters, K (5)]` for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub weight_logits: Vec<f64>,
    pub k_params: [f64; 5],
    pub n_inf_params: [f64; 3],
    pub encoder_params: Option<EncoderParams>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub iteration: usize,
    pub loss_trace: Vec<LossRecord>,
}

impl SolverState {
    pub fn new(m: &MeasurementMatrix, cfg: &SolverConfig) -> Self {
        let encoder_params = match cfg.parameterization {
            Parameterization::Direct => None,
            Parameterization::Encoder => Some(EncoderParams::new(3 * m.n_valid_views(), cfg.seed)),
        };
        let mut s = Self {
            weight_logits: vec![0.0; m.n_cols()],
            k_params: cfg.initial_intrinsics(),
            n_inf_params: [0.0; 3],
            encoder_params,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            iteration: 0,
            loss_trace: Vec::new(),
        };
        let len = s.flat_params().len();
        s.first_moment = vec![0.0; len];
        s.second_moment = vec![0.0; len];
        s
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = match &self.encoder_params {
            Some(e) => e.to_flat(),
            None => self.weight_logits.clone(),
        };
        out.extend_from_slice(&self.k_params);
        if self.encoder_params.is_none() {
            out.extend_from_slice(&self.n_inf_params);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let head = match &mut self.encoder_params {
            Some(e) => {
                let len = e.n_params();
                e.set_flat(&flat[..len]);
                len
            }
            None => {
                let len = self.weight_logits.len();
                self.weight_logits.copy_from_slice(&flat[..len]);
                len
            }
        };
        self.k_params.copy_from_slice(&flat[head..head + 5]);
        if self.encoder_params.is_none() {
            self.n_inf_params.copy_from_slice(&flat[head + 5..head + 8]);
        }
    }

    /// In-place Adam update with bias correction.
    pub fn adam_update(&mut self, grad: &[f64], cfg: &SolverConfig) {
        let mut theta = self.flat_params();
        assert_eq!(grad.len(), theta.len(), "gradient shape");
        self.iteration += 1;
        let t = self.iteration as i32;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
            self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
            let mh = self.first_moment[i] / c1;
            let vh = self.second_moment[i] / c2;
            theta[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
        self.set_flat_params(&theta);
    }

    /// Weights on the valid columns, plus the encoder pass when used.
    fn resolve(&mut self, block: &DMatrix<f64>, m: &MeasurementMatrix) -> (Vec<f64>, [f64; 3], Option<EncoderOutput>) {
        match &self.encoder_params {
            Some(e) => {
                let out = e.forward(block);
                for (c, &j) in m.valid_cols().iter().enumerate() {
                    self.weight_logits[j] = out.logits[c];
                }
                let w = out.logits.iter().map(|&z| sigmoid(z)).collect();
                self.n_inf_params = out.n_inf;
                (w, out.n_inf, Some(out))
            }
            None => {
                let w = m.valid_cols().iter().map(|&j| sigmoid(self.weight_logits[j])).collect();
                (w, self.n_inf_params, None)
            }
        }
    }

    /// Soft weights for every column of `M` (padding columns are 0).
    pub fn soft_weights(&self, m: &MeasurementMatrix) -> Vec<f64> {
        let mut out = vec![0.0; m.n_cols()];
        for &j in &m.valid_cols() {
            out[j] = sigmoid(self.weight_logits[j]);
        }
        out
    }
}

/// Standard Adam step; returns the updated state.
pub fn adam_step(state: &SolverState, grad: &[f64], cfg: &SolverConfig) -> SolverState {
    let mut s = state.clone();
    s.adam_update(grad, cfg);
    s
}

fn check_shapes(state: &SolverState, m: &MeasurementMatrix) -> Result<()> {
    if state.weight_logits.len() != m.n_cols() {
        return Err(SolverError::InvalidInput(format!(
            "state has {} logits, matrix has {} columns",
            state.weight_logits.len(),
            m.n_cols()
        )));
    }
    if let Some(e) = &state.encoder_params {
        if e.input_dim() != 3 * m.n_valid_views() {
            return Err(SolverError::InvalidInput("encoder input width does not match the matrix".into()));
        }
    }
    Ok(())
}

/// `(L, components)` at the current state.
pub fn loss_total(state: &SolverState, m: &MeasurementMatrix, cfg: &SolverConfig) -> Result<(f64, LossComponents)> {
    check_shapes(state, m)?;
    let block = m.valid_block();
    let mut s = state.clone();
    let (w, n, _) = s.resolve(&block, m);
    let e = evaluate(&block, &w, &s.k_params, &n, cfg, false)?;
    Ok((e.components.total(cfg), e.components))
}

fn gradient_at(state: &mut SolverState, m: &MeasurementMatrix, block: &DMatrix<f64>, cfg: &SolverConfig) -> Result<(Evaluation, Vec<f64>)> {
    let (w, n, enc) = state.resolve(block, m);
    let e = evaluate(block, &w, &state.k_params, &n, cfg, true)?;
    // Chain through the sigmoid.
    let d_logits: Vec<f64> = e.grad_w.iter().zip(&w).map(|(g, w)| g * w * (1.0 - w)).collect();
    let mut flat = match (&state.encoder_params, enc) {
        (Some(params), Some(out)) => params.backward(&out.cache, &d_logits, &e.grad_n),
        _ => scatter(m, &d_logits),
    };
    flat.extend_from_slice(&e.grad_k);
    if state.encoder_params.is_none() {
        flat.extend_from_slice(&e.grad_n);
    }
    Ok((e, flat))
}

/// Gradient of [`loss_total`] in the flat parameter layout of [`SolverState`].
pub fn grad_total(state: &SolverState, m: &MeasurementMatrix, cfg: &SolverConfig) -> Result<Vec<f64>> {
    check_shapes(state, m)?;
    let mut s = state.clone();
    Ok(gradient_at(&mut s, m, &m.valid_block(), cfg)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Per-iteration trace; written separately as CSV, not part of the JSON.
    #[serde(skip)]
    pub loss_trace: Vec<LossRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: LossComponents,
    pub best_loss: f64,
    /// Iterations where `L_DAQ` fell back to the failure constant.
    pub daq_failures: usize,
    pub too_few_inliers: bool,
    pub n_inliers: usize,
    /// Why no reconstruction could be produced, if so.
    pub reconstruction_error: Option<String>,
    /// Whether the returned reconstruction was mapped into the calibration's frame.
    pub frame_aligned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// One weight per column of `M`; padding columns are 0.
    pub soft_weights: Vec<f64>,
    pub inlier_mask: Vec<bool>,
    pub calibration: CalibrationEstimate,
    /// Cameras for the valid views, points for the valid columns (outliers
    /// included, triangulated linearly from the cameras).
    pub reconstruction: Option<ProjectiveReconstruction>,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// True when the solve produced no usable model.
    pub fn is_degenerate(&self) -> bool {
        self.diagnostics.too_few_inliers || self.reconstruction.is_none()
    }
}

/// Cameras `Pⁱ` and least-squares points `Xⱼ = P⁺·Mⱼ` for every column.
fn triangulate_all(cams: &DMatrix<f64>, block: &DMatrix<f64>) -> Option<ProjectiveReconstruction> {
    let svd = ThinSvd::new(cams);
    let s = &svd.singular_values;
    if s.len() < 4 || s[3] <= 1e-12 * s[0] {
        return None;
    }
    let inv_s = DMatrix::from_diagonal(&s.map(|x| 1.0 / x));
    let pinv = &svd.v * inv_s * svd.u.transpose();
    let x = pinv * block;
    let cameras = camera_blocks(cams).into_iter().map(CameraMatrix::new).collect::<std::result::Result<Vec<_>, _>>().ok()?;
    let points = x
        .column_iter()
        .map(|c| HomPoint3::new(nalgebra::Vector4::new(c[0], c[1], c[2], c[3])))
        .collect::<std::result::Result<Vec<_>, _>>()
        .ok()?;
    Some(ProjectiveReconstruction::new(cameras, points))
}

/// Reconstruction from the inlier columns (unweighted), expressed — when
/// possible — in the projective frame the calibration refers to.
fn final_reconstruction(block: &DMatrix<f64>, inliers: &[bool], w: &[f64]) -> (std::result::Result<ProjectiveReconstruction, String>, bool) {
    let cols: Vec<usize> = (0..block.ncols()).filter(|&j| inliers[j]).collect();
    let sub = block.select_columns(&cols);
    let cams = match factors_from_svd(&ThinSvd::new(&sub)) {
        Ok((c, _)) => c,
        Err(e) => return (Err(e.to_string()), false),
    };
    let Some(cams) = normalized_cameras(&cams) else {
        return (Err("first camera is degenerate".into()), false);
    };
    let Some(recon) = triangulate_all(&cams, block) else {
        return (Err("camera stack is rank deficient".into()), false);
    };
    // Frame of the final weighted factorization, which (K, n∞) refer to.
    let target = factors_from_svd(&ThinSvd::new(&weighted(block, w)))
        .ok()
        .and_then(|(c, _)| normalized_cameras(&c))
        .and_then(|c| triangulate_all(&c, block));
    let Some(target) = target else { return (Ok(recon), false) };
    let src: Vec<HomPoint3> = cols.iter().map(|&j| recon.points[j]).collect();
    let dst: Vec<HomPoint3> = cols.iter().map(|&j| target.points[j]).collect();
    let aligned = estimate_homography_3d(&src, &dst)
        .ok()
        .and_then(|h| Homography4::new(h).ok())
        .and_then(|h| recon.apply_homography(&h).ok())
        .and_then(|r| {
            // Restore the exact [I | 0] scale convention of the first camera.
            let s = r.cameras[0].entries()[(0, 0)];
            let h = Homography4::new(Matrix4::identity() * s).ok()?;
            let mut out = r.apply_homography(&h).ok()?;
            out.cameras[0] = CameraMatrix::canonical();
            Some(out)
        });
    match aligned {
        Some(r) => (Ok(r), true),
        None => (Ok(recon), false),
    }
}

fn calibration_from_params(kp: &[f64; 5], np: &[f64; 3], frame: ImageFrame) -> CalibrationEstimate {
    let k = intrinsics_matrix(kp);
    // Canonicalize to a positive-diagonal K with the same DIAC.
    let canonical = Diac::from_matrix(k * k.transpose())
        .ok()
        .and_then(|d| intrinsics_from_diac(&d).ok())
        .map(|i| *i.matrix())
        .unwrap_or(k);
    CalibrationEstimate::new(&canonical, &Vector3::from(*np), frame)
}

/// Runs the optimizer on `M`. Deterministic for a fixed input and config.
pub fn solve(m: &MeasurementMatrix, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    if m.n_valid_views() < 2 {
        return Err(SolverError::InvalidInput(format!("need at least 2 views, got {}", m.n_valid_views())));
    }
    if m.n_valid_cols() < MIN_INLIERS {
        return Err(SolverError::InvalidInput(format!("need at least 8 correspondences, got {}", m.n_valid_cols())));
    }
    let block = m.valid_block();
    let mut state = SolverState::new(m, cfg);
    let mut best = f64::INFINITY;
    let mut converged = false;
    let mut daq_failures = 0;
    let mut last = LossComponents::default();
    for it in 0..cfg.max_iters {
        let (e, grad) = gradient_at(&mut state, m, &block, cfg)?;
        let total = e.components.total(cfg);
        if total < best {
            best = total;
        }
        daq_failures += e.daq_degenerate as usize;
        last = e.components;
        state.loss_trace.push(LossRecord {
            iteration: it,
            num: e.components.num,
            proj: e.components.proj,
            daq: e.components.daq,
            total,
            best,
        });
        let window = cfg.convergence_window;
        if window > 0 && it >= window {
            let before = state.loss_trace[it - window].best;
            if before - best <= cfg.convergence_tol * best.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        state.adam_update(&grad, cfg);
    }
    // Final weights (refresh the encoder outputs after the last step).
    let (w, n, _) = state.resolve(&block, m);
    let inliers_c: Vec<bool> = w.iter().map(|&x| x > cfg.inlier_threshold).collect();
    let soft_weights = scatter(m, &w);
    let inlier_mask: Vec<bool> = soft_weights.iter().map(|&x| x > cfg.inlier_threshold).collect();
    let n_inliers = inliers_c.iter().filter(|&&b| b).count();
    let too_few = n_inliers < MIN_INLIERS;
    let (recon, frame_aligned) = if too_few {
        (Err(format!("only {n_inliers} inliers detected")), false)
    } else {
        final_reconstruction(&block, &inliers_c, &w)
    };
    let (reconstruction, reconstruction_error) = match recon {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    Ok(SolveResult {
        soft_weights,
        inlier_mask,
        calibration: calibration_from_params(&state.k_params, &n, cfg.image_frame),
        reconstruction,
        diagnostics: Diagnostics {
            iterations: state.loss_trace.len(),
            loss_trace: state.loss_trace,
            converged,
            final_loss: last,
            best_loss: best,
            daq_failures,
            too_few_inliers: too_few,
            n_inliers,
            reconstruction_error,
            frame_aligned,
        },
    })
}

/// Plain projective factorization of all columns (no weighting).
pub fn baseline_reconstruction(m: &MeasurementMatrix) -> Result<ProjectiveReconstruction> {
    let block = m.valid_block();
    let (cams, _) = factors_from_svd(&ThinSvd::new(&block))?;
    let cams = normalized_cameras(&cams).ok_or(FactorizationError::DegenerateFirstCamera)?;
    triangulate_all(&cams, &block).ok_or(SolverError::Factorization(FactorizationError::RankDeficient(0.0)))
}

/// Weights fixed at `w`; minimizes `L_DAQ` over `(K, n∞)` only, from the
/// config's initialization. Returns the final parameters and residual.
///
/// The step size decays linearly to zero: η is a sum of unsquared norms, so
/// constant-step Adam only circles its minimum at a radius of about `lr`.
pub fn calibrate_with_fixed_weights(m: &MeasurementMatrix, w: &[f64], cfg: &SolverConfig, iters: usize) -> Result<([f64; 5], [f64; 3], f64)> {
    let (block, wc) = compact(m, w)?;
    let (cams, _) = factors_from_svd(&ThinSvd::new(&weighted(&block, &wc)))?;
    let p = normalized_cameras(&cams).ok_or(FactorizationError::DegenerateFirstCamera)?;
    let mut state = SolverState {
        weight_logits: Vec::new(),
        k_params: cfg.initial_intrinsics(),
        n_inf_params: [0.0; 3],
        encoder_params: None,
        first_moment: vec![0.0; 8],
        second_moment: vec![0.0; 8],
        iteration: 0,
        loss_trace: Vec::new(),
    };
    let objective = |th: &[f64]| {
        eta(&p, &intrinsics_matrix(&[th[0], th[1], th[2], th[3], th[4]]), &Vector3::new(th[5], th[6], th[7]))
    };
    let mut theta: Vec<f64> = state.k_params.iter().chain(&state.n_inf_params).copied().collect();
    let mut step_cfg = cfg.clone();
    for it in 0..iters {
        step_cfg.learning_rate = cfg.learning_rate * (1.0 - it as f64 / iters as f64);
        let mut grad = vec![0.0; 8];
        for i in 0..8 {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut t = theta.clone();
            t[i] += h;
            let up = objective(&t);
            t[i] -= 2.0 * h;
            let down = objective(&t);
            grad[i] = if up.is_finite() && down.is_finite() { (up - down) / (2.0 * h) } else { 0.0 };
        }
        state.set_flat_params(&theta);
        state.adam_update(&grad, &step_cfg);
        theta = state.flat_params();
    }
    let kp = [theta[0], theta[1], theta[2], theta[3], theta[4]];
    let np = [theta[5], theta[6], theta[7]];
    Ok((kp, np, objective(&theta)))
}
