mod eval;
mod solve;
mod sweep;
mod synth;

pub use eval::eval;
pub use solve::{solve, InputKind, RunInfo, RUN_FILE};
pub use sweep::{par_map, run_trial, sweep};
pub use synth::synth;

use nalgebra::Matrix3;
use scpsfm::factorization::CorrespondenceTracks;

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

/// Pixel → normalized transform for a track file without a known image
/// size: the bounding box of all observations plays the image.
pub fn bbox_normalization(tracks: &CorrespondenceTracks) -> Matrix3<f64> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..tracks.n_views() {
        for p in tracks.view(i) {
            if let Ok(e) = p.dehomogenize() {
                for k in 0..2 {
                    lo[k] = lo[k].min(e[k]);
                    hi[k] = hi[k].max(e[k]);
                }
            }
        }
    }
    if !lo[0].is_finite() {
        return Matrix3::identity();
    }
    let mut t = scpsfm::synth::image_normalization([(hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12)]);
    t[(0, 2)] -= t[(0, 0)] * lo[0];
    t[(1, 2)] -= t[(1, 1)] * lo[1];
    t
}
