//! Dense SVD helpers.
//!
//! The decomposition itself comes from `faer`: nalgebra's bidiagonal SVD loses
//! accuracy on exactly rank-deficient inputs, which rank-4 measurement
//! matrices are by construction.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `A = U·diag(s)·Vᵀ` with singular values in non-increasing order.
///
/// `u` is `r × k`, `v` is `c × k` with `k = min(r, c)`. Each left singular
/// vector is sign-fixed so that its largest-magnitude entry is positive (the
/// matching right vector is flipped with it).
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (r, c) = a.shape();
        let k = r.min(c);
        if k == 0 {
            return Self { u: DMatrix::zeros(r, 0), singular_values: DVector::zeros(0), v: DMatrix::zeros(c, 0) };
        }
        let fa = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)]);
        let svd = fa.thin_svd().expect("SVD of a finite matrix converges");
        let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
        // Descending order, stable for ties.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| fs[y].total_cmp(&fs[x]));
        let u = DMatrix::from_fn(r, k, |i, l| fu[(i, order[l])]);
        let v = DMatrix::from_fn(c, k, |i, l| fv[(i, order[l])]);
        let singular_values = DVector::from_fn(k, |l, _| fs[order[l]]);
        let mut out = Self { u, singular_values, v };
        out.fix_signs();
        out
    }

    fn fix_signs(&mut self) {
        for k in 0..self.singular_values.len() {
            let col = self.u.column(k);
            let mut best = 0usize;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            if col[best] < 0.0 {
                self.u.column_mut(k).neg_mut();
                self.v.column_mut(k).neg_mut();
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U_k·diag(s_k)·V_kᵀ` keeping the `k` largest singular values.
    pub fn truncated(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.rank());
        let u = self.u.columns(0, k);
        let v = self.v.columns(0, k);
        let mut us = u.into_owned();
        for j in 0..k {
            us.column_mut(j).scale_mut(self.singular_values[j]);
        }
        us * v.transpose()
    }
}

/// Unit vector spanning the (right) null space of a 3×4 matrix, computed as the
/// generalized cross product of its three rows. Returns `None` for rank < 3.
pub fn null_vector_3x4(p: &nalgebra::Matrix3x4<f64>) -> Option<nalgebra::Vector4<f64>> {
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        nalgebra::Matrix3::from_fn(|i, j| p[(i, cols[j])]).determinant()
    };
    let c = nalgebra::Vector4::new(minor(0), -minor(1), minor(2), -minor(3));
    let n = c.norm();
    let scale = p.norm().powi(3);
    if n == 0.0 || n <= 1e-14 * scale {
        return None;
    }
    Some(c / n)
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn sign_normalize<S>(v: &mut nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>)
where
    S: nalgebra::StorageMut<f64, nalgebra::Dyn, nalgebra::U1>,
{
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r: usize, c: usize, seed: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |i, j| ((i * 31 + j * 17) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn reconstructs_all_shapes() {
        for &(r, c) in &[(6, 5), (30, 200), (200, 30), (9, 9), (1, 4), (4, 1)] {
            let a = sample(r, c, 0.3);
            let svd = ThinSvd::new(&a);
            let back = svd.truncated(r.min(c));
            assert!((&back - &a).norm() < 1e-10 * a.norm().max(1.0), "{r}x{c}");
            for w in svd.singular_values.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
            let utu = svd.u.transpose() * &svd.u;
            assert!((utu - DMatrix::identity(r.min(c), r.min(c))).norm() < 1e-10);
        }
    }

    #[test]
    fn null_vector_of_canonical_camera() {
        let c = null_vector_3x4(&nalgebra::Matrix3x4::identity()).unwrap();
        assert!((c.abs() - nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0)).norm() < 1e-15);
        let p = nalgebra::Matrix3x4::from_fn(|i, j| ((i * 5 + j * 3) as f64).cos() + if i == j { 1.5 } else { 0.0 });
        let c = null_vector_3x4(&p).unwrap();
        assert!((p * c).norm() < 1e-13);
    }
}
