use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use proptest::prelude::*;
use scpsfm::eval::{error_3d, Alignment};
use scpsfm::geometry::{project_point, reprojection_cross_residual, CameraMatrix};
use scpsfm::selfcalib::*;
use scpsfm::synth::{generate_scene, GroundTruthScene, SceneConfig};

fn vga() -> Intrinsics {
    Intrinsics::from_params(800.0, 800.0, 0.0, 320.0, 240.0).unwrap()
}

fn scene(n: usize, seed: u64) -> GroundTruthScene {
    generate_scene(&SceneConfig { n_views: n, m_points: 50, outlier_rate: 0.0, seed, ..Default::default() }).unwrap()
}

fn rank(m: &Matrix4<f64>) -> usize {
    let s = m.singular_values();
    s.iter().filter(|&&v| v > 1e-10 * s.max()).count()
}

#[test]
fn canonical_daq() {
    let q = daq_from_calibration(&Intrinsics::identity(), &PlaneAtInfinity::zero());
    assert_eq!(q.0, Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, 0.0)));
}

#[test]
fn daq_with_unit_z_plane() {
    let q = daq_from_calibration(&Intrinsics::identity(), &PlaneAtInfinity(Vector3::z()));
    let expect = Matrix4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 1.0);
    assert!((q.0 - expect).abs().max() < 1e-15);
    assert_eq!(rank(&q.0), 3);
}

#[test]
fn first_camera_projects_to_kkt() {
    let k = vga();
    let target = k.diac_matrix() / k.diac_matrix().norm();
    for n in [Vector3::zeros(), Vector3::new(0.3, -2.0, 0.7), Vector3::new(10.0, 5.0, -1.0)] {
        let w = diac_project(&CameraMatrix::canonical(), &daq_from_calibration(&k, &PlaneAtInfinity(n))).unwrap();
        assert!((w.matrix() - target).norm() < 1e-12);
    }
}

#[test]
fn metric_cameras_share_the_diac() {
    let s = scene(6, 1);
    let q = DualAbsoluteQuadric(Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, 0.0)));
    let target = s.k_true.diac_matrix() / s.k_true.diac_matrix().norm();
    for p in &s.cameras_metric {
        let w = diac_project(p, &q).unwrap();
        assert!((w.matrix() - target).norm() < 1e-12);
        let w7 = diac_project(p, &DualAbsoluteQuadric(q.0 * 7.0)).unwrap();
        assert!((w7.matrix() - w.matrix()).norm() < 1e-15);
    }
}

#[test]
fn residual_vanishes_at_ground_truth() {
    for seed in 0..10 {
        let s = scene(5, seed);
        let recon = s.clean_projective_reconstruction().unwrap();
        let k = s.k_in(ImageFrame::Normalized);
        let r = daq_residual(&recon.cameras, &k, &s.n_inf_true);
        assert!(r.skipped_views.is_empty());
        assert!(r.value < 1e-6, "seed {seed}: η = {}", r.value);
        for axis in 0..3 {
            let mut n = s.n_inf_true;
            n.0[axis] += 0.1;
            assert!(daq_residual(&recon.cameras, &k, &n).value > 1e-3);
        }
    }
}

#[test]
fn single_camera_residual_is_zero() {
    let r = daq_residual(&[CameraMatrix::canonical()], &vga(), &PlaneAtInfinity(Vector3::new(1.0, 2.0, 3.0)));
    assert_eq!(r.value, 0.0);
}

#[test]
fn diac_extraction_examples() {
    let k = intrinsics_from_diac(&Diac::from_matrix(Matrix3::identity()).unwrap()).unwrap();
    assert!((k.matrix() - Matrix3::identity()).norm() < 1e-15);

    let kt = vga();
    let got = intrinsics_from_diac(&Diac::from_matrix(kt.diac_matrix()).unwrap()).unwrap();
    assert!(((got.matrix() - kt.matrix()).norm() / kt.matrix().norm()) < 1e-9);

    let indefinite = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let bad = Diac::from_matrix(indefinite).and_then(|d| intrinsics_from_diac(&d));
    assert!(bad.is_err());
}

#[test]
fn identity_upgrade() {
    let s = scene(3, 2);
    let recon = s.clean_projective_reconstruction().unwrap();
    let up = metric_upgrade(&recon, &Intrinsics::identity(), &PlaneAtInfinity::zero()).unwrap();
    for (a, b) in recon.points.iter().zip(&up.points) {
        assert!((a.coords() - b.coords()).norm() < 1e-14);
    }
}

#[test]
fn ground_truth_upgrade_is_metric() {
    for seed in 0..5 {
        let s = scene(6, seed);
        let recon = s.clean_projective_reconstruction().unwrap();
        let up = metric_upgrade(&recon, &s.k_in(ImageFrame::Normalized), &s.n_inf_true).unwrap();
        let e = error_3d(&up.points, &s.points_metric, &[true; 50], Alignment::Similarity).unwrap();
        assert!(e < 1e-6, "seed {seed}: {e}");
        // The upgraded first camera is K[I|0] up to scale.
        let mut expect = Matrix3x4::zeros();
        expect.fixed_view_mut::<3, 3>(0, 0).copy_from(s.k_in(ImageFrame::Normalized).matrix());
        assert!(up.cameras[0].projectively_equal(&CameraMatrix::new(expect).unwrap()));
    }
}

#[test]
fn calibration_json_shape() {
    let est = CalibrationEstimate::new(vga().matrix(), &Vector3::new(0.1, 0.2, 0.3), ImageFrame::Pixel);
    let v: serde_json::Value = serde_json::to_value(&est).unwrap();
    assert_eq!(v["frame"], "pixel");
    assert_eq!(v["K"][0][0], 800.0);
    assert_eq!(v["n_inf"][2], 0.3);
    let back: CalibrationEstimate = serde_json::from_value(v).unwrap();
    assert_eq!(back, est);
}

fn arb_k() -> impl Strategy<Value = Intrinsics> {
    (0.5f64..3.0, 0.5f64..3.0, -0.2f64..0.2, -0.5f64..0.5, -0.5f64..0.5)
        .prop_map(|(fx, fy, s, cx, cy)| Intrinsics::from_params(fx, fy, s, cx, cy).unwrap())
}

fn arb_n() -> impl Strategy<Value = PlaneAtInfinity> {
    prop::array::uniform3(-2.0f64..2.0).prop_map(|a| PlaneAtInfinity(Vector3::from(a)))
}

proptest! {
    #[test]
    fn plane_at_infinity_is_daq_null_space(k in arb_k(), n in arb_n()) {
        let q = daq_from_calibration(&k, &n);
        prop_assert!((q.0 * n.homogeneous()).norm() <= 1e-10 * q.0.norm());
        prop_assert!((q.0 - q.0.transpose()).norm() < 1e-12);
        prop_assert_eq!(rank(&q.0), 3);
    }

    #[test]
    fn diac_projection_is_scale_invariant(k in arb_k(), n in arb_n(), a in 0.1f64..10.0, b in 0.1f64..10.0) {
        let q = daq_from_calibration(&k, &n);
        let p = Matrix3x4::new(0.9, 0.1, -0.2, 0.3, -0.1, 1.1, 0.2, -0.4, 0.05, -0.1, 1.0, 0.2);
        let w1 = diac_project(&CameraMatrix::new(p).unwrap(), &q).unwrap();
        let w2 = diac_project(&CameraMatrix::new(p * a).unwrap(), &DualAbsoluteQuadric(q.0 * b)).unwrap();
        prop_assert!((w1.matrix() - w2.matrix()).norm() < 1e-10);
    }

    #[test]
    fn diac_round_trip(k in arb_k()) {
        let omega = k.diac_matrix() / k.diac_matrix().norm();
        let got = intrinsics_from_diac(&Diac::from_matrix(omega).unwrap()).unwrap();
        prop_assert!((got.matrix() - k.matrix()).norm() < 1e-9 * k.matrix().norm());
    }

    #[test]
    fn upgrade_homographies_are_inverse(k in arb_k(), n in arb_n()) {
        let (h, h_inv) = metric_upgrade_homography(&k, &n).unwrap();
        prop_assert!((h * h_inv - Matrix4::identity()).norm() < 1e-12 * (1.0 + h.norm() * h_inv.norm()));
    }

    #[test]
    fn residual_zero_on_metric_stacks(seed in 0u64..200) {
        let s = scene(4, seed);
        let k = s.k_true;
        let p0 = s.cameras_metric[0].entries();
        let mut r0 = k.matrix().try_inverse().unwrap() * p0;
        let d = r0.fixed_view::<3, 3>(0, 0).determinant();
        r0 /= d.cbrt();
        // Move to the frame of camera 0: X' = [R0 t0; 0 1] X.
        let mut g = Matrix4::identity();
        g.fixed_view_mut::<3, 4>(0, 0).copy_from(&r0);
        let g_inv = g.try_inverse().unwrap();
        // Then K[I|0]·[[K⁻¹, 0], [0, 1]] = [I|0]; the DAQ becomes diag(KKᵀ, 0).
        let mut h_inv = Matrix4::identity();
        h_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&k.matrix().try_inverse().unwrap());
        let projective: Vec<CameraMatrix> =
            s.cameras_metric.iter().map(|c| CameraMatrix::new(c.entries() * g_inv * h_inv).unwrap()).collect();
        prop_assert!(projective[0].projectively_equal(&CameraMatrix::canonical()));
        prop_assert!(daq_residual(&projective, &k, &PlaneAtInfinity::zero()).value < 1e-9);
    }

    #[test]
    fn upgrade_preserves_projections(k in arb_k(), n in arb_n(), seed in 0u64..50) {
        let s = scene(3, seed);
        let recon = s.clean_projective_reconstruction().unwrap();
        let up = metric_upgrade(&recon, &k, &n).unwrap();
        for i in 0..3 {
            for j in (0..50).step_by(7) {
                let x = project_point(&recon.cameras[i], &recon.points[j]).unwrap();
                prop_assert!(reprojection_cross_residual(&x, &up.cameras[i], &up.points[j]) < 1e-9);
            }
        }
    }
}
