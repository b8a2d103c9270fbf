use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3, SVD};
use proptest::prelude::*;
use scpsfm::factorization::*;
use scpsfm::geometry::{project_point, reprojection_cross_residual, HomPoint2, ProjectiveReconstruction};
use scpsfm::selfcalib::ImageFrame;
use rand::Rng;
use scpsfm::synth::{generate_scene, rng_for, GroundTruthScene, SceneConfig};

fn clean_scene(n: usize, m: usize, seed: u64) -> GroundTruthScene {
    generate_scene(&SceneConfig { n_views: n, m_points: m, outlier_rate: 0.0, seed, ..Default::default() }).unwrap()
}

fn normalized_matrix(s: &GroundTruthScene) -> MeasurementMatrix {
    s.measurement_matrix(ImageFrame::Normalized)
}

/// Independent truncated-SVD oracle: nalgebra's full SVD, rebuilt by loops.
fn truncated_oracle(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = SVD::new(a.clone(), true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for &l in idx.iter().take(k) {
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                out[(r, c)] += u[(r, l)] * svd.singular_values[l] * vt[(l, c)];
            }
        }
    }
    out
}

fn det_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, 99);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn single_entry_column() {
    let t = CorrespondenceTracks::new(vec![vec![HomPoint2::new(Vector3::new(1.0, 2.0, 1.0)).unwrap()]]).unwrap();
    let d = DepthAssignment::new(DMatrix::from_element(1, 1, 2.0)).unwrap();
    let m = build_measurement_matrix(&t, &d).unwrap();
    assert_eq!(m.entries().column(0).as_slice(), &[2.0, 4.0, 2.0]);
}

#[test]
fn unit_depths_stack_raw_points() {
    let s = clean_scene(3, 10, 1);
    let m = build_measurement_matrix(&s.tracks, &DepthAssignment::ones(3, 10)).unwrap();
    for i in 0..3 {
        for j in 0..10 {
            let x = s.tracks.get(i, j).coords();
            for r in 0..3 {
                assert_eq!(m.entries()[(3 * i + r, j)], x[r]);
            }
        }
    }
    assert!(m.row_valid().iter().all(|&b| b) && m.col_valid().iter().all(|&b| b));
}

#[test]
fn dimension_mismatch() {
    let s = clean_scene(3, 10, 1);
    assert!(matches!(build_measurement_matrix(&s.tracks, &DepthAssignment::ones(3, 9)), Err(FactorizationError::DimensionMismatch(_))));
}

#[test]
fn true_depths_give_rank_four() {
    for seed in 0..5 {
        let sv = valid_singular_values(&normalized_matrix(&clean_scene(10, 200, seed)));
        assert!(sv[4] / sv[3] < 1e-8, "seed {seed}: σ5/σ4 = {}", sv[4] / sv[3]);
    }
}

#[test]
fn fundamental_on_exact_pair() {
    let s = clean_scene(2, 30, 3);
    let t = s.tracks_in(ImageFrame::Normalized);
    let f = estimate_fundamental(t.view(0), t.view(1)).unwrap();
    assert!((f.entries().norm() - 1.0).abs() < 1e-12);
    assert!(f.entries().singular_values().min() < 1e-12);
    for j in 0..30 {
        assert!(f.residual(t.get(0, j), t.get(1, j)).abs() < 1e-9);
    }
}

#[test]
fn fundamental_on_pure_rotation() {
    // x₂ ∼ K·R·K⁻¹·x₁: every F = [e]ₓ·KRK⁻¹ fits, the estimate must still fit.
    let k = Matrix3::new(1.25, 0.0, 0.0, 0.0, 1.25, 0.0, 0.0, 0.0, 1.0);
    let r = *nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.15).matrix();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for j in 0..20 {
        let p = Vector3::new(((j * 7) as f64).sin() * 0.9, ((j * 3) as f64).cos() * 0.9, 2.0 + j as f64 * 0.1);
        a.push(HomPoint2::new(k * p).unwrap());
        b.push(HomPoint2::new(k * r * p).unwrap());
    }
    let f = estimate_fundamental(&a, &b).unwrap();
    for j in 0..20 {
        assert!(f.residual(&a[j], &b[j]).abs() < 1e-9);
    }
}

#[test]
fn seven_correspondences_insufficient() {
    let s = clean_scene(2, 10, 4);
    let r = estimate_fundamental(&s.tracks.view(0)[..7], &s.tracks.view(1)[..7]);
    assert!(matches!(r, Err(FactorizationError::InsufficientPoints { required: 8, got: 7 })));
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[test]
fn epipole_from_construction() {
    let e = Vector3::new(0.3, -1.2, 0.8);
    let h = Matrix3::new(1.0, 0.2, -0.1, 0.3, 0.9, 0.4, -0.2, 0.1, 1.1);
    let f = FundamentalMatrix::from_matrix(skew(&e) * h);
    let got = epipole(&f).unwrap();
    assert!(got.projectively_equal(&HomPoint2::new(e).unwrap()));
    let five = epipole(&FundamentalMatrix::from_matrix(skew(&e) * h * 5.0)).unwrap();
    assert!((five.coords() - got.coords()).norm() < 1e-12);
}

#[test]
fn epipole_null_space_residual() {
    let s = clean_scene(2, 30, 5);
    let t = s.tracks_in(ImageFrame::Normalized);
    let f = estimate_fundamental(t.view(0), t.view(1)).unwrap();
    let e = epipole(&f).unwrap();
    assert!((f.entries().transpose() * e.coords()).norm() < 1e-10);
    assert!((e.coords().norm() - 1.0).abs() < 1e-12);
}

#[test]
fn rank_one_fundamental_rejected() {
    let f = FundamentalMatrix::from_matrix(Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.5, -1.0, 2.0).transpose());
    assert!(epipole(&f).is_err());
}

#[test]
fn unit_strategy() {
    let s = clean_scene(3, 12, 6);
    let d = estimate_depths(&s.tracks, &DepthStrategy::Unit).unwrap();
    assert!(d.depths.as_matrix().iter().all(|&v| v == 1.0));
}

#[test]
fn ground_truth_strategy_passes_through() {
    let s = clean_scene(3, 12, 6);
    let d = estimate_depths(&s.tracks, &DepthStrategy::GroundTruth(s.depths_true.clone())).unwrap();
    assert_eq!(d.depths, s.depths_true);
}

#[test]
fn chain_recovers_depths_up_to_view_scale() {
    let s = clean_scene(4, 40, 7);
    let t = s.tracks_in(ImageFrame::Normalized);
    let gt = s.depths_true.as_matrix();
    // Seeded with the true first-view depths, every later view is off by one
    // scale factor.
    let first: Vec<f64> = (0..40).map(|j| gt[(0, j)]).collect();
    let est = propagate_depths(&t, &first).unwrap();
    assert!(est.degenerate_tracks.iter().all(|&d| !d));
    for i in 1..4 {
        let r0 = est.depths.get(i, 0) / gt[(i, 0)];
        for j in 1..40 {
            let r = est.depths.get(i, j) / gt[(i, j)];
            assert!((r / r0 - 1.0).abs() < 1e-6, "view {i} track {j}");
        }
    }
    // With unit first-view depths the ratio to ground truth varies per track by
    // exactly the true first-view depth.
    let est = estimate_depths(&t, &DepthStrategy::FundamentalChain).unwrap();
    assert!(est.depths.as_matrix().row(0).iter().all(|&v| v == 1.0));
    for i in 1..4 {
        let r0 = est.depths.get(i, 0) * gt[(0, 0)] / gt[(i, 0)];
        for j in 1..40 {
            let r = est.depths.get(i, j) * gt[(0, j)] / gt[(i, j)];
            assert!((r / r0 - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn chain_depths_rebuild_rank_four() {
    let s = clean_scene(5, 50, 8);
    let t = s.tracks_in(ImageFrame::Normalized);
    let est = estimate_depths(&t, &DepthStrategy::FundamentalChain).unwrap();
    let sv = valid_singular_values(&build_measurement_matrix(&t, &est.depths).unwrap());
    assert!(sv[4] / sv[3] < 1e-8);
}

#[test]
fn track_at_epipole_is_flagged() {
    let s = clean_scene(2, 20, 10);
    let mut t = s.tracks_in(ImageFrame::Normalized);
    let f = estimate_fundamental(t.view(0), t.view(1)).unwrap();
    let e = epipole(&f).unwrap();
    t.set(1, 3, e);
    let est = propagate_depths(&t, &[1.0; 20]).unwrap();
    assert!(est.degenerate_tracks[3]);
    assert_eq!(est.depths.get(1, 3), 1.0);
}

#[test]
fn rank4_idempotent_on_low_rank() {
    let a = det_matrix(9, 4, 1) * det_matrix(4, 7, 2);
    let m = MeasurementMatrix::dense(a.clone()).unwrap();
    let p = rank4_project(&m).unwrap();
    assert!((p.entries() - a).norm() < 1e-10);
}

#[test]
fn rank4_matches_oracle() {
    let a = det_matrix(6, 5, 3);
    let p = rank4_project(&MeasurementMatrix::dense(a.clone()).unwrap()).unwrap();
    assert!((p.entries() - truncated_oracle(&a, 4)).norm() < 1e-10);
}

#[test]
fn rank4_leaves_padding() {
    let a = det_matrix(9, 8, 4);
    let padded = MeasurementMatrix::dense(a.clone()).unwrap();
    let mut e = DMatrix::zeros(12, 10);
    e.view_mut((0, 0), (9, 8)).copy_from(&a);
    let mut rows = vec![true; 4];
    rows[3] = false;
    let mut cols = vec![true; 10];
    cols[8] = false;
    cols[9] = false;
    let m = MeasurementMatrix::new(e, rows, cols).unwrap();
    let p = rank4_project(&m).unwrap();
    assert!(p.entries().rows(9, 3).iter().all(|&v| v == 0.0));
    assert!(p.entries().columns(8, 2).iter().all(|&v| v == 0.0));
    let dense = rank4_project(&padded).unwrap();
    assert!((p.valid_block() - dense.entries()).norm() < 1e-12);
}

#[test]
fn rank4_too_small() {
    let m = MeasurementMatrix::dense(det_matrix(6, 3, 5)).unwrap();
    assert!(rank4_project(&m).is_err());
}

fn factor_residual(m: &MeasurementMatrix, r: &ProjectiveReconstruction) -> f64 {
    let b = m.valid_block();
    (&b - r.camera_stack() * r.point_matrix()).norm() / b.norm()
}

#[test]
fn factorization_of_clean_scene() {
    let m = normalized_matrix(&clean_scene(10, 200, 11));
    let r = sturm_triggs_factorize(&m).unwrap();
    assert_eq!((r.n_views(), r.n_points()), (10, 200));
    assert!(factor_residual(&m, &r) < 1e-9);
}

#[test]
fn repeated_camera_is_degenerate_or_flagged() {
    let s = clean_scene(2, 20, 12);
    let v0: Vec<HomPoint2> = s.tracks.view(0).to_vec();
    let t = CorrespondenceTracks::new(vec![v0.clone(), v0.clone(), v0]).unwrap();
    let m = build_measurement_matrix(&t, &DepthAssignment::ones(3, 20)).unwrap();
    match sturm_triggs_factorize(&m) {
        Err(FactorizationError::RankDeficient(_)) => {}
        Ok(r) => assert!(factor_residual(&m, &r) < 1e-6),
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn factorization_fixed_point() {
    let m = rank4_project(&MeasurementMatrix::dense(det_matrix(12, 15, 6)).unwrap()).unwrap();
    let r1 = sturm_triggs_factorize(&m).unwrap();
    let rebuilt = MeasurementMatrix::dense(r1.camera_stack() * r1.point_matrix()).unwrap();
    let r2 = sturm_triggs_factorize(&rebuilt).unwrap();
    assert!((factor_residual(&m, &r1) - factor_residual(&rebuilt, &r2)).abs() < 1e-12);
}

#[test]
fn normalize_first_camera_examples() {
    let m = normalized_matrix(&clean_scene(4, 30, 13));
    let r = sturm_triggs_factorize(&m).unwrap();
    let n = normalize_first_camera(&r).unwrap();
    let canon = Matrix3x4::identity();
    assert!((n.cameras[0].entries() - canon).abs().max() < 1e-10);
    for i in 0..4 {
        for j in 0..30 {
            let x = project_point(&r.cameras[i], &r.points[j]).unwrap();
            assert!(reprojection_cross_residual(&x, &n.cameras[i], &n.points[j]) < 1e-9);
        }
    }
    let again = normalize_first_camera(&n).unwrap();
    for (a, b) in n.points.iter().zip(&again.points) {
        assert!((a.coords() - b.coords()).norm() <= 1e-12 * a.coords().norm().max(1.0));
    }
}

#[test]
fn weighted_residual_examples() {
    let s = clean_scene(4, 20, 14);
    let m = normalized_matrix(&s);
    let r = sturm_triggs_factorize(&m).unwrap();
    assert_eq!(weighted_reprojection_residual(&m, &r, &[0.0; 20]).unwrap(), 0.0);
    assert!(weighted_reprojection_residual(&m, &r, &[1.0; 20]).unwrap() < 1e-9 * m.entries().norm());

    // Corrupt one column: with zero weight on it, the residual equals that of
    // the same reconstruction restricted to the other columns.
    let mut e = m.entries().clone();
    e.column_mut(5).scale_mut(-3.0);
    e[(4, 5)] += 1.0;
    let bad = MeasurementMatrix::dense(e.clone()).unwrap();
    let rb = sturm_triggs_factorize(&rank4_project(&bad).unwrap()).unwrap();
    let mut w = vec![1.0; 20];
    w[5] = 0.0;
    let masked = weighted_reprojection_residual(&bad, &rb, &w).unwrap();
    let keep: Vec<usize> = (0..20).filter(|&j| j != 5).collect();
    let sub = MeasurementMatrix::dense(e.select_columns(&keep)).unwrap();
    let rsub = ProjectiveReconstruction::new(rb.cameras.clone(), keep.iter().map(|&j| rb.points[j]).collect());
    let direct = weighted_reprojection_residual(&sub, &rsub, &[1.0; 19]).unwrap();
    assert!((masked - direct).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank4_is_idempotent_and_optimal(rows in 4usize..=8, cols in 4usize..=8, seed in 0u64..10_000, lr in 1usize..=4) {
        let a = det_matrix(rows, cols, seed);
        // Valid measurement matrices need 3n rows; embed arbitrary shapes in a
        // dense block of 3·⌈rows/3⌉ rows.
        let r3 = rows.div_ceil(3) * 3;
        let mut e = DMatrix::zeros(r3, cols);
        e.view_mut((0, 0), (rows, cols)).copy_from(&a);
        e.view_mut((rows, 0), (r3 - rows, cols)).fill(0.25);
        let Ok(m) = MeasurementMatrix::dense(e.clone()) else { return Ok(()) };
        prop_assume!(r3.min(cols) >= 4);
        let p = rank4_project(&m).unwrap();
        let pp = rank4_project(&p).unwrap();
        prop_assert!((p.entries() - pp.entries()).norm() < 1e-10 * e.norm().max(1.0));
        prop_assert!((p.entries() - truncated_oracle(&e, 4)).norm() < 1e-9 * e.norm().max(1.0));
        // Any other rank-≤4 matrix is at least as far from M.
        let other = truncated_oracle(&(det_matrix(r3, cols, seed + 1) * 0.1 + &e), lr);
        prop_assert!((&e - p.entries()).norm() <= (&e - other).norm() + 1e-10);
    }

    #[test]
    fn factorize_after_projection(seed in 0u64..10_000, n in 2usize..=6, m in 4usize..=20) {
        let a = det_matrix(3 * n, m, seed);
        let p = rank4_project(&MeasurementMatrix::dense(a.clone()).unwrap()).unwrap();
        match sturm_triggs_factorize(&p) {
            Ok(r) => prop_assert!((p.entries() - r.camera_stack() * r.point_matrix()).norm() < 1e-8 * a.norm()),
            Err(FactorizationError::RankDeficient(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn normalization_preserves_projections(seed in 0u64..500) {
        let m = normalized_matrix(&clean_scene(3, 12, seed));
        let r = sturm_triggs_factorize(&m).unwrap();
        let n = normalize_first_camera(&r).unwrap();
        for i in 0..3 {
            for j in 0..12 {
                let x = project_point(&r.cameras[i], &r.points[j]).unwrap();
                prop_assert!(reprojection_cross_residual(&x, &n.cameras[i], &n.points[j]) < 1e-9);
            }
        }
    }

    #[test]
    fn fundamental_satisfies_own_inputs(seed in 0u64..500) {
        let t = clean_scene(2, 12, seed).tracks_in(ImageFrame::Normalized);
        let f = estimate_fundamental(t.view(0), t.view(1)).unwrap();
        for j in 0..12 {
            prop_assert!(f.residual(t.get(0, j), t.get(1, j)).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_propagation_is_scale_covariant(seed in 0u64..500, s in 0.1f64..10.0) {
        let t = clean_scene(3, 15, seed).tracks_in(ImageFrame::Normalized);
        let first: Vec<f64> = (0..15).map(|j| 1.0 + 0.1 * j as f64).collect();
        let scaled: Vec<f64> = first.iter().map(|v| v * s).collect();
        let a = propagate_depths(&t, &first).unwrap();
        let b = propagate_depths(&t, &scaled).unwrap();
        for (x, y) in a.depths.as_matrix().iter().zip(b.depths.as_matrix().iter()) {
            prop_assert!((x * s - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }
}
