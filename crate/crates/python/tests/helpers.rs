use scpsfm_py::*;

#[test]
fn rows_round_trip() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
    let m = matrix_from_rows(&rows).unwrap();
    assert_eq!((m.nrows(), m.ncols()), (2, 3));
    assert_eq!(m[(1, 0)], 4.0);
    assert_eq!(matrix_to_rows(&m), rows);
}

#[test]
fn ragged_or_empty_rows_are_rejected() {
    assert!(matrix_from_rows(&[]).is_err());
    assert!(matrix_from_rows(&[vec![]]).is_err());
    let e = matrix_from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
    assert!(e.contains("row 1"), "{e}");
    // Rows must stack whole views.
    assert!(measurement_from_rows(&[vec![1.0; 4], vec![1.0; 4]]).is_err());
}

#[test]
fn config_json_defaults_and_rejects_unknown_fields() {
    assert_eq!(solver_config(None).unwrap().beta, 1.0);
    let c = solver_config(Some(r#"{"beta": 0.0, "max_iters": 7}"#)).unwrap();
    assert_eq!((c.beta, c.max_iters, c.alpha), (0.0, 7, 1.0));
    assert!(solver_config(Some(r#"{"bogus": 1}"#)).unwrap_err().contains("bogus"));
}

#[test]
fn solve_through_rows_matches_direct_solve() {
    let inst = synthesize_instance(4, 30, 0.2, 0.0, 5).unwrap();
    let rows = matrix_to_rows(inst.matrix.entries());
    let cfg = r#"{"max_iters": 40}"#;
    let a = solve_rows(&rows, Some(cfg)).unwrap();
    let b = scpsfm::solver::solve(&inst.matrix, &solver_config(Some(cfg)).unwrap()).unwrap();
    assert_eq!(a.soft_weights, b.soft_weights);
    assert_eq!(a.calibration, b.calibration);
    assert!(synthesize_instance(4, 30, 1.0, 0.0, 5).is_err());
}
