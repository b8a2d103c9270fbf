//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use scpsfm::eval;
use scpsfm::factorization::{self, MeasurementMatrix};
use scpsfm::selfcalib::ImageFrame;
use scpsfm::solver::{self, SolveResult, SolverConfig};
use scpsfm::synth::{self, SceneConfig, SyntheticInstance};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Row lists to a matrix; rows must be non-empty and of equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err("matrix must be non-empty".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("row {i} has {} entries, expected {cols}", rows[i].len()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn measurement_from_rows(rows: &[Vec<f64>]) -> Result<MeasurementMatrix, String> {
    MeasurementMatrix::dense(matrix_from_rows(rows)?).map_err(|e| e.to_string())
}

/// Solver config from optional JSON (missing fields take defaults).
pub fn solver_config(json: Option<&str>) -> Result<SolverConfig, String> {
    json.map_or_else(|| Ok(SolverConfig::default()), |s| serde_json::from_str(s).map_err(|e| format!("solver config: {e}")))
}

pub fn synthesize_instance(n_views: usize, m_points: usize, outlier_rate: f64, noise_sigma: f64, seed: u64) -> Result<SyntheticInstance, String> {
    synth::synthesize(&SceneConfig { n_views, m_points, outlier_rate, noise_sigma, seed, ..Default::default() }).map_err(|e| e.to_string())
}

pub fn solve_rows(rows: &[Vec<f64>], config: Option<&str>) -> Result<SolveResult, String> {
    let m = measurement_from_rows(rows)?;
    solver::solve(&m, &solver_config(config)?).map_err(|e| e.to_string())
}

/// Synthetic scene: the normalized-frame measurement matrix, the true inlier
/// mask, normalized-frame `K` and the metric points.
#[pyfunction]
#[pyo3(signature = (n_views=10, m_points=200, outlier_rate=0.0, noise_sigma=0.0, seed=0))]
fn synthesize<'py>(py: Python<'py>, n_views: usize, m_points: usize, outlier_rate: f64, noise_sigma: f64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let inst = synthesize_instance(n_views, m_points, outlier_rate, noise_sigma, seed).map_err(value_err)?;
    let s = &inst.scene;
    let k = s.k_in(ImageFrame::Normalized);
    let points: Vec<Vec<f64>> = s
        .points_metric
        .iter()
        .map(|p| p.dehomogenize().map(|e| vec![e.x, e.y, e.z]))
        .collect::<Result<_, _>>()
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("matrix", matrix_to_rows(inst.matrix.entries()))?;
    d.set_item("inlier_mask", s.inlier_mask_true.clone())?;
    d.set_item("K", matrix_to_rows(&DMatrix::from_column_slice(3, 3, k.matrix().as_slice())))?;
    d.set_item("points", points)?;
    Ok(d)
}

/// Runs the solver. `config` is a JSON object of solver fields.
#[pyfunction]
#[pyo3(signature = (matrix, config=None))]
fn solve<'py>(py: Python<'py>, matrix: Vec<Vec<f64>>, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| solve_rows(&matrix, config)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("soft_weights", r.soft_weights.clone())?;
    d.set_item("inlier_mask", r.inlier_mask.clone())?;
    d.set_item("K", r.calibration.k.iter().map(|row| row.to_vec()).collect::<Vec<_>>())?;
    d.set_item("n_inf", r.calibration.n_inf.to_vec())?;
    d.set_item("iterations", r.diagnostics.iterations)?;
    d.set_item("converged", r.diagnostics.converged)?;
    d.set_item("degenerate", r.is_degenerate())?;
    d.set_item("best_loss", r.diagnostics.best_loss)?;
    d.set_item("result_json", serde_json::to_string(&r).map_err(value_err)?)?;
    Ok(d)
}

/// `(precision, recall, f1)`.
#[pyfunction]
fn f1_score(pred: Vec<bool>, truth: Vec<bool>) -> PyResult<(f64, f64, f64)> {
    let r = eval::f1_score(&pred, &truth).map_err(value_err)?;
    Ok((r.precision, r.recall, r.f1))
}

#[pyfunction]
fn rank4_project(matrix: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let m = measurement_from_rows(&matrix).map_err(value_err)?;
    let p = factorization::rank4_project(&m).map_err(value_err)?;
    Ok(matrix_to_rows(p.entries()))
}

#[pyfunction]
fn singular_values(matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let m = measurement_from_rows(&matrix).map_err(value_err)?;
    Ok(factorization::valid_singular_values(&m))
}

type Rows = Vec<Vec<f64>>;

/// Sturm/Triggs factorization: `(cameras as 3×4 row lists, homogeneous points)`.
#[pyfunction]
fn factorize(matrix: Vec<Vec<f64>>) -> PyResult<(Vec<Rows>, Rows)> {
    let m = measurement_from_rows(&matrix).map_err(value_err)?;
    let r = factorization::sturm_triggs_factorize(&m).map_err(value_err)?;
    let cams = r
        .cameras
        .iter()
        .map(|c| (0..3).map(|i| (0..4).map(|j| c.entries()[(i, j)]).collect()).collect())
        .collect();
    let pts = r.points.iter().map(|p| p.coords().iter().copied().collect()).collect();
    Ok((cams, pts))
}

#[pymodule]
fn scpsfm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(rank4_project, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(factorize, m)?)?;
    Ok(())
}
