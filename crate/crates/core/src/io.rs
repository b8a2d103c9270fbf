//! On-disk formats: track CSVs, measurement matrices with a JSON sidecar,
//! config files, scene bundles and solver results.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless and identical inputs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3x4, Vector3, Vector4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::factorization::{CorrespondenceTracks, DepthAssignment, FactorizationError, MeasurementMatrix};
use crate::geometry::{CameraMatrix, GeometryError, HomPoint2, HomPoint3};
use crate::selfcalib::{CalibError, ImageFrame, Intrinsics, PlaneAtInfinity};
use crate::solver::{LossRecord, SolveResult};
use crate::synth::{GroundTruthScene, SceneConfig, SyntheticInstance};

pub const SCENE_FILE: &str = "scene.json";
pub const POINTS_FILE: &str = "points.csv";
pub const CAMERAS_FILE: &str = "cameras.csv";
pub const DEPTHS_FILE: &str = "depths.csv";
pub const MASK_FILE: &str = "mask.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const MEASUREMENT_FILE: &str = "measurement.csv";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Calib(#[from] CalibError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), message: message.into() }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Reads a config from TOML (`.toml`) or JSON (anything else).
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    parse_config(path, &text)
}

pub fn parse_config<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        toml::from_str(text).map_err(|source| IoError::Toml { path: path.to_path_buf(), source })
    } else {
        serde_json::from_str(text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| IoError::Parse { path: path.to_path_buf(), line, message: format!("{field}: {e}") })
}

fn parse_usize(path: &Path, line: usize, field: &str, s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| IoError::Parse { path: path.to_path_buf(), line, message: format!("{field}: {e}") })
}

fn record_line(r: &csv::StringRecord) -> usize {
    r.position().map_or(0, |p| p.line() as usize)
}

// ---------------------------------------------------------------- tracks

/// Writes `view,track,x,y,w` with the raw homogeneous coordinates.
pub fn write_tracks_csv(path: &Path, tracks: &CorrespondenceTracks) -> Result<()> {
    let mut s = String::from("view,track,x,y,w\n");
    for i in 0..tracks.n_views() {
        for (j, p) in tracks.view(i).iter().enumerate() {
            let c = p.coords();
            s.push_str(&format!("{i},{j},{},{},{}\n", fmt(c.x), fmt(c.y), fmt(c.z)));
        }
    }
    write_text(path, &s)
}

/// Reads a `view,track,x,y[,w]` file. Dimensions are inferred from the
/// largest indices and every (view, track) pair must appear exactly once.
pub fn read_tracks_csv(path: &Path) -> Result<CorrespondenceTracks> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(cv), Some(ct), Some(cx), Some(cy)) = (col("view"), col("track"), col("x"), col("y")) else {
        return Err(IoError::Parse { path: path.to_path_buf(), line: 1, message: "header must contain view,track,x,y".into() });
    };
    let cw = col("w");
    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = record_line(&rec);
        let get = |c: usize, name: &str| {
            rec.get(c).ok_or_else(|| IoError::Parse { path: path.to_path_buf(), line, message: format!("missing field {name}") })
        };
        let view = parse_usize(path, line, "view", get(cv, "view")?)?;
        let track = parse_usize(path, line, "track", get(ct, "track")?)?;
        let x = parse_f64(path, line, "x", get(cx, "x")?)?;
        let y = parse_f64(path, line, "y", get(cy, "y")?)?;
        let w = match cw.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => parse_f64(path, line, "w", s)?,
            None => 1.0,
        };
        obs.push((line, view, track, Vector3::new(x, y, w)));
    }
    if obs.is_empty() {
        return Err(invalid(path, "no observations"));
    }
    let n = obs.iter().map(|o| o.1).max().unwrap_or(0) + 1;
    let m = obs.iter().map(|o| o.2).max().unwrap_or(0) + 1;
    let mut grid: Vec<Vec<Option<HomPoint2>>> = vec![vec![None; m]; n];
    for (line, i, j, c) in obs {
        let p = HomPoint2::new(c).map_err(|e| IoError::Parse { path: path.to_path_buf(), line, message: e.to_string() })?;
        if grid[i][j].replace(p).is_some() {
            return Err(IoError::Parse { path: path.to_path_buf(), line, message: format!("duplicate observation (view {i}, track {j})") });
        }
    }
    let mut points = Vec::with_capacity(n);
    for (i, row) in grid.into_iter().enumerate() {
        let mut v = Vec::with_capacity(m);
        for (j, p) in row.into_iter().enumerate() {
            v.push(p.ok_or_else(|| invalid(path, format!("track {j} is not observed in view {i}")))?);
        }
        points.push(v);
    }
    Ok(CorrespondenceTracks::new(points)?)
}

// ---------------------------------------------------------------- matrices

/// Raw matrix entries, one CSV row per matrix row, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|&v| fmt(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_path(path).map_err(csv_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = record_line(&rec);
        let row = rec.iter().enumerate().map(|(c, s)| parse_f64(path, line, &format!("column {c}"), s)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Shape and validity masks stored next to a measurement-matrix CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSidecar {
    pub n: usize,
    pub m: usize,
    pub row_valid: Vec<bool>,
    pub col_valid: Vec<bool>,
}

/// `foo.csv` → `foo.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_measurement(csv_path: &Path, m: &MeasurementMatrix) -> Result<()> {
    write_matrix_csv(csv_path, m.entries())?;
    let side = MatrixSidecar { n: m.n_views(), m: m.n_cols(), row_valid: m.row_valid().to_vec(), col_valid: m.col_valid().to_vec() };
    write_json(&sidecar_path(csv_path), &side)
}

/// Loads a measurement matrix; without a sidecar every row and column is valid.
pub fn read_measurement(csv_path: &Path) -> Result<MeasurementMatrix> {
    let entries = read_matrix_csv(csv_path)?;
    let side_path = sidecar_path(csv_path);
    if !side_path.exists() {
        if entries.nrows() % 3 != 0 {
            return Err(invalid(csv_path, format!("{} rows is not a multiple of 3", entries.nrows())));
        }
        return Ok(MeasurementMatrix::dense(entries)?);
    }
    let side: MatrixSidecar = read_json(&side_path)?;
    if entries.nrows() != 3 * side.n || entries.ncols() != side.m {
        return Err(invalid(
            csv_path,
            format!("matrix is {}×{}, sidecar declares n={} m={}", entries.nrows(), entries.ncols(), side.n, side.m),
        ));
    }
    Ok(MeasurementMatrix::new(entries, side.row_valid, side.col_valid)?)
}

// ---------------------------------------------------------------- scene bundles

/// Metadata file of a scene bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub config: SceneConfig,
    /// Pixel-frame intrinsics.
    #[serde(rename = "K_true")]
    pub k_true: [[f64; 3]; 3],
    /// Plane at infinity in the normalized-image projective frame.
    pub n_inf_true: [f64; 3],
    /// Frame of the stored measurement matrix.
    pub measurement_frame: ImageFrame,
    pub n_inliers: usize,
}

fn cameras_matrix(cams: &[CameraMatrix]) -> DMatrix<f64> {
    DMatrix::from_fn(cams.len(), 12, |i, k| cams[i].entries()[(k / 4, k % 4)])
}

/// Writes the full bundle into `dir` (created if missing).
pub fn write_scene_bundle(dir: &Path, inst: &SyntheticInstance) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let s = &inst.scene;
    let k = s.k_true.matrix();
    let meta = SceneMeta {
        config: s.config.clone(),
        k_true: [[k[(0, 0)], k[(0, 1)], k[(0, 2)]], [k[(1, 0)], k[(1, 1)], k[(1, 2)]], [k[(2, 0)], k[(2, 1)], k[(2, 2)]]],
        n_inf_true: [s.n_inf_true.0.x, s.n_inf_true.0.y, s.n_inf_true.0.z],
        measurement_frame: ImageFrame::Normalized,
        n_inliers: s.inlier_mask_true.iter().filter(|&&b| b).count(),
    };
    write_json(&dir.join(SCENE_FILE), &meta)?;

    let mut pts = String::from("x,y,z\n");
    for p in &s.points_metric {
        let e = p.dehomogenize()?;
        pts.push_str(&format!("{},{},{}\n", fmt(e.x), fmt(e.y), fmt(e.z)));
    }
    write_text(&dir.join(POINTS_FILE), &pts)?;
    write_matrix_csv(&dir.join(CAMERAS_FILE), &cameras_matrix(&s.cameras_metric))?;
    write_matrix_csv(&dir.join(DEPTHS_FILE), s.depths_true.as_matrix())?;
    let mut mask = String::from("track,inlier\n");
    for (j, &b) in s.inlier_mask_true.iter().enumerate() {
        mask.push_str(&format!("{j},{}\n", u8::from(b)));
    }
    write_text(&dir.join(MASK_FILE), &mask)?;
    write_tracks_csv(&dir.join(TRACKS_FILE), &s.tracks)?;
    write_measurement(&dir.join(MEASUREMENT_FILE), &inst.matrix)
}

fn read_points_csv(path: &Path) -> Result<Vec<HomPoint3>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(IoError::Parse { path: path.to_path_buf(), line, message: format!("expected 3 fields, found {}", rec.len()) });
        }
        let x = parse_f64(path, line, "x", &rec[0])?;
        let y = parse_f64(path, line, "y", &rec[1])?;
        let z = parse_f64(path, line, "z", &rec[2])?;
        out.push(HomPoint3::new(Vector4::new(x, y, z, 1.0))?);
    }
    Ok(out)
}

fn read_mask_csv(path: &Path) -> Result<Vec<bool>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = record_line(&rec);
        let v = rec.get(1).ok_or_else(|| IoError::Parse { path: path.to_path_buf(), line, message: "missing field inlier".into() })?;
        out.push(match v {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(IoError::Parse { path: path.to_path_buf(), line, message: format!("inlier: expected 0/1, got {other:?}") }),
        });
    }
    Ok(out)
}

/// Reads a bundle written by [`write_scene_bundle`].
pub fn read_scene_bundle(dir: &Path) -> Result<SyntheticInstance> {
    let meta: SceneMeta = read_json(&dir.join(SCENE_FILE))?;
    let points_metric = read_points_csv(&dir.join(POINTS_FILE))?;
    let cam_path = dir.join(CAMERAS_FILE);
    let cams = read_matrix_csv(&cam_path)?;
    if cams.ncols() != 12 {
        return Err(invalid(&cam_path, "expected 12 entries per camera"));
    }
    let cameras_metric = (0..cams.nrows())
        .map(|i| CameraMatrix::new(Matrix3x4::from_fn(|r, c| cams[(i, 4 * r + c)])))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let depths_true = DepthAssignment::new(read_matrix_csv(&dir.join(DEPTHS_FILE))?)?;
    let inlier_mask_true = read_mask_csv(&dir.join(MASK_FILE))?;
    let tracks = read_tracks_csv(&dir.join(TRACKS_FILE))?;
    let matrix = read_measurement(&dir.join(MEASUREMENT_FILE))?;
    let k_true = Intrinsics::new(nalgebra::Matrix3::from_fn(|r, c| meta.k_true[r][c]))?;
    let (n, m) = (meta.config.n_views, meta.config.m_points);
    let consistent = tracks.n_views() == n
        && tracks.n_tracks() == m
        && cameras_metric.len() == n
        && points_metric.len() == m
        && inlier_mask_true.len() == m
        && depths_true.n_views() == n
        && depths_true.n_tracks() == m;
    if !consistent {
        return Err(invalid(dir, format!("bundle files disagree with n={n}, m={m} in {SCENE_FILE}")));
    }
    let scene = GroundTruthScene {
        config: meta.config,
        points_metric,
        cameras_metric,
        depths_true,
        inlier_mask_true,
        tracks,
        k_true,
        n_inf_true: PlaneAtInfinity(Vector3::from(meta.n_inf_true)),
    };
    Ok(SyntheticInstance { scene, matrix })
}

// ---------------------------------------------------------------- results

pub fn write_result(path: &Path, result: &SolveResult) -> Result<()> {
    write_json(path, result)
}

pub fn read_result(path: &Path) -> Result<SolveResult> {
    read_json(path)
}

pub fn write_loss_trace_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut s = String::from("iteration,num,proj,daq,total,best\n");
    for r in trace {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.iteration, fmt(r.num), fmt(r.proj), fmt(r.daq), fmt(r.total), fmt(r.best)));
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("scpsfm-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_fn(6, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let p = tmp("mat").join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }

    #[test]
    fn tracks_default_weight_and_missing_observation() {
        let d = tmp("tracks");
        let p = d.join("t.csv");
        write_text(&p, "view,track,x,y\n0,0,1,2\n1,0,3,4\n0,1,5,6\n1,1,7,8\n").unwrap();
        let t = read_tracks_csv(&p).unwrap();
        assert_eq!((t.n_views(), t.n_tracks()), (2, 2));
        assert_eq!(t.get(1, 1).coords(), &Vector3::new(7.0, 8.0, 1.0));

        write_text(&p, "view,track,x,y\n0,0,1,2\n1,0,3,4\n0,1,5,6\n").unwrap();
        assert!(matches!(read_tracks_csv(&p), Err(IoError::Invalid { .. })));

        write_text(&p, "view,track,x,y\n0,0,1,2\n1,0,oops,4\n").unwrap();
        match read_tracks_csv(&p) {
            Err(IoError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.starts_with("x:"));
            }
            other => panic!("{other:?}"),
        }
    }
}
