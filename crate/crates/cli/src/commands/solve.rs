use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use scpsfm::factorization::{build_measurement_matrix, estimate_depths, DepthStrategy, MeasurementMatrix};
use scpsfm::io::{read_scene_bundle, read_tracks_csv, write_json, write_loss_trace_csv, write_result, write_text};
use scpsfm::selfcalib::{CalibrationEstimate, ImageFrame};
use scpsfm::solver::{SolveResult, SolverConfig, SolverError};
use scpsfm::synth::image_normalization;

use super::{bbox_normalization, from_rows, to_rows};
use crate::svg::{line_chart, Series};
use crate::{invalid, resolve_output_dir, CliError, ExperimentSpec, Result, SolveArgs};

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const PLOT_FILE: &str = "loss.svg";
/// Provenance of a solve, read back by `eval`.
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Bundle,
    Tracks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub input: PathBuf,
    pub input_kind: InputKind,
    /// Pixel → normalized transform applied to a track file.
    pub normalization: Option<[[f64; 3]; 3]>,
    /// Tracks left out because their depth could not be propagated.
    pub excluded_tracks: Vec<usize>,
    /// The calibration re-expressed in pixels (track files only).
    pub calibration_pixel: Option<CalibrationEstimate>,
    pub degenerate: bool,
    pub solver: SolverConfig,
}

struct Prepared {
    matrix: MeasurementMatrix,
    kind: InputKind,
    normalization: Option<nalgebra::Matrix3<f64>>,
    excluded: Vec<usize>,
}

fn prepare(input: &Path, image_size: Option<[f64; 2]>) -> Result<Prepared> {
    if input.is_dir() {
        let inst = read_scene_bundle(input)?;
        return Ok(Prepared { matrix: inst.matrix, kind: InputKind::Bundle, normalization: None, excluded: Vec::new() });
    }
    if !input.exists() {
        return Err(invalid(format!("{}: no such bundle directory or track file", input.display())));
    }
    let tracks = read_tracks_csv(input)?;
    let t = match image_size {
        Some(s) => image_normalization(s),
        None => bbox_normalization(&tracks),
    };
    let normalized = tracks.transformed(&t).map_err(invalid)?;
    let depths = estimate_depths(&normalized, &DepthStrategy::FundamentalChain).map_err(invalid)?;
    let matrix = build_measurement_matrix(&normalized, &depths.depths)
        .and_then(|m| m.with_columns_excluded(&depths.degenerate_tracks))
        .map_err(invalid)?;
    let excluded = (0..depths.degenerate_tracks.len()).filter(|&j| depths.degenerate_tracks[j]).collect();
    Ok(Prepared { matrix, kind: InputKind::Tracks, normalization: Some(t), excluded })
}

fn loss_plot(r: &SolveResult) -> String {
    let trace = &r.diagnostics.loss_trace;
    let series = |name: &str, f: fn(&scpsfm::solver::LossRecord) -> f64| Series {
        name: name.into(),
        points: trace.iter().map(|l| (l.iteration as f64, f(l), 0.0)).collect(),
    };
    line_chart(
        "loss",
        "iteration",
        "loss",
        &[series("total", |l| l.total), series("best", |l| l.best), series("proj", |l| l.proj), series("daq", |l| l.daq)],
        true,
    )
}

pub fn solve(a: &SolveArgs) -> Result<()> {
    let spec = ExperimentSpec::load_opt(a.config.as_deref())?;
    let mut cfg = spec.solver.clone();
    a.solver.apply(&mut cfg);
    if cfg.image_frame != ImageFrame::Normalized {
        return Err(invalid("solve works in the normalized image frame; image_frame must be `normalized`"));
    }
    cfg.validate().map_err(invalid)?;
    let input = a
        .input
        .clone()
        .or_else(|| spec.tracks.clone())
        .ok_or_else(|| invalid("solve needs --input (bundle directory or track file) or `tracks` in the config"))?;
    let image_size = match a.image_size.as_deref() {
        Some(&[w, h]) if w > 0.0 && h > 0.0 => Some([w, h]),
        Some(_) => return Err(invalid("--image-size needs a positive width and height")),
        None => None,
    };
    let p = prepare(&input, image_size)?;

    let r = scpsfm::solver::solve(&p.matrix, &cfg).map_err(|e| match e {
        SolverError::Factorization(f) => CliError::Degenerate(f.to_string()),
        other => invalid(other),
    })?;

    let calibration_pixel = match p.normalization {
        Some(t) => {
            let t_inv = t.try_inverse().ok_or_else(|| invalid("image normalization is singular"))?;
            let k = r.calibration.intrinsics().and_then(|k| k.transformed(&t_inv)).ok();
            k.map(|k| CalibrationEstimate::new(k.matrix(), &r.calibration.plane_at_infinity().0, ImageFrame::Pixel))
        }
        None => None,
    };

    let dir = resolve_output_dir(a.out.as_deref(), Some(&spec), "solve");
    write_result(&dir.join(RESULT_FILE), &r)?;
    write_loss_trace_csv(&dir.join(TRACE_FILE), &r.diagnostics.loss_trace)?;
    if a.plot {
        write_text(&dir.join(PLOT_FILE), &loss_plot(&r))?;
    }
    let info = RunInfo {
        input: input.clone(),
        input_kind: p.kind,
        normalization: p.normalization.as_ref().map(to_rows),
        excluded_tracks: p.excluded,
        calibration_pixel,
        degenerate: r.is_degenerate(),
        solver: cfg,
    };
    write_json(&dir.join(RUN_FILE), &info)?;

    let d = &r.diagnostics;
    println!(
        "iterations={} converged={} inliers={}/{} best_loss={:.6e} degenerate={} dir={}",
        d.iterations,
        d.converged,
        d.n_inliers,
        p.matrix.n_valid_cols(),
        d.best_loss,
        info.degenerate,
        dir.display()
    );
    if info.degenerate {
        let why = d.reconstruction_error.clone().unwrap_or_else(|| "no reconstruction".into());
        return Err(CliError::Degenerate(why));
    }
    Ok(())
}

impl RunInfo {
    pub fn normalization_matrix(&self) -> Option<nalgebra::Matrix3<f64>> {
        self.normalization.as_ref().map(from_rows)
    }
}
