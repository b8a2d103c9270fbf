use std::path::{Path, PathBuf};

use scpsfm::eval::{error_2d, evaluate_scene, Alignment, Error2dMask, SceneEvaluation};
use scpsfm::io::{read_json, read_scene_bundle, read_tracks_csv, write_json, write_text};
use scpsfm::solver::SolveResult;

use super::{bbox_normalization, InputKind, RunInfo, RUN_FILE};
use crate::{invalid, EvalArgs, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Reads a result, naming the offending field on failure.
pub fn read_result_checked(path: &Path) -> Result<SolveResult> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        invalid(format!("{}: malformed result at field `{field}`: {}", path.display(), e.inner()))
    })
}

enum Truth {
    Bundle(PathBuf),
    Tracks(PathBuf),
}

fn eval_tracks(r: &SolveResult, path: &Path, info: Option<&RunInfo>, mask_2d: Error2dMask, alignment: Alignment) -> Result<SceneEvaluation> {
    let tracks = read_tracks_csv(path)?;
    let m = tracks.n_tracks();
    let t = info.and_then(RunInfo::normalization_matrix).unwrap_or_else(|| bbox_normalization(&tracks));
    let t_inv = t.try_inverse().ok_or_else(|| invalid("image normalization is singular"))?;
    let mut keep = vec![true; m];
    for &j in info.map(|i| i.excluded_tracks.as_slice()).unwrap_or(&[]) {
        if j < m {
            keep[j] = false;
        }
    }
    if r.inlier_mask.len() != m {
        return Err(invalid(format!("result has {} columns, {} has {m} tracks", r.inlier_mask.len(), path.display())));
    }
    let mut notes = vec![
        "f1: skipped, no ground-truth inlier mask".to_string(),
        "3d: skipped, no ground-truth structure".to_string(),
        "focal: skipped, no ground-truth calibration".to_string(),
    ];
    let predicted: Vec<bool> = (0..m).filter(|&j| keep[j]).map(|j| r.inlier_mask[j]).collect();
    let eval_mask = match mask_2d {
        Error2dMask::All => vec![true; predicted.len()],
        Error2dMask::PredictedInliers => predicted,
        Error2dMask::TrueInliers => {
            notes.push("2d: no ground-truth inliers, using predicted inliers".into());
            predicted
        }
    };
    let mut e2 = None;
    match &r.reconstruction {
        Some(recon) => {
            let kept = tracks.select_tracks(&keep).map_err(invalid)?;
            match recon.map_image_frame(&t_inv).map_err(|e| e.to_string()).and_then(|px| error_2d(&px, &kept, &eval_mask).map_err(|e| e.to_string())) {
                Ok(e) => e2 = Some(e.value),
                Err(e) => notes.push(format!("2d: {e}")),
            }
        }
        None => notes.push("2d: result has no reconstruction".into()),
    }
    Ok(SceneEvaluation { classification: None, error_2d_px: e2, error_3d_rel: None, focal_error_rel: None, alignment_used: alignment, notes })
}

fn csv_report(ev: &SceneEvaluation) -> String {
    let c = ev.classification.as_ref();
    let rows: [(&str, Option<f64>); 6] = [
        ("f1", c.map(|c| c.f1)),
        ("precision", c.map(|c| c.precision)),
        ("recall", c.map(|c| c.recall)),
        ("error_2d_px", ev.error_2d_px),
        ("error_3d_rel", ev.error_3d_rel),
        ("focal_error_rel", ev.focal_error_rel),
    ];
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        s.push_str(&format!("{k},{}\n", v.map(|v| v.to_string()).unwrap_or_default()));
    }
    s
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let r = read_result_checked(&a.result)?;
    let result_dir = a.result.parent().map(Path::to_path_buf).unwrap_or_default();
    let run_path = result_dir.join(RUN_FILE);
    let info: Option<RunInfo> = if run_path.exists() { Some(read_json(&run_path)?) } else { None };
    let truth = match (&a.scene, &a.tracks, &info) {
        (Some(s), _, _) => Truth::Bundle(s.clone()),
        (_, Some(t), _) => Truth::Tracks(t.clone()),
        (_, _, Some(i)) => match i.input_kind {
            InputKind::Bundle => Truth::Bundle(i.input.clone()),
            InputKind::Tracks => Truth::Tracks(i.input.clone()),
        },
        _ => return Err(invalid(format!("no ground truth or tracks for {}: pass --scene or --tracks", a.result.display()))),
    };
    let alignment = a.alignment.unwrap_or(Alignment::Homography);
    let ev = match &truth {
        Truth::Bundle(dir) => {
            let inst = read_scene_bundle(dir)?;
            let mask_2d = a.mask_2d.unwrap_or(Error2dMask::TrueInliers);
            evaluate_scene(&inst.scene, Some(&r.inlier_mask), r.reconstruction.as_ref(), Some(&r.calibration), alignment, mask_2d)
        }
        Truth::Tracks(path) => eval_tracks(&r, path, info.as_ref(), a.mask_2d.unwrap_or(Error2dMask::PredictedInliers), alignment)?,
    };

    let dir = a.out.clone().unwrap_or(result_dir);
    write_json(&dir.join(REPORT_JSON), &ev)?;
    write_text(&dir.join(REPORT_CSV), &csv_report(&ev))?;
    for n in &ev.notes {
        eprintln!("notice: {n}");
    }
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
    println!(
        "f1={} error_2d_px={} error_3d_rel={} focal_error_rel={} dir={}",
        ev.classification.as_ref().map_or_else(|| "-".to_string(), |c| format!("{:.4}", c.f1)),
        show(ev.error_2d_px),
        show(ev.error_3d_rel),
        show(ev.focal_error_rel),
        dir.display()
    );
    Ok(())
}
