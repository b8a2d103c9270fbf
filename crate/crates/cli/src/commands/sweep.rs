use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use scpsfm::eval::{aggregate_sweep, evaluate_scene, sweep_table_csv, Alignment, Error2dMask, Stat, SweepCell, TrialRecord};
use scpsfm::io::{write_json, write_text};
use scpsfm::solver::{baseline_reconstruction, solve, SolverConfig};
use scpsfm::synth::{synthesize, SceneConfig};

use crate::spec::trial_seed;
use crate::svg::{line_chart, Series};
use crate::{invalid, resolve_output_dir, ExperimentSpec, Factor, Method, Result, SweepArgs, SweepSpec};

/// Applies `f` to `0..n` on up to `jobs` threads; results come back in index order.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|v| v.expect("every index ran")).collect()
}

fn record(method: Method, factor: Factor, value: f64, trial: usize, seed: u64) -> TrialRecord {
    TrialRecord {
        method: method.name().into(),
        factor: factor.name().into(),
        value,
        trial,
        seed,
        f1: None,
        error_2d: None,
        error_3d: None,
        focal_error: None,
        error: None,
    }
}

/// One synthetic scene, every requested method on it. Failures are recorded
/// in the returned rows instead of aborting.
pub fn run_trial(base: &SceneConfig, solver: &SolverConfig, sweep: &SweepSpec, value_index: usize, trial: usize) -> Vec<TrialRecord> {
    let value = sweep.values[value_index];
    let seed = trial_seed(base.seed, value_index, trial);
    let mut rows: Vec<TrialRecord> = sweep.methods.iter().map(|&m| record(m, sweep.factor, value, trial, seed)).collect();
    let inst = match sweep.factor.apply(base, value).and_then(|c| synthesize(&SceneConfig { seed, ..c }).map_err(invalid)) {
        Ok(i) => i,
        Err(e) => {
            for r in &mut rows {
                r.error = Some(format!("synthesis: {e}"));
            }
            return rows;
        }
    };
    let scene = &inst.scene;
    for (row, &method) in rows.iter_mut().zip(&sweep.methods) {
        match method {
            Method::Baseline => match baseline_reconstruction(&inst.matrix) {
                Ok(recon) => {
                    let ev = evaluate_scene(scene, None, Some(&recon), None, Alignment::Homography, Error2dMask::TrueInliers);
                    row.error_2d = ev.error_2d_px;
                    row.error_3d = ev.error_3d_rel;
                }
                Err(e) => row.error = Some(format!("baseline: {e}")),
            },
            Method::Beta0 | Method::Beta1 => {
                let beta = match method {
                    Method::Beta0 => 0.0,
                    _ if solver.beta > 0.0 => solver.beta,
                    _ => 1.0,
                };
                match solve(&inst.matrix, &SolverConfig { beta, ..solver.clone() }) {
                    Ok(r) => {
                        let calib = (method == Method::Beta1).then_some(&r.calibration);
                        let ev = evaluate_scene(
                            scene,
                            Some(&r.inlier_mask),
                            r.reconstruction.as_ref(),
                            calib,
                            Alignment::Homography,
                            Error2dMask::TrueInliers,
                        );
                        row.f1 = ev.classification.map(|c| c.f1);
                        row.error_2d = ev.error_2d_px;
                        row.error_3d = ev.error_3d_rel;
                        row.focal_error = ev.focal_error_rel;
                        if r.is_degenerate() {
                            row.error = Some(format!(
                                "degenerate: {}",
                                r.diagnostics.reconstruction_error.as_deref().unwrap_or("no reconstruction")
                            ));
                        }
                    }
                    Err(e) => row.error = Some(format!("solve: {e}")),
                }
            }
        }
    }
    rows
}

#[derive(Serialize)]
struct Summary<'a> {
    sweep: &'a SweepSpec,
    scene: &'a SceneConfig,
    solver: &'a SolverConfig,
    trials: usize,
    failures: usize,
    cells: &'a [SweepCell],
}

type StatOf = fn(&SweepCell) -> Option<Stat>;

fn curve_plot(cells: &[SweepCell], methods: &[Method], factor: Factor, label: &str, stat: StatOf, log_y: bool) -> String {
    let series: Vec<Series> = methods
        .iter()
        .map(|m| Series {
            name: m.name().into(),
            points: cells
                .iter()
                .filter(|c| c.method == m.name())
                .filter_map(|c| stat(c).map(|s| (c.value, s.mean, s.std)))
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    line_chart(&format!("{label} vs {}", factor.name()), factor.name(), label, &series, log_y)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let spec = ExperimentSpec::load_opt(a.config.as_deref())?;
    if spec.tracks.is_some() {
        return Err(invalid("sweep runs on synthetic scenes; `tracks` is not supported"));
    }
    let mut base = spec.scene.clone().unwrap_or_default();
    a.scene.apply(&mut base);
    let mut solver = spec.solver.clone();
    a.solver.apply(&mut solver);
    solver.validate().map_err(invalid)?;

    let mut sw = match (&spec.sweep, a.factor, &a.values) {
        (Some(s), _, _) => s.clone(),
        (None, Some(factor), Some(values)) => SweepSpec { factor, values: values.clone(), trials_per_value: 1, methods: Method::ALL.to_vec() },
        _ => return Err(invalid("sweep needs a `sweep` block in the config or --factor and --values")),
    };
    if let Some(f) = a.factor {
        sw.factor = f;
    }
    if let Some(v) = &a.values {
        sw.values = v.clone();
    }
    if let Some(t) = a.trials {
        sw.trials_per_value = t;
    }
    if let Some(m) = &a.methods {
        sw.methods = m.clone();
    }
    sw.validate(&base)?;

    let jobs = a
        .jobs
        .or(spec.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(invalid("jobs must be positive"));
    }
    let per_value = sw.trials_per_value;
    let n_trials = sw.values.len() * per_value;
    let by_trial = par_map(n_trials, jobs, |k| run_trial(&base, &solver, &sw, k / per_value, k % per_value));

    // Rows grouped by method, then value, then trial.
    let mut records: Vec<TrialRecord> = Vec::with_capacity(n_trials * sw.methods.len());
    for mi in 0..sw.methods.len() {
        records.extend(by_trial.iter().map(|rows| rows[mi].clone()));
    }
    let cells = aggregate_sweep(&records);
    let failures = records.iter().filter(|r| r.error.is_some()).count();

    let dir = resolve_output_dir(a.out.as_deref(), Some(&spec), "sweep");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &records {
        w.serialize(r).map_err(invalid)?;
    }
    let trials_csv = String::from_utf8(w.into_inner().map_err(|e| invalid(e.into_error()))?).expect("csv writes utf-8");
    write_text(&dir.join("trials.csv"), &trials_csv)?;
    write_text(&dir.join("sweep.csv"), &sweep_table_csv(&cells).map_err(invalid)?)?;
    write_json(&dir.join("summary.json"), &Summary { sweep: &sw, scene: &base, solver: &solver, trials: records.len(), failures, cells: &cells })?;
    let plots: [(&str, &str, StatOf, bool); 4] = [
        ("f1.svg", "F1", |c| c.f1, false),
        ("error_2d.svg", "2D error (px)", |c| c.error_2d, true),
        ("error_3d.svg", "3D error", |c| c.error_3d, true),
        ("focal_error.svg", "focal error", |c| c.focal_error, true),
    ];
    for (file, label, stat, log_y) in plots {
        write_text(&dir.join(file), &curve_plot(&cells, &sw.methods, sw.factor, label, stat, log_y))?;
    }
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!("notice: {} {}={} trial {}: {}", r.method, r.factor, r.value, r.trial, r.error.as_deref().unwrap_or_default());
    }
    println!("factor={} values={} trials={} rows={} failures={failures} dir={}", sw.factor.name(), sw.values.len(), per_value, records.len(), dir.display());
    Ok(())
}
