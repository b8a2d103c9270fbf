use scpsfm::io::write_scene_bundle;
use scpsfm::synth::synthesize;

use crate::{invalid, resolve_output_dir, ExperimentSpec, Result, SynthArgs};

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = ExperimentSpec::load_opt(a.config.as_deref())?;
    let mut cfg = spec.scene.clone().unwrap_or_default();
    a.scene.apply(&mut cfg);
    cfg.validate().map_err(invalid)?;
    let inst = synthesize(&cfg).map_err(invalid)?;
    let dir = resolve_output_dir(a.out.as_deref(), Some(&spec), "scene");
    write_scene_bundle(&dir, &inst)?;
    let inliers = inst.scene.inlier_mask_true.iter().filter(|&&b| b).count();
    println!(
        "n={} m={} delta={} sigma={} seed={} inliers={inliers} outliers={} dir={}",
        cfg.n_views,
        cfg.m_points,
        cfg.outlier_rate,
        cfg.noise_sigma,
        cfg.seed,
        cfg.m_points - inliers,
        dir.display()
    );
    Ok(())
}
