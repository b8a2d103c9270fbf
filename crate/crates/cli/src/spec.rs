use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use scpsfm::io::load_config;
use scpsfm::solver::SolverConfig;
use scpsfm::synth::{rng_for, SceneConfig};

use crate::{invalid, Result};

/// One experiment as read from a TOML/JSON file. `scene` and `tracks` are
/// alternatives: a synthetic scene or a track file on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scene: Option<SceneConfig>,
    pub tracks: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub sweep: Option<SweepSpec>,
    pub output_dir: Option<PathBuf>,
    /// Upper bound on concurrent sweep trials.
    pub parallelism: Option<usize>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = load_config(path)?;
        if spec.scene.is_some() && spec.tracks.is_some() {
            return Err(invalid(format!("{}: `scene` and `tracks` are mutually exclusive", path.display())));
        }
        Ok(spec)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    M,
    N,
    Delta,
    Sigma,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::M => "m",
            Factor::N => "n",
            Factor::Delta => "delta",
            Factor::Sigma => "sigma",
        }
    }

    /// Scene config with this factor set to `value`; counts must be integral.
    pub fn apply(self, base: &SceneConfig, value: f64) -> Result<SceneConfig> {
        let mut c = base.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(invalid(format!("sweep over {} needs non-negative integers, got {value}", self.name())))
            }
        };
        match self {
            Factor::M => c.m_points = count()?,
            Factor::N => c.n_views = count()?,
            Factor::Delta => c.outlier_rate = value,
            Factor::Sigma => c.noise_sigma = value,
        }
        Ok(c)
    }
}

/// Method variants compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Rank-4 factorization of all columns, no weighting.
    Baseline,
    /// Solver without the self-calibration term.
    Beta0,
    /// Solver with self-calibration (the config's β, or 1 when it is 0).
    Beta1,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Beta0, Method::Beta1];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Beta0 => "beta0",
            Method::Beta1 => "beta1",
        }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub factor: Factor,
    pub values: Vec<f64>,
    pub trials_per_value: usize,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
}

impl SweepSpec {
    /// Every value must give a valid scene config on top of `base`.
    pub fn validate(&self, base: &SceneConfig) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep needs at least one value"));
        }
        if self.trials_per_value == 0 {
            return Err(invalid("trials_per_value must be positive"));
        }
        if self.methods.is_empty() {
            return Err(invalid("sweep needs at least one method"));
        }
        for &v in &self.values {
            self.factor
                .apply(base, v)?
                .validate()
                .map_err(|e| invalid(format!("sweep value {} = {v}: {e}", self.factor.name())))?;
        }
        Ok(())
    }
}

/// Scene seed of one sweep trial: the first draw of the ChaCha8 stream
/// `(value_index << 32) | trial` under the spec seed. Any single trial can be
/// regenerated from `(seed, value_index, trial)` alone.
pub fn trial_seed(seed: u64, value_index: usize, trial: usize) -> u64 {
    rng_for(seed, ((value_index as u64) << 32) | trial as u64).random()
}
