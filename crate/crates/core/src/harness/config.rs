//! Experiment configuration, read from a sectioned `key = value` file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{AugmentOptions, PretrainOptions};
use crate::supervise::LossWeights;
use crate::synth::SynthConfig;
use crate::temporal::TemporalOptions;

/// Ablation rows: which self-supervision terms stay switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Row {
    Supervised,
    Temporal,
    TemporalVisibility,
    Cross,
    CrossVisibility,
    TemporalCross,
    Full,
}

impl Row {
    pub const ALL: [Row; 7] =
        [Row::Supervised, Row::Temporal, Row::TemporalVisibility, Row::Cross, Row::CrossVisibility, Row::TemporalCross, Row::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Row::Supervised => "supervised",
            Row::Temporal => "temporal",
            Row::TemporalVisibility => "temporal-visibility",
            Row::Cross => "cross",
            Row::CrossVisibility => "cross-visibility",
            Row::TemporalCross => "temporal-cross",
            Row::Full => "full",
        }
    }

    /// `(cross, temporal, visibility)` switches.
    pub fn mask(&self) -> (bool, bool, bool) {
        match self {
            Row::Supervised => (false, false, false),
            Row::Temporal => (false, true, false),
            Row::TemporalVisibility => (false, true, true),
            Row::Cross => (true, false, false),
            Row::CrossVisibility => (true, false, true),
            Row::TemporalCross => (true, true, false),
            Row::Full => (true, true, true),
        }
    }

    pub fn apply(&self, weights: &LossWeights) -> LossWeights {
        let (c, t, v) = self.mask();
        let on = |b: bool, x: f64| if b { x } else { 0.0 };
        LossWeights { lambda_c: on(c, weights.lambda_c), lambda_t: on(t, weights.lambda_t), lambda_v: on(v, weights.lambda_v), ..*weights }
    }

    pub fn parse(name: &str) -> Option<Row> {
        Row::ALL.into_iter().find(|r| r.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Seeds used by the ablation matrix: `seed, seed + 1, …`.
    pub seeds: usize,
    pub rows: Vec<Row>,
    /// The unseen evaluation scene uses `seed + unseen_seed_offset`.
    pub unseen_seed_offset: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { seed: 0, seeds: 5, rows: vec![Row::Supervised, Row::Temporal, Row::Cross, Row::Full], unseen_seed_offset: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    /// Labeled frames, spread evenly and always including both sequence ends.
    pub frames: usize,
    /// Labeled views per labeled frame, spread evenly around the rig.
    pub views: usize,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self { frames: 4, views: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// Frame offsets between temporal pairs.
    pub strides: Vec<usize>,
    pub noise: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self { strides: vec![2, 4], noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let a = AugmentOptions::default();
        let p = PretrainOptions::default();
        Self { inlier_threshold: a.inlier_threshold, iterations: a.iterations, epochs: p.epochs, learning_rate: p.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    /// Unlabeled reference images per step, each with its partners.
    pub unlabeled_per_step: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { steps: 600, learning_rate: 1e-3, unlabeled_per_step: 2, checkpoint_every: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pck_threshold: f64,
    pub pckh_threshold: f64,
    pub head_channels: [usize; 2],
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { pck_threshold: 0.2, pckh_threshold: 0.5, head_channels: [0, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scene: SynthConfig,
    pub labels: LabelSection,
    pub flow: FlowSection,
    pub bootstrap: BootstrapSection,
    pub train: TrainSection,
    pub losses: LossWeights,
    pub temporal: TemporalOptions,
    pub eval: EvalSection,
    /// Read the scene from this directory instead of generating it.
    pub scene_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.losses.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.labels.frames < 2 || self.labels.frames > self.scene.frames {
            return bad(format!("labels.frames must lie in 2..={}", self.scene.frames));
        }
        if self.labels.views < 2 || self.labels.views > self.scene.cameras {
            return bad(format!("labels.views must lie in 2..={}", self.scene.cameras));
        }
        if self.flow.strides.is_empty() || self.flow.strides.iter().any(|&s| s == 0 || s >= self.scene.frames) {
            return bad("flow.strides must be non-empty and within the sequence".into());
        }
        if !(self.train.learning_rate > 0.0 && self.bootstrap.learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.bootstrap.inlier_threshold <= 0.0 {
            return bad("bootstrap.inlier_threshold must be positive".into());
        }
        if self.experiment.rows.is_empty() || self.experiment.seeds == 0 {
            return bad("at least one row and one seed are required".into());
        }
        if self.eval.head_channels.iter().any(|&c| c + 1 >= self.scene.channels) {
            return bad("eval.head_channels must name keypoint channels".into());
        }
        Ok(())
    }

    /// Labeled frame indices: evenly spread, first and last included.
    pub fn labeled_frames(&self) -> Vec<usize> {
        spread(self.labels.frames, self.scene.frames)
    }

    /// Labeled views: evenly spread around the rig.
    pub fn labeled_views(&self) -> Vec<usize> {
        let n = self.scene.cameras;
        let k = self.labels.views;
        (0..k).map(|i| i * n / k).collect()
    }

    pub fn augment_options(&self, seed: u64) -> AugmentOptions {
        AugmentOptions { inlier_threshold: self.bootstrap.inlier_threshold, iterations: self.bootstrap.iterations, seed }
    }

    pub fn pretrain_options(&self, seed: u64) -> PretrainOptions {
        PretrainOptions {
            epochs: self.bootstrap.epochs,
            learning_rate: self.bootstrap.learning_rate,
            sigma_gt: self.losses.sigma_gt,
            seed,
        }
    }
}

// `k` indices over `0..n` with both ends included.
fn spread(k: usize, n: usize) -> Vec<usize> {
    if k <= 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..k).map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize).collect();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_in_default_matches_code_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn default_label_budget_is_four_percent() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.labeled_frames(), vec![0, 16, 33, 49]);
        assert_eq!(cfg.labeled_views(), vec![0, 2, 4, 6]);
        let labeled = cfg.labeled_frames().len() * cfg.labeled_views().len();
        assert_eq!(labeled * 100, 4 * cfg.scene.frames * cfg.scene.cameras);
    }

    #[test]
    fn rows_mask_the_weights() {
        let w = LossWeights { lambda_c: 2.0, lambda_t: 3.0, lambda_v: 4.0, ..LossWeights::default() };
        let s = Row::Supervised.apply(&w);
        assert_eq!((s.lambda_c, s.lambda_t, s.lambda_v), (0.0, 0.0, 0.0));
        let t = Row::TemporalVisibility.apply(&w);
        assert_eq!((t.lambda_c, t.lambda_t, t.lambda_v), (0.0, 3.0, 4.0));
        assert_eq!(Row::Full.apply(&w), w);
        assert_eq!(Row::parse("cross-visibility"), Some(Row::CrossVisibility));
    }

    #[test]
    fn bad_values_are_rejected() {
        let p = Path::new("x.toml");
        assert!(ExperimentConfig::from_toml("[labels]\nframes = 1\n", p).is_err());
        assert!(ExperimentConfig::from_toml("[scene]\ncameras = 1\n", p).is_err());
        assert!(matches!(ExperimentConfig::from_toml("[train]\nstepz = 3\n", p), Err(ConfigError::Parse { .. })));
        let ok = ExperimentConfig::from_toml("[experiment]\nseed = 9\nrows = [\"full\"]\n", p).unwrap();
        assert_eq!(ok.experiment.seed, 9);
        assert_eq!(ok.experiment.rows, vec![Row::Full]);
    }
}
