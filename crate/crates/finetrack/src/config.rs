//! Run configuration: one TOML file, overridable from the command line and
//! written back next to every run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use finetrack_core::model::{ModelConfig, Variant};
use finetrack_core::objectives::LossWeights;
use finetrack_core::optim::StepDecay;
use finetrack_core::synthetic_world::{CrossingStyle, DetectionNoise};
use finetrack_core::tracker::{Association, TrackerConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FINETRACK_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; falls back to `$FINETRACK_OUT`, then `runs`.
    pub out: Option<PathBuf>,
    /// Checkpoint read by `track` and `demo`; defaults to the one `train`
    /// writes into the output directory.
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optim: OptimSection,
    pub tracker: TrackerSection,
    pub track: TrackSection,
    pub eval: EvalSection,
    pub demo: DemoSection,
}

/// The synthetic Re-ID training set: one lane scene per entry of `videos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub frames_per_video: usize,
    /// Identities shown in each video.
    pub videos: Vec<Vec<usize>>,
    /// Leading fraction of every video used for training; the rest is
    /// held out for retrieval evaluation.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            frames_per_video: 100,
            videos: vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5], vec![4, 5, 6, 7], vec![6, 7, 0, 1]],
            train_fraction: 0.8,
        }
    }
}

impl DataConfig {
    pub fn identities(&self) -> usize {
        self.videos.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn train_frames(&self) -> usize {
        (self.frames_per_video as f64 * self.train_fraction).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Finetrack,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: VariantName,
    pub unified_channels: usize,
    pub parts: usize,
    pub part_dim: usize,
    pub global_dim: usize,
    pub flow_kernel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: VariantName::Finetrack,
            unified_channels: 96,
            parts: 6,
            part_dim: 128,
            global_dim: 256,
            flow_kernel: 3,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, identities: usize) -> ModelConfig {
        ModelConfig {
            variant: match self.variant {
                VariantName::Finetrack => Variant::FineTrack,
                VariantName::Baseline => Variant::Baseline,
            },
            unified_channels: self.unified_channels,
            parts: self.parts,
            part_dim: self.part_dim,
            global_dim: self.global_dim,
            identities,
            flow_kernel: self.flow_kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
        }
    }
}

impl LossSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub decay_factor: f64,
    /// Epochs at which the step size is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub epochs: usize,
    /// Frames per SGS segment.
    pub batch: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            lr: 1e-3,
            decay_factor: 0.1,
            decay_epochs: vec![6],
            epochs: 8,
            batch: 8,
        }
    }
}

impl OptimSection {
    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.lr,
            factor: self.decay_factor,
            milestones: self.decay_epochs.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationName {
    Fused,
    IouOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub match_threshold: f64,
    pub low_match_threshold: f64,
    pub tentative_match_threshold: f64,
    pub max_age: usize,
    pub min_hits: usize,
    pub ema_momentum: f64,
    pub association: AssociationName,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        TrackerSection {
            high_threshold: t.high_threshold,
            low_threshold: t.low_threshold,
            match_threshold: t.match_threshold,
            low_match_threshold: t.low_match_threshold,
            tentative_match_threshold: t.tentative_match_threshold,
            max_age: t.max_age,
            min_hits: t.min_hits,
            ema_momentum: t.ema_momentum,
            association: AssociationName::Fused,
        }
    }
}

impl TrackerSection {
    pub fn to_tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            high_threshold: self.high_threshold,
            low_threshold: self.low_threshold,
            match_threshold: self.match_threshold,
            low_match_threshold: self.low_match_threshold,
            tentative_match_threshold: self.tentative_match_threshold,
            max_age: self.max_age,
            min_hits: self.min_hits,
            ema_momentum: self.ema_momentum,
            association: match self.association {
                AssociationName::Fused => Association::Fused,
                AssociationName::IouOnly => Association::IouOnly,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Every identity on its own lane; boxes never overlap.
    Lanes,
    /// The first two identities share a lane and meet repeatedly.
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleName {
    PassThrough,
    Bounce,
}

impl From<StyleName> for CrossingStyle {
    fn from(s: StyleName) -> Self {
        match s {
            StyleName::PassThrough => CrossingStyle::PassThrough,
            StyleName::Bounce => CrossingStyle::Bounce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradedSection {
    pub box_jitter: f64,
    pub low_fraction: f64,
}

impl From<DegradedSection> for DetectionNoise {
    fn from(d: DegradedSection) -> Self {
        DetectionNoise {
            box_jitter: d.box_jitter,
            low_fraction: d.low_fraction,
        }
    }
}

/// One tracking sequence to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub name: String,
    pub kind: SceneKind,
    pub identities: Vec<usize>,
    pub frames: usize,
    /// Scene seed; mixed with the run seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub style: Option<StyleName>,
    /// Frames per back-and-forth cycle of a crossing pair.
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub first_meet: Option<usize>,
    #[serde(default)]
    pub degraded: Option<DegradedSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    pub sequences: Vec<SequenceConfig>,
    /// Also write every frame as a PNG next to the ground truth.
    pub write_images: bool,
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection {
            sequences: vec![
                SequenceConfig {
                    name: "lanes".into(),
                    kind: SceneKind::Lanes,
                    identities: vec![0, 1, 2, 3],
                    frames: 60,
                    seed: 5,
                    style: None,
                    period: None,
                    first_meet: None,
                    degraded: None,
                },
                SequenceConfig {
                    name: "crossing".into(),
                    kind: SceneKind::Crossing,
                    identities: vec![0, 3],
                    frames: 80,
                    seed: 9,
                    style: Some(StyleName::Bounce),
                    period: Some(54.0),
                    first_meet: Some(20),
                    degraded: None,
                },
            ],
            write_images: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Ground-truth directory; defaults to `<out>/gt`.
    pub gt_dir: Option<PathBuf>,
    /// Result directory; defaults to `<out>/results`.
    pub results_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    /// Sequence (from `[track]`) to visualize.
    pub sequence: String,
    /// Frame index whose targets are visualized.
    pub frame: usize,
    /// Pixel size of one mask cell in the written images.
    pub scale: u32,
}

impl Default for DemoSection {
    fn default() -> Self {
        DemoSection {
            sequence: "crossing".into(),
            frame: 19,
            scale: 8,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The output directory: explicit setting, then `$FINETRACK_OUT`, then
    /// `runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir().join("checkpoint.safetensors"))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.to_model_config(self.data.identities())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.parts == 0 || !m.unified_channels.is_multiple_of(m.parts) {
            bail!(
                "model.unified_channels ({}) must be divisible by model.parts ({})",
                m.unified_channels,
                m.parts
            );
        }
        if m.parts < 2 && m.variant == VariantName::Finetrack {
            bail!("model.parts must be at least 2 for the diversity loss");
        }
        if self.data.videos.is_empty() || self.data.videos.iter().any(Vec::is_empty) {
            bail!("data.videos must list at least one identity per video");
        }
        if self.data.videos.iter().any(|v| v.len() > 4) {
            bail!("a lane scene holds at most 4 identities");
        }
        if !(0.0 < self.data.train_fraction && self.data.train_fraction < 1.0) {
            bail!("data.train_fraction must lie in (0, 1)");
        }
        if self.data.train_frames() < self.optim.batch {
            bail!(
                "training frames per video ({}) shorter than one batch",
                self.data.train_frames()
            );
        }
        if !self.optim.lr.is_finite() || self.optim.lr <= 0.0 || self.optim.batch < 2 {
            bail!("optim.lr must be positive and optim.batch at least 2");
        }
        let t = &self.tracker;
        if !(0.0 <= t.low_threshold && t.low_threshold <= t.high_threshold && t.high_threshold <= 1.0) {
            bail!("tracker thresholds must satisfy 0 <= low <= high <= 1");
        }
        if !(0.0..=1.0).contains(&t.ema_momentum) {
            bail!("tracker.ema_momentum must lie in [0, 1]");
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.track.sequences {
            if !names.insert(&s.name) {
                bail!("sequence name `{}` used twice", s.name);
            }
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                bail!("sequence name `{}` is not a plain file name", s.name);
            }
            if s.kind == SceneKind::Crossing && s.identities.len() != 2 {
                bail!("crossing sequence `{}` needs exactly two identities", s.name);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
    }

    #[test]
    fn indivisible_parts_rejected() {
        let mut c = RunConfig::default();
        c.model.parts = 5;
        assert!(c.validate().is_err());
    }
}
