//! `PipelineConfig`: every tunable of the pipeline in one JSON document.
//! A config file is merged key by key over the defaults, so it only needs the
//! keys it changes; unknown keys are rejected.

use organloc_core::localization::{CentroidMode, LocalizeParams};
use organloc_core::metrics::GlobalAggregation;
use organloc_core::model::{AdamParams, Architecture, Plateau, TrainConfig};
use organloc_core::phantom::{Jitter, PhantomSpec};
use organloc_core::{DEFAULT_MARGIN_V, DEFAULT_PAD_VALUE, DEFAULT_SIGMA_SQ, DEFAULT_TAU};
use serde::{Deserialize, Serialize};

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub localization: LocalizationConfig,
    pub segmentation: SegmentationConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            localization: LocalizationConfig::default(),
            segmentation: SegmentationConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_volumes: usize,
    /// The first `n_train` members form the training split.
    pub n_train: usize,
    pub template: PhantomSpec,
    pub jitter: Jitter,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n_volumes: 10, n_train: 7, template: PhantomSpec::demo(), jitter: Jitter::DEMO }
    }
}

/// Where the heatmaps fed to centroid extraction come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    /// The trained localizer network.
    Trained,
    /// Heatmaps synthesized from the true centroids; isolates the later stages.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    pub sigma_sq: f64,
    pub tau: f64,
    pub margin_v: usize,
    pub grid_spacing_mm: f64,
    pub centroid: CentroidMode,
    pub heatmaps: HeatmapSource,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            sigma_sq: DEFAULT_SIGMA_SQ,
            tau: DEFAULT_TAU,
            margin_v: DEFAULT_MARGIN_V,
            grid_spacing_mm: organloc_core::LOCALIZATION_SPACING_MM,
            centroid: CentroidMode::VoxelMean,
            heatmaps: HeatmapSource::Trained,
        }
    }
}

impl LocalizationConfig {
    pub fn params(&self) -> LocalizeParams {
        LocalizeParams { tau: self.tau, margin_v: self.margin_v, mode: self.centroid }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Intensity-band reference predictor using the catalog intensities.
    Oracle,
    /// Per-organ segmenter checkpoints.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub half_width: f64,
    pub softness: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { half_width: 40.0, softness: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    pub grid_spacing_mm: f64,
    pub decision_threshold: f64,
    pub pad_value: f64,
    pub predictor: PredictorKind,
    pub oracle: OracleConfig,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            grid_spacing_mm: organloc_core::SEGMENTATION_SPACING_MM,
            decision_threshold: 0.5,
            pad_value: DEFAULT_PAD_VALUE,
            predictor: PredictorKind::Trained,
            oracle: OracleConfig::default(),
        }
    }
}

/// Optimizer and network settings of one training stage. The pipeline seed
/// drives both initialization and sample order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub max_steps: usize,
    pub plateau: Option<Plateau>,
    pub adam: AdamParams,
    pub widths: Vec<usize>,
    pub head_bias: f64,
}

impl StageConfig {
    fn from_train(t: TrainConfig, widths: Vec<usize>, head_bias: f64) -> Self {
        StageConfig {
            learning_rate: t.learning_rate,
            decay_rate: t.decay_rate,
            decay_every: t.decay_every,
            max_steps: t.max_steps,
            plateau: t.plateau,
            adam: t.adam,
            widths,
            head_bias,
        }
    }

    pub fn localizer() -> Self {
        StageConfig::from_train(TrainConfig::localizer(), Architecture::default().widths, 0.0)
    }

    /// Wider than the localizer: at the segmenter's small learning rate an
    /// [8, 8] net barely moves its logits in 200 steps.
    pub fn segmenter() -> Self {
        StageConfig::from_train(TrainConfig::segmenter(), vec![12, 12], 0.0)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            decay_rate: self.decay_rate,
            decay_every: self.decay_every,
            max_steps: self.max_steps,
            batch_size: 1,
            seed,
            plateau: self.plateau,
            adam: self.adam,
        }
    }

    pub fn architecture(&self, out_channels: usize) -> Architecture {
        Architecture::new(self.widths.clone(), out_channels)
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::localizer()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub localizer: StageConfig,
    pub segmenter: StageConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            localizer: StageConfig::localizer(),
            segmenter: StageConfig::segmenter(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub aggregation: GlobalAggregation,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl PipelineConfig {
    /// Defaults overridden by the keys present in `patch`.
    pub fn from_patch(patch: Value) -> Result<Self> {
        let mut base = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        PipelineConfig::from_patch(crate::io::read_json(path)?)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.n_train > c.n_volumes {
            return Err(Error::Config(format!("n_train {} exceeds n_volumes {}", c.n_train, c.n_volumes)));
        }
        c.template.validate()?;
        c.jitter.validate_for(&c.template)?;

        let l = &self.localization;
        positive("localization.sigma_sq", l.sigma_sq)?;
        positive("localization.grid_spacing_mm", l.grid_spacing_mm)?;
        if !(l.tau > 0.0 && l.tau < 1.0) {
            return Err(Error::Config(format!("localization.tau must lie in (0, 1), got {}", l.tau)));
        }

        let s = &self.segmentation;
        positive("segmentation.grid_spacing_mm", s.grid_spacing_mm)?;
        positive("segmentation.oracle.half_width", s.oracle.half_width)?;
        positive("segmentation.oracle.softness", s.oracle.softness)?;
        if !(s.decision_threshold > 0.0 && s.decision_threshold < 1.0) {
            return Err(Error::Config(format!(
                "segmentation.decision_threshold must lie in (0, 1), got {}",
                s.decision_threshold
            )));
        }
        if !s.pad_value.is_finite() {
            return Err(Error::Config("segmentation.pad_value must be finite".into()));
        }

        for (name, st) in [("localizer", &self.training.localizer), ("segmenter", &self.training.segmenter)] {
            st.train_config(self.seed).validate().map_err(|e| Error::Config(format!("training.{name}: {e}")))?;
            if st.widths.contains(&0) {
                return Err(Error::Config(format!("training.{name}.widths must be positive")));
            }
            if !st.head_bias.is_finite() {
                return Err(Error::Config(format!("training.{name}.head_bias must be finite")));
            }
        }
        Ok(())
    }
}
