//! Organ-wise two-step segmentation against a single whole-volume network of
//! the same width, scored on the smallest organ of the test split.

use std::collections::BTreeMap;
use std::path::Path;

use organloc_core::aggregation::{aggregate, CropSet, OrganCrop};
use organloc_core::metrics::dice;
use organloc_core::model::{LossKind, Sample};
use organloc_core::segmentation::{ConvNetPredictor, OrganPredictor};
use organloc_core::volume::normalize;
use organloc_core::{BoundingBox, OrganStats, VolumeKind};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, StageConfig};
use crate::corpus::{self, Case, Manifest, Split};
use crate::error::{Error, Result};
use crate::pipeline::{self, fit, prepare, process_volume, segmenter_sample, segmenter_seed, Localizer, Stages};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// Dice of the compared organ per test volume.
    pub dice: Vec<f64>,
    pub mean: f64,
    /// Mean training loss before and after training, per trained network.
    pub losses: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub organ: u16,
    pub two_step: ArmResult,
    pub direct: ArmResult,
}

/// Organ with the smallest mean box volume.
pub fn smallest_organ(stats: &OrganStats) -> Option<u16> {
    stats
        .organs
        .iter()
        .min_by(|a, b| {
            let v = |s: &[f64; 3]| s[0] * s[1] * s[2];
            v(&a.1.mean_size_mm).total_cmp(&v(&b.1.mean_size_mm))
        })
        .map(|(&id, _)| id)
}

fn load_split(cfg: &PipelineConfig, dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<(Case, pipeline::Prepared)>> {
    manifest
        .split(split)
        .map(|m| {
            let case = corpus::load_case(dir, m)?;
            let p = prepare(cfg, &case)?;
            Ok((case, p))
        })
        .collect()
}

fn arm(dice: Vec<f64>, losses: Vec<(f64, f64)>) -> ArmResult {
    let mean = dice.iter().sum::<f64>() / dice.len().max(1) as f64;
    ArmResult { dice, mean, losses }
}

/// Both arms train with `stage` (same widths, optimizer and steps). The
/// two-step arm boxes organs from ground-truth heatmaps so that only the
/// segmentation design differs.
pub fn two_step_vs_direct(cfg: &PipelineConfig, corpus_dir: &Path, stage: &StageConfig) -> Result<Comparison> {
    cfg.validate()?;
    let manifest = corpus::read_manifest(corpus_dir)?;
    let catalog = manifest.catalog();
    let stats = pipeline::train_stats(corpus_dir, &manifest)?;
    let organ = smallest_organ(&stats).ok_or_else(|| Error::Config("empty organ catalog".into()))?;
    let train_set = load_split(cfg, corpus_dir, &manifest, Split::Train)?;
    let test_set = load_split(cfg, corpus_dir, &manifest, Split::Test)?;

    // Two-step: one ROI segmenter per organ.
    let mut predictors: BTreeMap<u16, Box<dyn OrganPredictor>> = BTreeMap::new();
    let mut losses = Vec::new();
    for &id in &catalog {
        let mut data = Vec::new();
        for (case, p) in &train_set {
            data.extend(segmenter_sample(cfg, &stats, id, case, p)?);
        }
        let (net, _, before, after) = fit(stage, segmenter_seed(cfg.seed, id), &data, LossKind::CeDice, 1)?;
        losses.push((before, after));
        predictors.insert(id, Box::new(ConvNetPredictor { net, channel: 0 }));
    }
    let stages = Stages { localizer: Localizer::Truth, predictors };
    let mut two_step = Vec::new();
    for (case, _) in &test_set {
        let r = process_volume(cfg, &stages, &stats, &catalog, case)?;
        two_step.push(dice(&r.labels.mask_of(organ), &r.truth.mask_of(organ))?);
    }

    // Direct: one network, one output channel per organ, whole volume.
    let data = train_set
        .iter()
        .map(|(_, p)| {
            let targets = catalog
                .iter()
                .map(|&id| p.seg_labels.data().iter().map(|&l| (l == id) as u8 as f64).collect())
                .collect();
            Ok(Sample { input: normalize(&p.seg_image)?, targets })
        })
        .collect::<Result<Vec<_>>>()?;
    let (net, _, before, after) = fit(stage, cfg.seed, &data, LossKind::CeDice, catalog.len())?;
    let mut direct = Vec::new();
    for (_, p) in &test_set {
        let grid = *p.seg_image.grid();
        let probs = net.forward_volumes(&normalize(&p.seg_image)?, VolumeKind::Probability)?;
        let crops = catalog
            .iter()
            .zip(probs)
            .map(|(&id, probs)| OrganCrop { organ: id, bbox: BoundingBox::full(&grid), probs })
            .collect();
        let agg = aggregate(&CropSet { grid, crops }, cfg.segmentation.decision_threshold)?;
        direct.push(dice(&agg.labels.mask_of(organ), &p.seg_labels.mask_of(organ))?);
    }

    Ok(Comparison { organ, two_step: arm(two_step, losses), direct: arm(direct, vec![(before, after)]) })
}
