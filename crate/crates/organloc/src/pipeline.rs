//! The batch commands. Each writes `run_config.json` (the effective
//! configuration) into its output directory before doing any work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use organloc_core::aggregation::{aggregate, AggregationReport, CropSet, OrganCrop};
use organloc_core::heatmap::synthesize_heatmaps;
use organloc_core::localization::{compute_organ_stats, localize_all, LocalizationResult, Status};
use organloc_core::metrics::{evaluate_corpus, CaseDice, DiceReport};
use organloc_core::model::{loss_and_grad, train, ConvNet, LossKind, Sample, TrainReport};
use organloc_core::segmentation::{segment_organ, ConvNetPredictor, IntensityBandPredictor, OrganPredictor};
use organloc_core::volume::{crop, normalize, resample, resample_nearest, Interpolation};
use organloc_core::{BoundingBox, Grid, HeatmapStack, LabelMap, OrganStats, Volume3D, VolumeKind};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, write_trace};
use crate::config::{HeatmapSource, PipelineConfig, PredictorKind, StageConfig};
use crate::corpus::{self, Case, Centroids, Manifest, Split};
use crate::error::{Error, Result};
use crate::io;

pub const RUN_CONFIG: &str = "run_config.json";
pub const STATS_FILE: &str = "organ_stats.json";
pub const LOCALIZER_CKPT: &str = "localizer.ckpt";

pub fn segmenter_ckpt(organ: u16) -> String {
    format!("segmenter_{organ}.ckpt")
}

fn start(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    io::write_json(&out.join(RUN_CONFIG), cfg)
}

pub fn cmd_phantom(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    start(cfg, out)?;
    corpus::generate_corpus(out, &cfg.corpus, cfg.seed)
}

/// Box statistics over the training split. Test members are never opened.
pub fn train_stats(corpus_dir: &Path, manifest: &Manifest) -> Result<OrganStats> {
    let labels =
        manifest.split(Split::Train).map(|m| corpus::load_labels(corpus_dir, m)).collect::<Result<Vec<_>>>()?;
    if labels.is_empty() {
        return Err(Error::Config("the corpus has no training members".into()));
    }
    Ok(compute_organ_stats(&labels, &manifest.catalog())?)
}

pub fn cmd_stats(cfg: &PipelineConfig, corpus_dir: &Path, out: &Path) -> Result<OrganStats> {
    start(cfg, out)?;
    let manifest = corpus::read_manifest(corpus_dir)?;
    let stats = train_stats(corpus_dir, &manifest)?;
    io::write_json(&out.join(STATS_FILE), &stats)?;
    Ok(stats)
}

fn load_or_compute_stats(stats: Option<&Path>, corpus_dir: &Path, manifest: &Manifest) -> Result<OrganStats> {
    match stats {
        Some(p) => io::read_json(p),
        None => train_stats(corpus_dir, manifest),
    }
}

/// A member on the two working grids.
pub(crate) struct Prepared {
    /// Normalized image on the localization grid.
    pub loc_input: Volume3D,
    /// Raw image on the segmentation grid.
    pub seg_image: Volume3D,
    /// Ground truth on the segmentation grid.
    pub seg_labels: LabelMap,
}

fn at_spacing(v: &Volume3D, spacing: f64) -> Result<Volume3D> {
    if v.spacing() == [spacing; 3] {
        Ok(v.clone())
    } else {
        Ok(resample(v, [spacing; 3], Interpolation::Trilinear)?)
    }
}

pub(crate) fn prepare(cfg: &PipelineConfig, case: &Case) -> Result<Prepared> {
    let ss = cfg.segmentation.grid_spacing_mm;
    let loc = resample(&case.image, [cfg.localization.grid_spacing_mm; 3], Interpolation::Trilinear)?;
    Ok(Prepared {
        loc_input: normalize(&loc)?,
        seg_image: at_spacing(&case.image, ss)?,
        seg_labels: if case.labels.spacing() == [ss; 3] { case.labels.clone() } else { resample_nearest(&case.labels, [ss; 3])? },
    })
}

pub(crate) fn truth_heatmaps(
    cfg: &PipelineConfig,
    catalog: &[u16],
    centroids: &Centroids,
    grid: &Grid,
) -> Result<HeatmapStack> {
    Ok(synthesize_heatmaps(catalog, &centroids.slots(catalog), grid, cfg.localization.sigma_sq)?)
}

fn localizer_samples(cfg: &PipelineConfig, corpus_dir: &Path, manifest: &Manifest) -> Result<Vec<Sample>> {
    let catalog = manifest.catalog();
    manifest
        .split(Split::Train)
        .map(|m| {
            let case = corpus::load_case(corpus_dir, m)?;
            let p = prepare(cfg, &case)?;
            let hm = truth_heatmaps(cfg, &catalog, &case.centroids, p.loc_input.grid())?;
            Ok(Sample { targets: hm.channels().iter().map(|c| c.data().to_vec()).collect(), input: p.loc_input })
        })
        .collect()
}

/// Box of `organ` found on ground-truth heatmaps, expressed on the
/// segmentation grid. `None` when the organ is absent from the member.
pub(crate) fn truth_box(
    cfg: &PipelineConfig,
    stats: &OrganStats,
    organ: u16,
    case: &Case,
    p: &Prepared,
) -> Result<Option<BoundingBox>> {
    let hm = truth_heatmaps(cfg, &[organ], &case.centroids, p.loc_input.grid())?;
    let loc = localize_all(&hm, stats, &cfg.localization.params())?;
    loc.organs[0].bbox.map(|b| Ok(b.remap(p.loc_input.grid(), p.seg_image.grid())?)).transpose()
}

pub(crate) fn segmenter_sample(
    cfg: &PipelineConfig,
    stats: &OrganStats,
    organ: u16,
    case: &Case,
    p: &Prepared,
) -> Result<Option<Sample>> {
    let Some(b) = truth_box(cfg, stats, organ, case, p)? else { return Ok(None) };
    let input = normalize(&crop(&p.seg_image, &b, cfg.segmentation.pad_value)?)?;
    let mask = crop(&p.seg_labels.mask_of(organ), &b, false)?;
    let target = mask.data().iter().map(|&m| m as u8 as f64).collect();
    Ok(Some(Sample { input, targets: vec![target] }))
}

fn segmenter_samples(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    manifest: &Manifest,
    stats: &OrganStats,
    organ: u16,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for m in manifest.split(Split::Train) {
        let case = corpus::load_case(corpus_dir, m)?;
        let p = prepare(cfg, &case)?;
        out.extend(segmenter_sample(cfg, stats, organ, &case, &p)?);
    }
    Ok(out)
}

/// Mean loss of `net` over `data`.
pub fn dataset_loss(net: &ConvNet, data: &[Sample], kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let out = net.forward(&s.input)?;
        total += loss_and_grad(kind, &out, &s.targets).0;
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: String,
    pub organ_ids: Vec<u16>,
    pub samples: usize,
    pub steps: usize,
    pub stopped_on_plateau: bool,
    /// Mean loss over the training samples before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub(crate) fn fit(
    stage: &StageConfig,
    seed: u64,
    data: &[Sample],
    kind: LossKind,
    out_channels: usize,
) -> Result<(ConvNet, TrainReport, f64, f64)> {
    if data.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut net = ConvNet::init(&stage.architecture(out_channels), seed, stage.head_bias);
    let initial = dataset_loss(&net, data, kind)?;
    let report = train(&mut net, data, kind, &stage.train_config(seed))?;
    let fin = dataset_loss(&net, data, kind)?;
    Ok((net, report, initial, fin))
}

fn save_stage(out: &Path, name: &str, net: &ConvNet, ids: &[u16], report: &TrainReport, summary: &TrainSummary) -> Result<()> {
    write_checkpoint(&out.join(format!("{name}.ckpt")), net, ids, report.trace.len())?;
    write_trace(&out.join(format!("{name}_trace.csv")), &report.trace)?;
    io::write_json(&out.join(format!("{name}_summary.json")), summary)
}

pub fn cmd_train_localizer(cfg: &PipelineConfig, corpus_dir: &Path, out: &Path) -> Result<TrainSummary> {
    start(cfg, out)?;
    let manifest = corpus::read_manifest(corpus_dir)?;
    let data = localizer_samples(cfg, corpus_dir, &manifest)?;
    let ids = manifest.catalog();
    let (net, report, initial_loss, final_loss) = fit(&cfg.training.localizer, cfg.seed, &data, LossKind::L2, ids.len())?;
    let summary = TrainSummary {
        stage: "localizer".into(),
        organ_ids: ids.clone(),
        samples: data.len(),
        steps: report.trace.len(),
        stopped_on_plateau: report.stopped_on_plateau,
        initial_loss,
        final_loss,
    };
    save_stage(out, "localizer", &net, &ids, &report, &summary)?;
    Ok(summary)
}

pub(crate) fn segmenter_seed(seed: u64, organ: u16) -> u64 {
    seed.wrapping_add(organ as u64)
}

pub fn cmd_train_segmenter(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    organ: u16,
    stats: Option<&Path>,
    out: &Path,
) -> Result<TrainSummary> {
    start(cfg, out)?;
    let manifest = corpus::read_manifest(corpus_dir)?;
    if manifest.organ(organ).is_none() {
        return Err(Error::Config(format!("organ {organ} is not in the corpus catalog {:?}", manifest.catalog())));
    }
    let stats = load_or_compute_stats(stats, corpus_dir, &manifest)?;
    let data = segmenter_samples(cfg, corpus_dir, &manifest, &stats, organ)?;
    let (net, report, initial_loss, final_loss) =
        fit(&cfg.training.segmenter, segmenter_seed(cfg.seed, organ), &data, LossKind::CeDice, 1)?;
    let summary = TrainSummary {
        stage: format!("segmenter_{organ}"),
        organ_ids: vec![organ],
        samples: data.len(),
        steps: report.trace.len(),
        stopped_on_plateau: report.stopped_on_plateau,
        initial_loss,
        final_loss,
    };
    save_stage(out, &format!("segmenter_{organ}"), &net, &[organ], &report, &summary)?;
    Ok(summary)
}

/// Paths for [`cmd_run`]; kept out of the configuration so that runs differing
/// only in where files live produce identical artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunPaths {
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Precomputed statistics; otherwise computed from the training split.
    pub stats: Option<PathBuf>,
    /// Directory holding `localizer.ckpt` and `segmenter_<id>.ckpt`.
    pub models: Option<PathBuf>,
    /// Output directory of an earlier run whose localization results are reused.
    pub resume_localization: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub volume: String,
    pub error: String,
}

/// An organ present in the ground truth that localization missed or boxed
/// without its true center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMiss {
    pub volume: String,
    pub organ: u16,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub volumes: usize,
    pub failures: Vec<Failure>,
    pub localization_misses: Vec<LocalizationMiss>,
    pub global_dice_mean: f64,
    pub global_dice_std: f64,
}

/// Everything `cmd_run` needs besides the member itself.
pub(crate) enum Localizer {
    Truth,
    Net(ConvNet, Vec<u16>),
    Resume(PathBuf),
}

pub(crate) struct Stages {
    pub localizer: Localizer,
    pub predictors: BTreeMap<u16, Box<dyn OrganPredictor>>,
}

impl Stages {
    pub(crate) fn load(cfg: &PipelineConfig, paths: &RunPaths, manifest: &Manifest) -> Result<Self> {
        let models = || {
            paths.models.as_deref().ok_or_else(|| Error::Config("trained models requested but no model directory given".into()))
        };
        let localizer = match (&paths.resume_localization, cfg.localization.heatmaps) {
            (Some(dir), _) => Localizer::Resume(dir.join("localization")),
            (None, HeatmapSource::GroundTruth) => Localizer::Truth,
            (None, HeatmapSource::Trained) => {
                let (h, net) = read_checkpoint(&models()?.join(LOCALIZER_CKPT))?;
                if h.organ_ids != manifest.catalog() {
                    return Err(Error::Config(format!(
                        "localizer predicts organs {:?} but the corpus catalog is {:?}",
                        h.organ_ids,
                        manifest.catalog()
                    )));
                }
                Localizer::Net(net, h.organ_ids)
            }
        };
        let mut predictors: BTreeMap<u16, Box<dyn OrganPredictor>> = BTreeMap::new();
        for o in &manifest.organs {
            let p: Box<dyn OrganPredictor> = match cfg.segmentation.predictor {
                PredictorKind::Oracle => Box::new(IntensityBandPredictor {
                    intensity: o.intensity,
                    half_width: cfg.segmentation.oracle.half_width,
                    softness: cfg.segmentation.oracle.softness,
                }),
                PredictorKind::Trained => {
                    let (h, net) = read_checkpoint(&models()?.join(segmenter_ckpt(o.id)))?;
                    if h.organ_ids != [o.id] {
                        return Err(Error::Config(format!("checkpoint for organ {} segments {:?}", o.id, h.organ_ids)));
                    }
                    Box::new(ConvNetPredictor { net, channel: 0 })
                }
            };
            predictors.insert(o.id, p);
        }
        Ok(Stages { localizer, predictors })
    }
}

pub(crate) struct VolumeResult {
    pub localization: LocalizationResult,
    pub crops: Vec<OrganCrop>,
    pub labels: LabelMap,
    pub report: AggregationReport,
    pub misses: Vec<LocalizationMiss>,
    pub truth: LabelMap,
}

pub(crate) fn process_volume(
    cfg: &PipelineConfig,
    stages: &Stages,
    stats: &OrganStats,
    catalog: &[u16],
    case: &Case,
) -> Result<VolumeResult> {
    let p = prepare(cfg, case)?;
    let loc_grid = *p.loc_input.grid();
    let localization = match &stages.localizer {
        Localizer::Resume(dir) => io::read_json(&dir.join(format!("{}.json", case.name)))?,
        Localizer::Truth => localize_all(&truth_heatmaps(cfg, catalog, &case.centroids, &loc_grid)?, stats, &cfg.localization.params())?,
        Localizer::Net(net, ids) => {
            let out = net.forward_volumes(&p.loc_input, VolumeKind::Heatmap)?;
            let stack = HeatmapStack::new(ids.clone(), cfg.localization.sigma_sq, out)?;
            localize_all(&stack, stats, &cfg.localization.params())?
        }
    };

    let seg_grid = *p.seg_image.grid();
    let mut crops = Vec::new();
    let mut misses = Vec::new();
    for (organ, slot) in catalog.iter().zip(case.centroids.slots(catalog)) {
        let found = localization.organs.iter().find(|o| o.organ == *organ);
        let bbox = found.and_then(|o| o.bbox);
        if let Some(center) = slot {
            let reason = match bbox {
                None => Some("not found".to_string()),
                Some(b) if !b.contains(loc_grid.nearest_voxel(center)) => Some(format!("box {:?}..{:?} misses the center", b.min, b.max)),
                Some(_) => None,
            };
            if let Some(reason) = reason {
                misses.push(LocalizationMiss { volume: case.name.clone(), organ: *organ, reason });
            }
        }
        let Some(b) = bbox.filter(|_| found.is_some_and(|o| o.status == Status::Found)) else { continue };
        let seg_box = b.remap(&loc_grid, &seg_grid)?;
        let predictor = stages.predictors.get(organ).ok_or_else(|| Error::Config(format!("no predictor for organ {organ}")))?;
        let pc = segment_organ(predictor.as_ref(), &p.seg_image, &seg_box, cfg.segmentation.pad_value)?;
        crops.push(OrganCrop { organ: *organ, bbox: pc.bbox, probs: pc.probs });
    }
    let agg = aggregate(&CropSet { grid: seg_grid, crops: crops.clone() }, cfg.segmentation.decision_threshold)?;
    Ok(VolumeResult { localization, crops, labels: agg.labels, report: agg.report, misses, truth: p.seg_labels })
}

pub fn labels_path(run_dir: &Path, volume: &str) -> PathBuf {
    run_dir.join("labels").join(format!("{volume}.lbl"))
}

fn write_dice(out: &Path, report: &DiceReport) -> Result<()> {
    io::write_json(&out.join("dice_report.json"), report)?;
    let path = out.join("dice_per_case.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.cases {
        w.serialize(row).map_err(|source| Error::Csv { path: path.clone(), source })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(&path, e.to_string()))?;
    io::write_bytes(&path, &bytes)
}

pub fn read_dice_cases(path: &Path) -> Result<Vec<CaseDice>> {
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|source| Error::Csv { path: path.into(), source })
}

/// Two-step inference and evaluation over the test split. A volume that
/// fails is recorded in `failures.json` and left out of the Dice report.
pub fn cmd_run(cfg: &PipelineConfig, paths: &RunPaths) -> Result<RunSummary> {
    let out = &paths.out;
    start(cfg, out)?;
    let manifest = corpus::read_manifest(&paths.corpus)?;
    let catalog = manifest.catalog();
    let stats = load_or_compute_stats(paths.stats.as_deref(), &paths.corpus, &manifest)?;
    io::write_json(&out.join(STATS_FILE), &stats)?;
    let stages = Stages::load(cfg, paths, &manifest)?;

    let mut failures = Vec::new();
    let mut misses = Vec::new();
    let mut reports = BTreeMap::new();
    let mut evaluated: Vec<(String, LabelMap, LabelMap)> = Vec::new();
    let members: Vec<_> = manifest.split(Split::Test).collect();
    for m in &members {
        let outcome = corpus::load_case(&paths.corpus, m).and_then(|case| {
            let r = process_volume(cfg, &stages, &stats, &catalog, &case)?;
            io::write_json(&out.join("localization").join(format!("{}.json", m.name)), &r.localization)?;
            for c in &r.crops {
                io::write_crop(&out.join("crops").join(format!("{}_organ{}.prob", m.name, c.organ)), &c.probs, &c.bbox, c.organ)?;
            }
            io::write_labels(&labels_path(out, &m.name), &r.labels)?;
            Ok(r)
        });
        match outcome {
            Ok(r) => {
                misses.extend(r.misses);
                reports.insert(m.name.clone(), r.report);
                evaluated.push((m.name.clone(), r.labels, r.truth));
            }
            Err(e) => failures.push(Failure { volume: m.name.clone(), error: e.to_string() }),
        }
    }

    let report = evaluate_corpus(evaluated.iter().map(|(n, p, t)| (n.as_str(), p, t)), &catalog, cfg.evaluation.aggregation)?;
    io::write_json(&out.join("aggregation_report.json"), &reports)?;
    write_dice(out, &report)?;
    io::write_json(&out.join("failures.json"), &failures)?;
    let summary = RunSummary {
        volumes: members.len(),
        failures,
        localization_misses: misses,
        global_dice_mean: report.global_mean,
        global_dice_std: report.global_std,
    };
    io::write_json(&out.join("run_summary.json"), &summary)?;
    Ok(summary)
}

/// Score label maps of an earlier run (`<predictions>/labels/<name>.lbl`)
/// against the corpus test split.
pub fn cmd_evaluate(cfg: &PipelineConfig, corpus_dir: &Path, predictions: &Path, out: &Path) -> Result<DiceReport> {
    start(cfg, out)?;
    let manifest = corpus::read_manifest(corpus_dir)?;
    let mut cases = Vec::new();
    for m in manifest.split(Split::Test) {
        let pred = io::read_labels(&labels_path(predictions, &m.name))?;
        let mut truth = corpus::load_labels(corpus_dir, m)?;
        if truth.spacing() != pred.spacing() {
            truth = resample_nearest(&truth, pred.spacing())?;
        }
        cases.push((m.name.clone(), pred, truth));
    }
    let report = evaluate_corpus(cases.iter().map(|(n, p, t)| (n.as_str(), p, t)), &manifest.catalog(), cfg.evaluation.aggregation)?;
    write_dice(out, &report)?;
    Ok(report)
}
