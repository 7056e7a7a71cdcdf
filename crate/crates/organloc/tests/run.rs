mod common;

use std::fs;
use std::path::Path;

use common::{small_config, snapshot};
use organloc::checkpoint::{read_checkpoint, read_trace};
use organloc::config::{HeatmapSource, PredictorKind};
use organloc::corpus::{self, Centroids};
use organloc::io;
use organloc::pipeline::{self, cmd_evaluate, cmd_run, labels_path, read_dice_cases, RunPaths, RunSummary};
use organloc::{Error, PipelineConfig};
use organloc_core::model::ConvNet;
use organloc_core::{Volume, VolumeKind};

fn oracle_config() -> PipelineConfig {
    let mut cfg = small_config();
    cfg.localization.heatmaps = HeatmapSource::GroundTruth;
    cfg.segmentation.predictor = PredictorKind::Oracle;
    cfg
}

fn corpus_in(dir: &Path, cfg: &PipelineConfig) {
    pipeline::cmd_phantom(cfg, dir).unwrap();
}

fn run(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> RunSummary {
    cmd_run(cfg, &RunPaths { corpus: corpus.into(), out: out.into(), ..Default::default() }).unwrap()
}

#[test]
fn oracle_run_writes_every_artifact() {
    let c = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = oracle_config();
    corpus_in(c.path(), &cfg);
    let s = run(&cfg, c.path(), out.path());
    assert_eq!(s.volumes, 2);
    assert!(s.failures.is_empty() && s.localization_misses.is_empty(), "{s:?}");
    assert!(s.global_dice_mean > 0.95, "{s:?}");
    for f in ["run_config.json", "organ_stats.json", "aggregation_report.json", "dice_report.json", "dice_per_case.csv", "failures.json", "run_summary.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    for v in ["vol_0003", "vol_0004"] {
        assert!(out.path().join("localization").join(format!("{v}.json")).exists());
        let labels = io::read_labels(&labels_path(out.path(), v)).unwrap();
        assert_eq!(labels.dims(), [40, 40, 40]);
        for organ in [1, 2] {
            let (h, probs) = io::read_volume_with_header(&out.path().join("crops").join(format!("{v}_organ{organ}.prob"))).unwrap();
            assert_eq!(h.organ_id, Some(organ));
            assert_eq!(probs.kind(), VolumeKind::Probability);
        }
    }
    let cases = read_dice_cases(&out.path().join("dice_per_case.csv")).unwrap();
    assert_eq!(cases.len(), 4);
}

#[test]
fn evaluate_rescores_a_finished_run() {
    let c = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let ev = tempfile::tempdir().unwrap();
    let cfg = oracle_config();
    corpus_in(c.path(), &cfg);
    let s = run(&cfg, c.path(), out.path());
    let r = cmd_evaluate(&cfg, c.path(), out.path(), ev.path()).unwrap();
    assert_eq!((r.global_mean, r.global_std), (s.global_dice_mean, s.global_dice_std));
    assert_eq!(fs::read(out.path().join("dice_per_case.csv")).unwrap(), fs::read(ev.path().join("dice_per_case.csv")).unwrap());
}

#[test]
fn resumed_localization_reproduces_the_run() {
    let c = tempfile::tempdir().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = oracle_config();
    corpus_in(c.path(), &cfg);
    run(&cfg, c.path(), a.path());
    let paths = RunPaths { corpus: c.path().into(), out: b.path().into(), resume_localization: Some(a.path().into()), ..Default::default() };
    cmd_run(&cfg, &paths).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<_> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    assert!(differing.is_empty() && sa.len() == sb.len(), "{differing:?}");
}

#[test]
fn blank_member_is_all_background() {
    let c = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = oracle_config();
    corpus_in(c.path(), &cfg);
    let m = corpus::read_manifest(c.path()).unwrap();
    let blank = &m.members[4];
    let g = cfg.corpus.template.grid;
    io::write_volume(&c.path().join(&blank.image), &Volume::filled(g, VolumeKind::Intensity, 0.0).unwrap()).unwrap();
    io::write_labels(&c.path().join(&blank.labels), &Volume::filled(g, VolumeKind::Label, 0u16).unwrap()).unwrap();
    io::write_json(&c.path().join(&blank.centroids), &Centroids { organs: vec![] }).unwrap();

    let s = run(&cfg, c.path(), out.path());
    assert!(s.failures.is_empty() && s.localization_misses.is_empty(), "{s:?}");
    let labels = io::read_labels(&labels_path(out.path(), &blank.name)).unwrap();
    assert!(labels.data().iter().all(|&l| l == 0));
    let cases = read_dice_cases(&out.path().join("dice_per_case.csv")).unwrap();
    assert!(cases.iter().filter(|r| r.volume == blank.name).all(|r| r.dice == 1.0));
    assert!(!out.path().join("crops").join(format!("{}_organ1.prob", blank.name)).exists());
}

#[test]
fn failing_member_is_recorded_and_skipped() {
    let c = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = oracle_config();
    corpus_in(c.path(), &cfg);
    fs::remove_file(c.path().join("vol_0003.img")).unwrap();
    let s = run(&cfg, c.path(), out.path());
    assert_eq!(s.volumes, 2);
    assert_eq!(s.failures.len(), 1);
    assert_eq!(s.failures[0].volume, "vol_0003");
    assert!(labels_path(out.path(), "vol_0004").exists());
    let cases = read_dice_cases(&out.path().join("dice_per_case.csv")).unwrap();
    assert!(cases.iter().all(|r| r.volume == "vol_0004"));
}

#[test]
fn empty_test_split_gives_an_empty_report() {
    let c = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut cfg = oracle_config();
    cfg.corpus.n_train = 5;
    corpus_in(c.path(), &cfg);
    let s = run(&cfg, c.path(), out.path());
    assert_eq!((s.volumes, s.global_dice_mean), (0, 0.0));
    assert!(read_dice_cases(&out.path().join("dice_per_case.csv")).unwrap().is_empty());
}

#[test]
fn trained_stages_run_end_to_end() {
    let c = tempfile::tempdir().unwrap();
    let models = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = small_config();
    corpus_in(c.path(), &cfg);
    let loc = pipeline::cmd_train_localizer(&cfg, c.path(), models.path()).unwrap();
    assert_eq!((loc.steps, loc.samples, loc.organ_ids.clone()), (4, 3, vec![1, 2]));
    for organ in [1, 2] {
        pipeline::cmd_train_segmenter(&cfg, c.path(), organ, None, models.path()).unwrap();
    }
    assert_eq!(read_trace(&models.path().join("localizer_trace.csv")).unwrap().len(), 4);
    let paths = RunPaths { corpus: c.path().into(), out: out.path().into(), models: Some(models.path().into()), ..Default::default() };
    let s = cmd_run(&cfg, &paths).unwrap();
    assert_eq!(s.volumes, 2);
    assert!(s.failures.is_empty(), "{s:?}");
}

#[test]
fn trained_run_without_models_is_a_configuration_error() {
    let c = tempfile::tempdir().unwrap();
    let cfg = small_config();
    corpus_in(c.path(), &cfg);
    let err = cmd_run(&cfg, &RunPaths { corpus: c.path().into(), out: c.path().join("out"), ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn zero_learning_rate_keeps_the_initial_network() {
    let c = tempfile::tempdir().unwrap();
    let models = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.training.segmenter.learning_rate = 0.0;
    corpus_in(c.path(), &cfg);
    let s = pipeline::cmd_train_segmenter(&cfg, c.path(), 2, None, models.path()).unwrap();
    assert_eq!(s.initial_loss, s.final_loss);
    let (_, net) = read_checkpoint(&models.path().join("segmenter_2.ckpt")).unwrap();
    let st = &cfg.training.segmenter;
    let init = ConvNet::init(&st.architecture(1), cfg.seed + 2, st.head_bias);
    assert_eq!(net.params(), init.params());
    assert!(read_trace(&models.path().join("segmenter_2_trace.csv")).unwrap().iter().all(|e| e.lr == 0.0));
}

#[test]
fn unknown_organ_is_rejected() {
    let c = tempfile::tempdir().unwrap();
    let cfg = small_config();
    corpus_in(c.path(), &cfg);
    let err = pipeline::cmd_train_segmenter(&cfg, c.path(), 3, None, &c.path().join("m")).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
