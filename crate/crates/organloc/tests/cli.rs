use std::process::Command;

fn organloc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_organloc")).args(args).output().unwrap()
}

#[test]
fn invalid_threshold_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = organloc(&["phantom", "--out", out.to_str().unwrap(), "--tau", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau"));
}

#[test]
fn missing_corpus_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = organloc(&["stats", "--out", dir.path().to_str().unwrap(), "--corpus", "/nonexistent/corpus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn phantom_then_oracle_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{ "corpus": { "n_volumes": 3, "n_train": 2, "template": { "grid": { "dims": [40, 40, 40], "spacing": [1.0, 1.0, 1.0], "origin": [0.0, 0.0, 0.0] },
             "organs": [ { "id": 1, "name": "blob", "center": [20.0, 20.0, 20.0], "semi_axes": [6.0, 6.0, 6.0], "intensity": 100.0 } ],
             "noise_sigma": 5.0, "seed": 0 } } }"#,
    )
    .unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    let cfg = cfg.to_str().unwrap();
    let o = organloc(&["phantom", "--config", cfg, "--out", corpus.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(corpus.join("manifest.json").exists());
    let o = organloc(&[
        "run", "--config", cfg, "--out", run.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(), "--truth-heatmaps", "--oracle",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 volumes, 0 failed, 0 localization misses"));
    assert!(run.join("labels").join("vol_0002.lbl").exists());
}
