use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fla_core::classify::parse_segments;
use fla_core::export::parse_grid;
use fla_core::{ModelFile, SceneSpec};
use tempfile::TempDir;

fn fla(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fla"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fla(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = fla(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

/// A small demo scene written as `scene/` plus a quick fit `model.json`.
fn fitted() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SceneSpec::demo_road(6);
    spec.track_count = 16;
    spec.mean_track_length = 120;
    fs::write(dir.path().join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    ok(dir.path(), &["gen", "--scene", "spec.json", "--out", "scene"]);
    ok(
        dir.path(),
        &["fit", "scene/tracks.csv", "--bins", "16,16,16,4x4", "--restarts", "2", "--out", "model.json"],
    );
    dir
}

#[test]
fn missing_spec_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(dir.path(), &["gen", "--scene", "nowhere.json", "--out", "x"]);
    assert!(err.starts_with("error: io: "), "{err}");
    assert!(err.contains("nowhere.json"), "{err}");
}

#[test]
fn gen_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"archetypes":[{"weight":1.0,"size":{"mean":0.3,"stddev":0.02},
        "speed":{"mean":0.5,"stddev":0.02},"direction":{"mean":1.0,"stddev":0.1},
        "region":{"x0":0.1,"y0":0.1,"x1":0.4,"y1":0.4}}],
        "track_count":3,"mean_track_length":20,"seed":8}"#;
    fs::write(dir.path().join("one.json"), spec).unwrap();
    ok(dir.path(), &["gen", "--scene", "one.json", "--out", "a"]);
    ok(dir.path(), &["gen", "--manifest", "a/manifest.json", "--out", "b"]);
    for f in ["tracks.csv", "truth.csv", "scene.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn fit_writes_requested_counts_and_a_manifest() {
    let dir = fitted();
    let file = ModelFile::from_json(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(file.model.class_counts, vec![2, 3, 6, 8]);
    assert!(dir.path().join("model.manifest.json").exists());
    ok(
        dir.path(),
        &["fit", "scene/tracks.csv", "--bins", "16,16,16,4x4", "--classes", "1,1,1,1", "--out", "r1.json"],
    );
    let r1 = ModelFile::from_json(&fs::read_to_string(dir.path().join("r1.json")).unwrap()).unwrap();
    assert!(r1.fit.iterations <= 2 && r1.fit.converged);
}

#[test]
fn flags_override_the_manifest() {
    let dir = fitted();
    ok(
        dir.path(),
        &["fit", "--manifest", "model.manifest.json", "--classes", "2,2,2,2", "--out", "m2.json"],
    );
    let m2 = ModelFile::from_json(&fs::read_to_string(dir.path().join("m2.json")).unwrap()).unwrap();
    assert_eq!(m2.model.class_counts, vec![2, 2, 2, 2]);
    let manifest = fs::read_to_string(dir.path().join("m2.manifest.json")).unwrap();
    assert!(manifest.contains("\"classes\": [\n      2,\n      2,\n      2,\n      2\n    ]"), "{manifest}");
}

#[test]
fn classify_and_query() {
    let dir = fitted();
    ok(dir.path(), &["classify", "scene/tracks.csv", "--model", "model.json", "--out", "seg.csv"]);
    let text = fs::read_to_string(dir.path().join("seg.csv")).unwrap();
    let segments = parse_segments(text.as_bytes()).unwrap();
    let mut again = Vec::new();
    fla_core::classify::write_segments(&segments, &mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);

    let all = ok(dir.path(), &["query", "seg.csv", "true", "--model", "model.json"]);
    assert_eq!(all.lines().count(), 16);
    let none = ok(dir.path(), &["query", "seg.csv", "false"]);
    assert!(none.is_empty());

    let err = fail(dir.path(), &["query", "seg.csv", "[speed=0", "--model", "model.json"]);
    assert!(err.starts_with("error: query: "), "{err}");
    assert!(err.contains("position 8"), "{err}");
}

#[test]
fn empty_track_file_gives_empty_segments() {
    let dir = fitted();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    ok(dir.path(), &["classify", "empty.csv", "--model", "model.json", "--out", "e.csv"]);
    let segments = parse_segments(fs::read(dir.path().join("e.csv")).unwrap().as_slice()).unwrap();
    assert!(segments.is_empty());
}

#[test]
fn export_writes_images_and_normalized_grids() {
    let dir = fitted();
    ok(dir.path(), &["export", "--model", "model.json", "--what", "model,diff,marginals", "--out", "plots"]);
    let plots = dir.path().join("plots");
    let grid = parse_grid(&fs::read_to_string(plots.join("model_size_speed.csv")).unwrap()).unwrap();
    assert!((grid.sum() - 1.0).abs() <= 1e-9);
    let pgm = fs::read(plots.join("model_size_speed.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert!(plots.join("diff_size_speed.csv").exists());
    let err = fail(dir.path(), &["export", "--model", "model.json", "--what", "heatmap", "--out", "p"]);
    assert!(err.starts_with("error: invalid: "), "{err}");
}

#[test]
fn compare_oracle_rank_one_and_cap() {
    let dir = fitted();
    let out = ok(
        dir.path(),
        &["compare-oracle", "scene/tracks.csv", "--bins", "16,16,16,4x4", "--classes", "1,1,1,1", "--out", "r.json"],
    );
    assert!(out.contains("pairwise objective"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    let p = report["pairwise_objective"].as_f64().unwrap();
    let o = report["oracle_objective"].as_f64().unwrap();
    assert!((p - o).abs() <= 1e-6, "{p} vs {o}");

    let err = fail(dir.path(), &["compare-oracle", "scene/tracks.csv", "--classes", "20,20,30,30"]);
    assert!(err.contains("exceed the oracle cap"), "{err}");
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = fla(dir.path(), &["fit", "--max-iters", "lots"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: usage: "));
    let err = fail(dir.path(), &["fit", "--out", "m.json"]);
    assert!(err.starts_with("error: invalid: "), "{err}");
}
