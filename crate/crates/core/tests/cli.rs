//! End-to-end runs of the `nasopath` binary.

use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use nasopath::patchfilter::patch_id;
use nasopath::tiler::PatchBox;

fn nasopath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nasopath")).args(args).output().expect("binary runs")
}

fn with_config(cfg: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    nasopath(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One 1024² Normal region on a 1280² slide of pink tissue.
fn toy_fixture(dir: &Path) {
    std::fs::create_dir_all(dir.join("slides")).unwrap();
    let img = RgbImage::from_fn(1280, 1280, |x, y| Rgb([180 + (x % 7) as u8, 90 + (y % 5) as u8, 160]));
    img.save(dir.join("slides/toy.png")).unwrap();
    std::fs::write(
        dir.join("annotations.json"),
        r#"{"wsi_id": "toy", "magnification": 20, "annotations": [
            {"annotator": "A", "class": "Normal", "polygon": [[0,0],[1024,0],[1024,1024],[0,1024]]}]}"#,
    )
    .unwrap();
    std::fs::write(dir.join("config.toml"), "seed = 1\n").unwrap();
}

#[test]
fn toy_region_tiles_into_sixteen_patches() {
    let dir = tempfile::tempdir().unwrap();
    toy_fixture(dir.path());
    let out = with_config(&dir.path().join("config.toml"), &["tile"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().any(|l| l == "Normal: 16"), "{}", stdout(&out));
    let pngs = std::fs::read_dir(dir.path().join("output/patches")).unwrap().count();
    assert_eq!(pngs, 16);
    let index = std::fs::read_to_string(dir.path().join("output/patch_index.csv")).unwrap();
    assert_eq!(index.lines().count(), 17);
    assert!(index.contains("toy,Normal,768,768,256,1.000000"));
}

#[test]
fn full_pipeline_on_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = nasopath(&["synth", "--out", root.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = root.join("config.toml");
    for cmd in ["tile", "split", "train", "eval", "report"] {
        let out = with_config(&cfg, &["--threads", "2", cmd]);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    let output = root.join("output");
    // The cell at (0, 1024) on s1 is 30% white and must be filtered out.
    let blot = patch_id("s1", PatchBox { x: 0, y: 1024, side: 256 });
    let neighbour = patch_id("s1", PatchBox { x: 256, y: 1024, side: 256 });
    assert!(!output.join(format!("patches/{blot}.png")).exists());
    assert!(output.join(format!("patches/{neighbour}.png")).exists());
    for f in [
        "manifest.csv",
        "manifest.json",
        "train/epochs.csv",
        "train/loss_curve.svg",
        "train/best.ckpt",
        "eval/test1/confusion.csv",
        "eval/test1/metrics.json",
        "eval/test2/confusion.svg",
        "report.md",
    ] {
        assert!(output.join(f).exists(), "missing {f}");
    }
    let epochs = std::fs::read_to_string(output.join("train/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().next(), Some("epoch,train_loss,val_loss,val_acc"));
    assert_eq!(epochs.lines().count(), 4);
}

#[test]
fn missing_annotation_file_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    toy_fixture(dir.path());
    std::fs::remove_file(dir.path().join("annotations.json")).unwrap();
    let out = with_config(&dir.path().join("config.toml"), &["tile"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("annotations.json"), "{}", stderr(&out));
}

#[test]
fn invalid_annotation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    toy_fixture(dir.path());
    std::fs::write(
        dir.path().join("annotations.json"),
        r#"{"wsi_id": "toy", "magnification": 20, "annotations": [
            {"annotator": "A", "class": "Normal", "polygon": [[0,0],[10,10],[10,0],[0,10]]}]}"#,
    )
    .unwrap();
    let out = with_config(&dir.path().join("config.toml"), &["tile"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("self-intersecting"), "{}", stderr(&out));
}

#[test]
fn invalid_config_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[train]\nbatch_size = 0\n").unwrap();
    let out = with_config(&dir.path().join("c.toml"), &["train"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(nasopath(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nasopath(&["tile", "--threads", "many"]).status.code(), Some(2));
    assert_eq!(nasopath(&["--config", "/nonexistent/config.toml", "tile"]).status.code(), Some(2));
}

#[test]
fn split_before_tile_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    toy_fixture(dir.path());
    let out = with_config(&dir.path().join("config.toml"), &["split"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    toy_fixture(dir.path());
    let out = with_config(&dir.path().join("config.toml"), &["--dry-run", "--seed", "42", "tile"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("seed = 42"), "{text}");
    assert!(text.contains("[architecture]") && text.contains("growth_rate = 32"), "{text}");
    assert!(!dir.path().join("output").exists());
}
