use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn octava(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octava")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = octava(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A one-tile grid phantom in `dir/phantom`.
fn small_phantom(dir: &Path, seed: u64) -> PathBuf {
    let spec = dir.join(format!("spec{seed}.json"));
    std::fs::write(&spec, format!(r#"{{"size_px": 270, "tiles": 1, "seed": {seed}}}"#)).unwrap();
    let out = dir.join(format!("phantom{seed}"));
    ok(&["phantom", "grid", "--spec", s(&spec), "--out", s(&out)]);
    out.join("phantom.png")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn phantom_writes_image_sidecar_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let img = small_phantom(dir.path(), 1);
    let root = img.parent().unwrap();
    let truth = read_json(&root.join("truth.json"));
    assert_eq!(truth["node_count"], 12);
    assert_eq!(read_json(&root.join("phantom.json"))["pixel_size_um"], 4.0);
    assert_eq!(read_json(&root.join("spec.json"))["size_px"], 270);
    let again = small_phantom(dir.path(), 1);
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(again).unwrap());

    let net = dir.path().join("net");
    let spec = dir.path().join("net.json");
    std::fs::write(&spec, r#"{"size_px": 200, "trunks": 2, "connectors_per_gap": 2}"#).unwrap();
    ok(&["phantom", "network", "--spec", s(&spec), "--out", s(&net)]);
    assert_eq!(read_json(&net.join("truth.json"))["node_count"], 4);

    std::fs::write(&spec, r#"{"size_px": 200, "bogus": 2}"#).unwrap();
    assert_eq!(octava(&["phantom", "network", "--spec", s(&spec), "--out", s(&net)]).status.code(), Some(1));
}

#[test]
fn analyze_is_deterministic_and_uses_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let img = small_phantom(dir.path(), 1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["analyze", s(&img), "--preset", "grid", "--out", s(&a)]);
    ok(&["analyze", s(&img), "--preset", "grid", "--out", s(&b)]);
    for f in ["metrics.json", "elements.csv", "overlay.png", "thickness.png", "histograms.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, read_json(&a.join("metrics.json")));
    assert!(printed["vad_percent"].as_f64().unwrap() > 10.0);
    let csv = std::fs::read_to_string(a.join("elements.csv")).unwrap();
    assert!(csv.starts_with("id,class,length_um,mean_diameter_um,tortuosity,suppressed,curated_out\n"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let img = small_phantom(dir.path(), 1);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"median_kernel": 5, "twig_size_um": 30.0, "frangi": null, "emit": {"overlay": false}}"#).unwrap();
    let out = dir.path().join("o");
    let v: Value =
        serde_json::from_slice(&ok(&["analyze", s(&img), "--config", s(&cfg), "--median", "1", "--out", s(&out)]).stdout)
            .unwrap();
    assert_eq!(v["parameters"]["median_kernel"], 1);
    assert_eq!(v["parameters"]["twig_size_um"], 30.0);
    assert!(v["parameters"]["sigma_max"].is_null());
    assert!(!out.join("overlay.png").exists());
    assert!(out.join("thickness.png").exists());

    let v: Value = serde_json::from_slice(&ok(&["analyze", s(&img), "--config", s(&cfg), "--sigma-max", "3"]).stdout).unwrap();
    assert_eq!(v["parameters"]["sigma_max"], 3.0);

    std::fs::write(&cfg, r#"{"median_kernal": 5}"#).unwrap();
    assert_eq!(octava(&["analyze", s(&img), "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(octava(&["analyze", s(&img), "--median", "4"]).status.code(), Some(1));
    assert_eq!(octava(&["analyze", s(&img), "--window", "9"]).status.code(), Some(1));
    assert_ne!(octava(&["analyze", s(&img), "--no-frangi", "--sigma-max", "3"]).status.code(), Some(0));
}

#[test]
fn degenerate_image_reports_stage_and_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let flat = octava_core::GrayImage::from_fn(64, 64, octava_core::Calibration::new(2.0).unwrap(), |_, _| 0.4).unwrap();
    let path = dir.path().join("flat.png");
    octava_core::image::save_image(&flat, &path, octava_core::image::BitDepth::Eight).unwrap();
    let out = octava(&["analyze", s(&path), "--pixel-size", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("insufficient quality"), "{err}");
    assert!(err.contains('['), "{err}");
    let out = octava(&["analyze", s(&path)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no pixel size"));
}

#[test]
fn batch_isolates_failures_and_matches_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let img = small_phantom(dir.path(), 1);
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"corrupt").unwrap();
    let out = dir.path().join("batch");
    let r = octava(&["batch", s(&img), s(&bad), s(&img), "--preset", "grid", "--pixel-size", "4", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains(",ok,") && rows[1].contains(",failed,") && rows[2].contains(",ok,"), "{summary}");
    let strip = |r: &str| r.split_once(',').unwrap().1.to_string();
    assert_eq!(strip(rows[0]), strip(rows[2]));

    let single = dir.path().join("single");
    ok(&["analyze", s(&img), "--preset", "grid", "--pixel-size", "4", "--out", s(&single)]);
    let first = std::fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).find(|e| e.path().is_dir()).unwrap().path();
    for f in ["metrics.json", "elements.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(single.join(f)).unwrap());
    }

    let clean = dir.path().join("clean");
    ok(&["batch", s(&img), "--preset", "grid", "--out", s(&clean), "--workers", "1"]);
    assert_eq!(octava(&["batch", s(&img)]).status.code(), Some(1));
}

#[test]
fn repeatability_from_rows_and_from_summary() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    std::fs::write(&rows, "subject,repeat,value\nA,1,10\nA,2,12\nA,3,14\nB,1,20\nB,2,20\nB,3,23\n").unwrap();
    let out = ok(&["repeatability", s(&rows)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(line[0], "value");
    let sw: f64 = line[4].parse().unwrap();
    assert!((sw - 3.5f64.sqrt()).abs() < 1e-12 * 3.5f64.sqrt());

    let imgs: Vec<PathBuf> = [1, 1, 2, 2].iter().map(|&seed| small_phantom(dir.path(), seed)).collect();
    let batch = dir.path().join("batch");
    let mut args = vec!["batch"];
    args.extend(imgs.iter().map(|p| s(p)));
    args.extend(["--preset", "grid", "--out", s(&batch)]);
    ok(&args);
    let res = dir.path().join("rep.csv");
    let summary = batch.join("summary.csv");
    ok(&["repeatability", s(&summary), "--repeats", "2", "--metrics", "vad_percent,cf", "--out", s(&res)]);
    let text = std::fs::read_to_string(&res).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("vad_percent,2,2,"));
    let sw: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(sw, 0.0);
    let all = ok(&["repeatability", s(&summary), "--repeats", "2"]);
    assert_eq!(String::from_utf8(all.stdout).unwrap().lines().count(), 11);
    assert_eq!(octava(&["repeatability", s(&summary), "--repeats", "3"]).status.code(), Some(1));
}
