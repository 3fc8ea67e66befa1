mod common;

use std::fs;

use common::{fixture, run, write_scene, TEN_WINDOWS};
use clinker_core::annotation::{import_coco, import_labelme, polygon_to_mask};
use clinker_core::{LabelMap, PhaseLabel};

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn convert_labelme_matches_golden_coco() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let input = fixture("sample_labelme.json");
    for (encoding, golden) in [("polygon", "sample_coco.golden.json"), ("rle", "sample_coco_rle.golden.json")] {
        let out = run(&["convert", "--quiet", "--encoding", encoding, "--out-dir", out_dir, input.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        let produced = fs::read(dir.path().join("coco.json")).unwrap();
        assert_eq!(produced, fs::read(fixture(golden)).unwrap(), "{encoding} output drifted from {golden}");
    }
}

#[test]
fn rle_and_polygon_documents_describe_the_same_pixels() {
    let poly = import_coco(&fs::read_to_string(fixture("sample_coco.golden.json")).unwrap()).unwrap();
    let rle = import_coco(&fs::read_to_string(fixture("sample_coco_rle.golden.json")).unwrap()).unwrap();
    assert_eq!(poly.len(), 1);
    for (a, b) in poly[0].instances.iter().zip(&rle[0].instances) {
        assert_eq!(a.region, b.region);
        assert_eq!(a.phase, b.phase);
    }
}

#[test]
fn convert_to_masks_paints_each_polygon() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("sample_labelme.json");
    let out = run(&["convert", "--quiet", "--to", "masks", "--out-dir", dir.path().to_str().unwrap(), input.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let map = LabelMap::load(dir.path().join("image_1_labels.png")).unwrap();
    let doc = import_labelme(&fs::read_to_string(&input).unwrap(), 1).unwrap();
    let mut expected = LabelMap::filled(doc.width, doc.height, PhaseLabel::Other);
    for inst in &doc.instances {
        let mask = polygon_to_mask(&inst.polygons, doc.width, doc.height).unwrap();
        for (x, y) in mask.pixels() {
            expected.set(x, y, inst.phase);
        }
    }
    assert_eq!(map, expected);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n[mesh]\nspacing = 2\nmin_angel = 20.0\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "mesh", "--labels", "unused.png"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("min_angel"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error code=2 kind=usage message="), "{err}");
}

#[test]
fn help_lists_every_flag() {
    let common = ["--config", "--seed", "--out-dir", "--quiet"];
    let cases: [(&str, &[&str]); 6] = [
        ("convert", &["--from", "--to", "--encoding"]),
        ("split", &["--train-fraction", "--folds"]),
        ("mow", &["--image", "--labels", "--p", "--dump-dataset"]),
        ("analyze", &["--labels", "--metric", "--normalization", "--points", "--sampling", "--min-area"]),
        ("eval", &["--mode", "--pred", "--gt", "--iou-threshold", "--step", "--cutoff", "--average", "--phase-agnostic"]),
        ("mesh", &["--labels", "--spacing", "--min-angle", "--format", "--label-rule", "--svg"]),
    ];
    for (cmd, flags) in cases {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help failed");
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in common.iter().chain(flags) {
            assert!(text.contains(flag), "{cmd} --help is missing {flag}");
        }
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--out-dir", dir.path().to_str().unwrap(), "--labels", "/nonexistent/labels.png"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("kind=data"));

    let out = run(&["mesh", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--labels"));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0, "failed runs must not leave files");
}

#[test]
fn mow_with_ten_explicit_windows_reports_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let cfg = dir.path().join("mow.toml");
    fs::write(&cfg, TEN_WINDOWS).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config", cfg.to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
        "--seed", "5",
        "mow", "--quiet", "--dump-dataset",
        "--image", scene.image.to_str().unwrap(),
        "--labels", scene.labels.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("mow_report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 25_000);
    assert_eq!(report["features"], 27);
    assert_eq!(report["train"].as_u64().unwrap() + report["val"].as_u64().unwrap() + report["test"].as_u64().unwrap(), 25_000);
    let csv = fs::read_to_string(out_dir.join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 25_001);
    let pred = LabelMap::load(out_dir.join("prediction.png")).unwrap();
    assert_eq!(pred.dims(), (300, 300));
    assert!(out_dir.join("model.json").exists());
}

#[test]
fn split_plans_from_coco() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("sample_labelme.json");
    let copies: Vec<&str> = std::iter::repeat_n(input.to_str().unwrap(), 10).collect();
    let mut args = vec!["convert", "--quiet", "--out-dir", dir.path().to_str().unwrap()];
    args.extend(&copies);
    assert!(run(&args).status.success());
    let coco = dir.path().join("coco.json");
    let out = run(&["split", "--quiet", "--seed", "9", "--out-dir", dir.path().to_str().unwrap(), coco.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("split.json")).unwrap()).unwrap();
    assert_eq!(plan["train_particles"], 32);
    assert_eq!(plan["test_particles"], 8);
    assert_eq!(plan["seed"], 9);
    assert_eq!(plan["entries"].as_array().unwrap().len(), 10);
}

#[test]
fn analyze_eval_and_mesh_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path());
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    let labels = scene.labels.to_str().unwrap();

    let out = run(&["analyze", "--quiet", "--out-dir", o, "--labels", labels, "--metric", "area"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let psd = fs::read_to_string(out_dir.join("psd.csv")).unwrap();
    assert_eq!(psd.lines().next(), Some("normalized_size,percent_finer"));
    assert!(psd.lines().last().unwrap().ends_with(",100"), "{psd}");
    assert!(fs::read_to_string(out_dir.join("psd.svg")).unwrap().starts_with("<svg"));
    let pc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("point_count.json")).unwrap()).unwrap();
    assert_eq!(pc["total"], 4000);

    let out = run(&["eval", "--quiet", "--out-dir", o, "--mode", "pixel", "--pred", labels, "--gt", labels]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(rep["alite"]["f1"], 1.0);
    assert_eq!(rep["belite"]["fn"], 0);

    let out = run(&["eval", "--quiet", "--out-dir", o, "--pred", scene.pred.to_str().unwrap(), "--gt", scene.gt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("eval_report.json")).unwrap()).unwrap();
    // Every cutoff up to 0.35 keeps all detections and scores the same; the lowest wins.
    assert_eq!(rep["threshold"], 0.0, "{rep}");
    let best = rep["scores"]["macro_f1"].as_f64().unwrap();
    for point in rep["curve"].as_array().unwrap() {
        assert!(point[1].as_f64().unwrap() <= best);
    }
    assert_eq!(rep["curve"].as_array().unwrap().len(), 101);
    let table = fs::read_to_string(out_dir.join("eval_report.txt")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let out = run(&["eval", "--quiet", "--out-dir", o, "--cutoff", "1.5", "--pred", scene.pred.to_str().unwrap(), "--gt", scene.gt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["mesh", "--quiet", "--out-dir", o, "--labels", labels, "--spacing", "3", "--svg"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["mesh.node", "mesh.ele", "mesh.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let out = run(&["mesh", "--quiet", "--out-dir", o, "--labels", labels, "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mesh = clinker_core::mesh::TriMesh::from_json(&fs::read_to_string(out_dir.join("mesh.json")).unwrap()).unwrap();
    assert!((mesh.total_area() - 90_000.0).abs() < 1e-6);
}

#[test]
fn documented_config_parses() {
    let readme = fs::read_to_string(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let start = readme.find("```toml\n").expect("README has a TOML example") + 8;
    let len = readme[start..].find("```").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, &readme[start..start + len]).unwrap();
    // Parsing succeeds, so the failure is the missing label file.
    let out = run(&["--config", cfg.to_str().unwrap(), "mesh", "--labels", "/nonexistent.png"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
