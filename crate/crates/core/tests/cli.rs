//! The command-line tool: output formats, exit codes and error reporting.

mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::Value;

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn pipeline_outputs_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let files = run_cli_pipeline(dir);
    for f in ["index/manifest.json", "index/mean.bin", "index/components.bin", "index/variance.csv"] {
        assert!(files.iter().any(|p| p == Path::new(f)), "missing {f}");
    }

    let sidecar = read_json(&dir.join("ff.bin.json"));
    let d = sidecar["d"].as_u64().unwrap() as usize;
    assert_eq!(sidecar["subnet"], "ff");
    assert_eq!(fs::metadata(dir.join("ff.bin")).unwrap().len() as usize, 4 * d);

    let index = read_json(&dir.join("index/manifest.json"));
    assert_eq!(index["d"], 2000);
    assert_eq!(index["k"], 10);
    assert_eq!(index["n_train"], 4 * 24);
    assert_eq!(index["creation"]["subnet"], "full");

    let train = csv_rows(&dir.join("index/projections.csv"));
    assert_eq!(train[0][..3], ["sample_id", "label", "pc1"]);
    assert_eq!(train[0].len(), 12);
    assert_eq!(train.len(), 1 + 4 * 24);

    let cali = read_json(&dir.join("cali.json"));
    assert_eq!(cali["s"].as_array().unwrap().len(), 10);
    assert_eq!(cali["index_id"], index["index_id"]);
    assert_eq!(cali["n_artists"], 4);

    let test = csv_rows(&dir.join("test_cal.csv"));
    assert_eq!(test.len(), 1 + 4 * 5);
    assert!(test[1][0].contains("-test-diff-"));

    let cluster = csv_rows(&dir.join("cluster.csv"));
    assert_eq!(cluster[0], ["seed", "ari", "nmi"]);
    let firsts: Vec<&str> = cluster.iter().skip(1).map(|r| r[0].as_str()).collect();
    assert_eq!(firsts, ["0", "1", "2", "mean", "std"]);

    let retrieved = csv_rows(&dir.join("retrieve.csv"));
    assert_eq!(retrieved[0], ["query_id", "rank", "sample_id", "label", "distance"]);
    assert_eq!(retrieved.len(), 1 + 4 * 5 * 5);
    assert_eq!(retrieved[1][1], "1");

    let eval = read_json(&dir.join("eval.json"));
    assert_eq!(eval["per_query"].as_array().unwrap().len(), 20);
    assert_eq!(eval["k"], 5);

    let compare = read_json(&dir.join("compare.json"));
    assert_eq!(compare["curve"].as_array().unwrap().len(), 10);

    for task in ["retrieval", "cluster"] {
        let sel = read_json(&dir.join(format!("select_{task}.json")));
        assert_eq!(sel["task"], task);
        let best = sel["selection"]["best"].as_u64().unwrap();
        assert!((1..=10).contains(&best));
    }

    let viz = read_json(&dir.join("viz.json"));
    assert_eq!(viz["dims"], 3);
    let samples = viz["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4 * 24);
    assert!(samples.iter().all(|s| s["coords"].as_array().unwrap().len() == 3));
    assert!(samples[0]["genre"].as_str().unwrap().starts_with("genre"));

    let split = lora_style::dataset::load_manifest(dir.join("data/split.csv")).unwrap();
    split.check_split_counts(20, 3).unwrap();
}

#[test]
fn export_viz_two_dims_on_five_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("emb.csv");
    let mut text = String::from("sample_id,label,pc1,pc2,pc3\n");
    for i in 0..5 {
        text.push_str(&format!("s{i},a{},{i},{},0.5\n", i % 2, -i));
    }
    fs::write(&table, text).unwrap();
    let out = cli_ok(&["export-viz", "--embedding", table.to_str().unwrap(), "--dims", "2"]);
    let viz: Value = serde_json::from_slice(&out.stdout).unwrap();
    let samples = viz["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 5);
    assert!(samples.iter().all(|s| s["coords"].as_array().unwrap().len() == 2));
    assert_eq!(samples[3]["coords"], serde_json::json!([3.0, -3.0]));
    assert!(samples[0]["genre"].is_null());
}

#[test]
fn exit_codes_and_json_errors() {
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["--version"]).status.code(), Some(0));

    let out = cli(&["--json-errors", "fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = cli(&["--json-errors", "fit", "--manifest", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("nope.csv"));

    let bad = tmp.path().join("bad.safetensors");
    fs::write(&bad, b"\x04\x00\x00\x00\x00\x00\x00\x00{bad").unwrap();
    let out = cli(&["vectorize", bad.to_str().unwrap(), "--out", tmp.path().join("v").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn mismatched_subnet_and_calibration_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    cli_ok(&["synth", "--out", &p("data"), "--n-artists", "3", "--ambient-dim", "800", "--signal-dim", "4"]);
    let manifest = p("data/manifest.csv");
    cli_ok(&["fit", "--manifest", &manifest, "--num-pcs", "4", "--out", &p("a")]);
    cli_ok(&["fit", "--manifest", &manifest, "--num-pcs", "3", "--out", &p("b")]);
    cli_ok(&["calibrate", "--index", &p("a"), "--manifest", &manifest, "--out", &p("cali.json")]);

    let out = cli(&["project", "--index", &p("a"), "--manifest", &manifest, "--subnet", "ff", "--out", &p("x.csv")]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&[
        "project", "--index", &p("b"), "--manifest", &manifest, "--calibration", &p("cali.json"),
        "--out", &p("x.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration was fitted against index"));
}

#[test]
fn fit_clamps_components_to_sample_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    cli_ok(&["synth", "--out", &p("data"), "--n-artists", "2", "--ambient-dim", "800", "--signal-dim", "3"]);
    let out = cli_ok(&["fit", "--manifest", &p("data/manifest.csv"), "--num-pcs", "500", "--out", &p("idx")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("kept 47 components instead of 500"));
    assert_eq!(read_json(&dir.join("idx/manifest.json"))["k"], 47);
}
