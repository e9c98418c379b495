//! End-to-end tests driving the built binary: determinism contracts, exit
//! codes and output shapes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psn-game"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn tiny_dataset(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("data");
    let st = run(&[
        "gen-data",
        "--agents",
        "3",
        "--count",
        "3",
        "--seed",
        "7",
        "--rollout-steps",
        "25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "gen-data failed: {}", String::from_utf8_lossy(&st.stderr));
    out.join("dataset.json")
}

#[test]
fn gen_data_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let st = run(&[
            "gen-data",
            "--agents",
            "3",
            "--count",
            "2",
            "--seed",
            "9",
            "--rollout-steps",
            "25",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    assert_eq!(read(&out_a.join("dataset.json")), read(&out_b.join("dataset.json")));

    // Manifests match except the wall-time field.
    let norm = |p: &Path| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(&read(p)).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        // Output paths differ by directory; normalize them away.
        v.as_object_mut().unwrap().remove("outputs");
        v
    };
    assert_eq!(norm(&out_a.join("manifest.json")), norm(&out_b.join("manifest.json")));
}

#[test]
fn missing_config_file_is_exit_2_with_path() {
    let st = run(&["gen-data", "--config", "/nonexistent/config.json"]);
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("/nonexistent/config.json"));
}

#[test]
fn train_smoke_and_loss_curve_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    let out = tmp.path().join("train");
    let st = run(&[
        "train",
        "psn",
        "--task",
        "planning",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let curve = read(&out.join("loss_curve.csv"));
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 epochs: {curve}");
    assert!(lines[0].starts_with("epoch,total,binary,sparsity,task"));
    assert!(out.join("psn.ckpt").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn train_rejects_corrupt_dataset_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_dataset(tmp.path());
    // Truncate an observation window so the dataset no longer validates.
    let text = read(&data);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let frames = v["samples"][0]["observation"]["frames"].as_array_mut().unwrap();
    frames.pop();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();

    let st = run(&[
        "train",
        "gin",
        "--data",
        bad.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        tmp.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2), "{}", String::from_utf8_lossy(&st.stderr));
    let msg = String::from_utf8_lossy(&st.stderr).to_lowercase();
    assert!(msg.contains("match") || msg.contains("shape"), "{msg}");
}

#[test]
fn eval_summary_has_one_row_per_method_and_all_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let st = run(&[
        "eval",
        "--task",
        "prediction",
        "--agents",
        "4",
        "--methods",
        "all,knn:1,distance:1.0",
        "--count",
        "2",
        "--seed",
        "3",
        "--max-steps",
        "8",
        "--resamples",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let summary = read(&out.join("summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 methods: {summary}");
    assert!(lines[0].starts_with("method,ade_mean,ade_se,fde_mean,fde_se,consistency_mean"));

    // The full-game baseline never changes its selection.
    let all_row = lines.iter().find(|l| l.starts_with("all,")).unwrap();
    let cols: Vec<&str> = lines[0].split(',').collect();
    let vals: Vec<&str> = all_row.split(',').collect();
    let idx = cols.iter().position(|c| *c == "consistency_mean").unwrap();
    assert_eq!(vals[idx].parse::<f64>().unwrap(), 1.0);

    let runs = read(&out.join("runs.csv"));
    assert_eq!(runs.lines().count(), 1 + 3 * 2);
}

#[test]
fn eval_psn_method_without_checkpoint_is_exit_2() {
    let st = run(&[
        "eval",
        "--task",
        "prediction",
        "--agents",
        "4",
        "--methods",
        "psn-rank:1",
        "--count",
        "1",
    ]);
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("psn"));
}

#[test]
fn eval_unknown_method_is_exit_2() {
    let st = run(&["eval", "--methods", "sorcery:3", "--count", "1"]);
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn eval_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, workers) in [("w1", "1"), ("w4", "4")] {
        let out = tmp.path().join(name);
        let st = run(&[
            "eval",
            "--task",
            "planning",
            "--agents",
            "4",
            "--methods",
            "all,bf:1",
            "--count",
            "3",
            "--seed",
            "11",
            "--max-steps",
            "10",
            "--resamples",
            "20",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        outputs.push((read(&out.join("runs.csv")), read(&out.join("summary.csv"))));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sim_plot_pipeline_produces_svg_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let st = run(&[
        "sim",
        "--task",
        "planning",
        "--agents",
        "4",
        "--seed",
        "5",
        "--method",
        "all",
        "--max-steps",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let trace_path = out.join("trace.jsonl");
    assert!(trace_path.exists());

    let svg_path = out.join("trace.svg");
    let st = run(&[
        "plot",
        "--trace",
        trace_path.to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let svg = read(&svg_path);
    assert!(!svg.is_empty());
    assert_eq!(svg.matches("<polyline").count(), 4);
    // Full-game baseline: every non-ego marker carries the selected color.
    let selected = svg.matches("fill=\"#d62728\"").count();
    let steps = read(&trace_path).lines().count() - 1;
    assert_eq!(selected, steps * 3);
}

#[test]
fn plot_rejects_empty_or_missing_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let st = run(&["plot", "--trace", empty.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));

    let st = run(&["plot", "--trace", tmp.path().join("nope.jsonl").to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn rerunning_from_a_manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let st = run(&[
        "sim",
        "--task",
        "planning",
        "--agents",
        "3",
        "--seed",
        "21",
        "--method",
        "knn:1",
        "--max-steps",
        "8",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));

    // Feed the manifest back as the config.
    let out_b = tmp.path().join("b");
    let st = run(&[
        "sim",
        "--config",
        out_a.join("manifest.json").to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert_eq!(read(&out_a.join("trace.jsonl")), read(&out_b.join("trace.jsonl")));
    assert_eq!(read(&out_a.join("scenario.json")), read(&out_b.join("scenario.json")));
}

#[test]
fn sim_accepts_scenario_files_and_validates_them() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let st = run(&[
        "sim", "--agents", "3", "--seed", "2", "--max-steps", "6",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));

    // Re-run against the emitted scenario file.
    let out2 = tmp.path().join("sim2");
    let st = run(&[
        "sim",
        "--scenario",
        out.join("scenario.json").to_str().unwrap(),
        "--max-steps",
        "6",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert_eq!(read(&out.join("trace.jsonl")), read(&out2.join("trace.jsonl")));

    // A corrupt scenario is a validation failure.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"n_agents\": 2}").unwrap();
    let st = run(&["sim", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));
}
