//! CLI behavior: exit codes, artifact determinism, and the
//! labeling-inconsistency workflow (a mislabeled bus shows up as a
//! predicted-vs-true disagreement in the attention export).

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dasmon")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dasmon-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) {
    let out = Command::new(bin()).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dasmon {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_code(args: &[&str]) -> i32 {
    Command::new(bin())
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap_or(-1)
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = workdir("codes");
    // unknown flag: clap exits 2
    assert_eq!(run_code(&["simulate", "--bogus"]), 2);
    // validation error: unknown site
    assert_eq!(
        run_code(&[
            "simulate", "--site", "nowhere", "--hours", "0.05",
            "--out", dir.join("x").to_str().unwrap()
        ]),
        2
    );
    // validation error: malformed input file
    let junk = dir.join("junk.dasb");
    std::fs::write(&junk, b"not a scene at all").unwrap();
    assert_eq!(
        run_code(&[
            "preprocess", "--scene", junk.to_str().unwrap(),
            "--out", dir.join("y").to_str().unwrap()
        ]),
        2
    );
    // runtime error: missing input file
    assert_eq!(
        run_code(&[
            "preprocess", "--scene", dir.join("absent.dasb").to_str().unwrap(),
            "--out", dir.join("z").to_str().unwrap()
        ]),
        1
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = workdir("det");
    for tag in ["one", "two"] {
        run_ok(&[
            "simulate", "--site", "palacio", "--hours", "0.05", "--seed", "123",
            "--out", dir.join(tag).to_str().unwrap(),
        ]);
    }
    let a = std::fs::read(dir.join("one/scene.dasb")).unwrap();
    let b = std::fs::read(dir.join("two/scene.dasb")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(dir.join("one/annotations.jsonl")).unwrap();
    let b = std::fs::read(dir.join("two/annotations.jsonl")).unwrap();
    assert_eq!(a, b);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn manifest_lists_outputs_with_checksums() {
    let dir = workdir("manifest");
    run_ok(&[
        "simulate", "--site", "palacio", "--hours", "0.05", "--seed", "5",
        "--out", dir.join("sim").to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sim/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["tool"], "dasmon");
    assert_eq!(manifest["command"], "simulate");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.len() >= 3);
    for out in outputs {
        let sha = out["sha256"].as_str().unwrap();
        assert_eq!(sha.len(), 64);
        assert!(Path::new(out["path"].as_str().unwrap()).exists());
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn export_requires_an_attention_stage() {
    let dir = workdir("noattn");
    run_ok(&[
        "simulate", "--site", "palacio", "--hours", "0.05", "--seed", "2",
        "--out", dir.join("sim").to_str().unwrap(),
    ]);
    run_ok(&[
        "preprocess", "--scene", dir.join("sim/scene.dasb").to_str().unwrap(),
        "--out", dir.join("prep").to_str().unwrap(),
    ]);
    run_ok(&[
        "featurize",
        "--scene", dir.join("prep/processed.dasb").to_str().unwrap(),
        "--annotations", dir.join("sim/annotations.jsonl").to_str().unwrap(),
        "--deltas", "--spatial",
        "--out", dir.join("feat").to_str().unwrap(),
    ]);
    run_ok(&[
        "train", "--features", dir.join("feat").to_str().unwrap(),
        "--arch", "bi", "--hidden", "4", "--epochs", "1", "--patience", "1",
        "--folds", "2", "--out", dir.join("train").to_str().unwrap(),
    ]);
    let code = run_code(&[
        "export-attention",
        "--model", dir.join("train/model.mdl").to_str().unwrap(),
        "--segment", dir.join("feat/segments/seg000.fseq").to_str().unwrap(),
        "--out", dir.join("attn").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "plain bi model must refuse attention export");
    let _ = std::fs::remove_dir_all(&dir);
}

/// A bus annotated as a car: the trained model keeps predicting Bus,
/// and the export shows the disagreement frame by frame.
#[test]
fn mislabeled_bus_shows_up_in_export() {
    let dir = workdir("mislabel");
    run_ok(&[
        "simulate", "--site", "palacio", "--hours", "0.4", "--seed", "31",
        "--out", dir.join("sim").to_str().unwrap(),
    ]);
    run_ok(&[
        "preprocess", "--scene", dir.join("sim/scene.dasb").to_str().unwrap(),
        "--out", dir.join("prep").to_str().unwrap(),
    ]);
    run_ok(&[
        "featurize",
        "--scene", dir.join("prep/processed.dasb").to_str().unwrap(),
        "--annotations", dir.join("sim/annotations.jsonl").to_str().unwrap(),
        "--deltas", "--spatial", "--site", "palacio",
        "--out", dir.join("feat").to_str().unwrap(),
    ]);
    // train bi-TA on the correctly labeled data until it is competent
    run_ok(&[
        "train", "--features", dir.join("feat").to_str().unwrap(),
        "--arch", "bi-TA", "--hidden", "32", "--lr", "1e-3",
        "--epochs", "25", "--patience", "25", "--batch", "2",
        "--folds", "5", "--seed", "31", "--target-acc", "0.93",
        "--out", dir.join("train").to_str().unwrap(),
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("train/metrics.json")).unwrap())
            .unwrap();
    let acc = metrics["val_acc_pct"].as_f64().unwrap();
    assert!(acc >= 80.0, "model too weak for the scenario: {acc:.1}%");

    // flip the longest bus annotation to Car
    let ann_path = dir.join("sim/annotations.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(&ann_path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["class"] == "Bus" {
            let (s, e) = (v["start_s"].as_f64().unwrap(), v["end_s"].as_f64().unwrap());
            // only buses fully inside one 90 s block qualify
            let seg = (s / 90.0).floor();
            if seg == ((e / 90.0).floor()) {
                let len = e - s;
                if best.map(|(_, _, l)| len > l).unwrap_or(true) {
                    best = Some((i, s, len));
                }
            }
        }
    }
    let (line_idx, start_s, _) = best.expect("no in-segment bus event to flip");
    let mut flipped = lines.clone();
    flipped[line_idx] = flipped[line_idx].replace("\"Bus\"", "\"Car\"");
    let flipped_path = dir.join("sim/annotations_flipped.jsonl");
    std::fs::write(&flipped_path, flipped.join("\n") + "\n").unwrap();

    run_ok(&[
        "featurize",
        "--scene", dir.join("prep/processed.dasb").to_str().unwrap(),
        "--annotations", flipped_path.to_str().unwrap(),
        "--deltas", "--spatial", "--site", "palacio",
        "--out", dir.join("feat_flipped").to_str().unwrap(),
    ]);
    let seg_id = (start_s / 90.0).floor() as usize;
    let seg_path = dir
        .join("feat_flipped/segments")
        .join(format!("seg{seg_id:03}.fseq"));
    run_ok(&[
        "export-attention",
        "--model", dir.join("train/model.mdl").to_str().unwrap(),
        "--segment", seg_path.to_str().unwrap(),
        "--out", dir.join("attn").to_str().unwrap(),
    ]);

    // the flipped event's frames should read predicted=Bus, true=Car
    let csv = std::fs::read_to_string(dir.join("attn/probs_labels.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 177);
    let event = serde_json::from_str::<serde_json::Value>(&lines[line_idx]).unwrap();
    let (ev_s, ev_e) = (
        event["start_s"].as_f64().unwrap(),
        event["end_s"].as_f64().unwrap(),
    );
    let base = seg_id as f64 * 90.0;
    let mut disagreements = 0usize;
    let mut event_frames = 0usize;
    for (t, row) in rows.iter().enumerate() {
        // a frame sits inside the event when its whole window does
        let w_start = base + t as f64 * 0.5;
        let w_end = w_start + 2.0;
        if w_start >= ev_s && w_end <= ev_e {
            event_frames += 1;
            let cells: Vec<&str> = row.split(',').collect();
            if cells[3] == "Bus" && cells[4] == "Car" {
                disagreements += 1;
            }
        }
    }
    assert!(event_frames >= 5, "flipped event spans {event_frames} frames");
    assert!(
        disagreements * 2 > event_frames,
        "only {disagreements}/{event_frames} frames show the Bus-vs-Car disagreement"
    );
    // temporal attention export for the segment exists and is row-stochastic
    let ta = std::fs::read_to_string(dir.join("attn/ta_stage1.csv")).unwrap();
    let ta_rows: Vec<&str> = ta.lines().collect();
    assert_eq!(ta_rows.len(), 177);
    for row in ta_rows {
        let sum: f64 = row.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let _ = std::fs::remove_dir_all(&dir);
}
