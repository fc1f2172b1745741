use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use conekp::data::dataset::{load_split, read_manifest};
use conekp::data::split::Split;
use conekp_cli::commands::eval::{predictions_jsonl, PredictionLine};

fn conekp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conekp"))
        .args(args)
        .env_remove("KPR_PORT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = conekp(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["synth", "--count", "100", "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["synth", "--count", "100", "--seed", "7", "--out", b.to_str().unwrap()]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 100 * 2 + 2);
    assert_eq!(ta, tb);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&[
        "synth",
        "--count",
        "24",
        "--seed",
        "3",
        "--scenes",
        "2",
        "--out",
        a.to_str().unwrap(),
    ]);
    let cfg = a.join("config.toml");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(tree(&a), tree(&b));
    assert!(a.join("scenes/scene_0001_left.png").exists());

    // Flags override file values.
    let c = t.path().join("c");
    ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--count",
        "12",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(read_manifest(&c).unwrap().items.len(), 12);
    assert!(fs::read_to_string(c.join("config.toml"))
        .unwrap()
        .contains("count = 12"));
}

#[test]
fn eval_on_ground_truth_gives_perfect_map() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--count", "40", "--seed", "1", "--out", data.to_str().unwrap()]);
    let m = read_manifest(&data).unwrap();
    let lines: Vec<PredictionLine> = load_split(&data, &m, Split::Test, 80)
        .unwrap()
        .into_iter()
        .map(|s| PredictionLine {
            id: s.id,
            keypoints: s.keypoints.to_vec(),
            confidences: None,
        })
        .collect();
    let preds = t.path().join("gt.jsonl");
    fs::write(&preds, predictions_jsonl(&lines)).unwrap();
    let out_dir = t.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        stdout.contains("| Predictions | 0.0000 | 0.0000 | 0.0000 | 0.0000 | 1.00 |"),
        "{stdout}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["Predictions"]["map_at_3px"], 1.0);
    assert!(out_dir.join("config.toml").exists());
}

#[test]
fn train_then_eval_writes_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let run = t.path().join("run");
    ok(&["synth", "--count", "30", "--seed", "2", "--out", data.to_str().unwrap()]);
    ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--width",
        "2",
        "--batch-size",
        "8",
    ]);
    for f in ["model.ckpt", "loss_log.jsonl", "epochs.csv", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("model.ckpt");
    let stdout = ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(stdout.contains("| UNet |"), "{stdout}");
    let stdout = ok(&[
        "bench",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--batch",
        "2",
        "--iterations",
        "2",
    ]);
    assert!(stdout.contains("ms/frame"), "{stdout}");
}

#[test]
fn localize_from_keypoints_file() {
    let t = tempfile::tempdir().unwrap();
    // Keypoints 6 px apart horizontally: depth 500 * 0.12 / 6 = 10 m.
    let left = [
        [300.0, 170.0],
        [310.0, 170.0],
        [298.0, 180.0],
        [312.0, 180.0],
        [295.0, 195.0],
        [315.0, 195.0],
    ];
    let right: Vec<[f64; 2]> = left.iter().map(|p| [p[0] - 6.0, p[1]]).collect();
    let kp = t.path().join("kp.json");
    fs::write(&kp, serde_json::json!({ "left": left, "right": right }).to_string()).unwrap();
    let out = ok(&["localize", "--keypoints", kp.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["depth"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    assert!((v["position"][0].as_f64().unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn simulate_writes_confusion_and_covariance() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("sim");
    let stdout = ok(&[
        "simulate",
        "--frames",
        "6",
        "--noise",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("diagonal 1.000"), "{stdout}");
    for f in [
        "confusion.md",
        "confusion.json",
        "covariance.csv",
        "records.jsonl",
        "summary.json",
        "config.toml",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn bad_input_exits_nonzero_with_a_message() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("nope");
    for args in [
        vec!["synth", "--bogus"],
        vec!["eval", "--data", missing.to_str().unwrap(), "--predictions", "x.jsonl"],
        vec![
            "train",
            "--data",
            missing.to_str().unwrap(),
            "--out",
            missing.to_str().unwrap(),
        ],
        vec!["bench", "--iterations", "0"],
        vec!["serve", "--data", missing.to_str().unwrap()],
        vec!["frobnicate"],
    ] {
        let out = conekp(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn port_in_use_is_an_error() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--count", "12", "--out", data.to_str().unwrap()]);
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_conekp"))
        .args(["serve", "--data", data.to_str().unwrap()])
        .env("KPR_PORT", &port)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("binding"));
}
