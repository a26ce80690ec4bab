use std::path::Path;
use std::process::{Command, Output};

fn sknn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sknn"))
        .current_dir(dir)
        .env_remove("SKNN_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn gen_data_writes_readable_idx_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &[
            "gen-data",
            "--classes",
            "3",
            "--n",
            "4",
            "--test-n",
            "2",
            "--shape",
            "8x8x2",
            "--out",
            "d",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = dir.path().join("d");
    let train =
        sknn::data::load_idx(d.join("train-images.idx"), d.join("train-labels.idx")).unwrap();
    let test = sknn::data::load_idx(d.join("test-images.idx"), d.join("test-labels.idx")).unwrap();
    assert_eq!(train.len(), 12);
    assert_eq!(test.len(), 6);
    assert_eq!(train.image_shape(), Some([8, 8, 2]));
    assert_eq!(train.classes(), 3);
}

#[test]
fn gen_data_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(dir.path(), &["gen-data", "--n", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--n"));
}

#[test]
fn every_run_prints_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(dir.path(), &["--seed", "9", "gradcheck", "--layer", "fc"]);
    assert_eq!(code(&o), 0);
    let line = stderr(&o)
        .lines()
        .find(|l| l.starts_with("config: "))
        .unwrap()
        .to_string();
    let cfg: serde_json::Value = serde_json::from_str(&line["config: ".len()..]).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["command"]["gradcheck"]["layer"], "fc");
    assert!(cfg["threads"].as_u64().unwrap() >= 1);
}

#[test]
fn threads_env_caps_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sknn"))
        .current_dir(dir.path())
        .env("SKNN_THREADS", "2")
        .args(["--threads", "8", "gradcheck", "--layer", "fc"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("\"threads\":2"), "{}", stderr(&o));
}

#[test]
fn train_reports_fc1_count_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &[
            "train",
            "--image-shape",
            "32x32x3",
            "--classes",
            "2",
            "--n",
            "2",
            "--epochs",
            "1",
            "--sketch",
            "fc1:k=5,l=2",
            "--out",
            "m.sknn",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let fc1 = out.lines().find(|l| l.contains("sk-fc")).unwrap();
    assert!(fc1.contains(" 7300 "), "{fc1}");
    assert!(out.contains("final test top-1 error"));
    assert!(dir.path().join("m.sknn").exists());
    let history = std::fs::read_to_string(dir.path().join("m.history.jsonl")).unwrap();
    let records = sknn::train::read_history(&history).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].test_top1.is_some());
}

#[test]
fn train_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let o = sknn(
            dir.path(),
            &[
                "--seed",
                "4",
                "train",
                "--image-shape",
                "8x8x1",
                "--classes",
                "2",
                "--n",
                "6",
                "--epochs",
                "2",
                "--sketch",
                "conv2:k=2,l=1",
                "--out",
                name,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("a.sknn"), run("b.sknn"));
    let ha = std::fs::read(dir.path().join("a.history.jsonl")).unwrap();
    let hb = std::fs::read(dir.path().join("b.history.jsonl")).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn bad_sketch_spec_is_a_usage_error_naming_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &["train", "--image-shape", "8x8x1", "--sketch", "fc1:k=2,q=3"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`q=3`"), "{}", stderr(&o));
}

#[test]
fn image_shape_must_match_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &[
            "gen-data",
            "--classes",
            "2",
            "--n",
            "1",
            "--shape",
            "8x8x1",
            "--out",
            "d",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = sknn(
        dir.path(),
        &[
            "train",
            "--data",
            "d",
            "--image-shape",
            "16x16x1",
            "--epochs",
            "1",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("16x16x1"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sknn(dir.path(), &["verify", "--suite", "nope"])), 2);
    assert_eq!(code(&sknn(dir.path(), &["frobnicate"])), 2);
    assert_eq!(
        code(&sknn(
            dir.path(),
            &["gradcheck", "--layer", "fc", "--dims", "8"]
        )),
        2
    );
    let o = Command::new(env!("CARGO_BIN_EXE_sknn"))
        .current_dir(dir.path())
        .env("SKNN_THREADS", "many")
        .args(["gradcheck", "--layer", "fc"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_at_default_step_and_fails_at_unit_step() {
    let dir = tempfile::tempdir().unwrap();
    for layer in ["fc", "sk-fc", "conv", "sk-conv", "maxpool"] {
        let o = sknn(
            dir.path(),
            &["gradcheck", "--layer", layer, "--k", "2", "--ell", "2"],
        );
        assert_eq!(code(&o), 0, "{layer}: {}", stdout(&o));
    }
    let o = sknn(
        dir.path(),
        &["gradcheck", "--layer", "sk-fc", "--eps", "1.0"],
    );
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn gradcheck_json_lists_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &[
            "--json",
            "gradcheck",
            "--layer",
            "sk-conv",
            "--dims",
            "6x6x2:3x3:2",
            "--stride",
            "3",
            "--ell",
            "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["S1[1]", "S1[2]", "S1[3]", "S2[1]", "S2[2]", "S2[3]", "bias", "input"]
    );
    assert_eq!(v["pass"], true);
}

#[test]
fn verify_conv_equiv_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &["verify", "--suite", "conv-equiv", "--out", "v.json"],
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("pass"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["suites"][0]["suite"], "conv-equiv");
    let first = v["suites"][0]["rows"][0]["check"].as_str().unwrap();
    let geometries: usize = first.split_whitespace().next().unwrap().parse().unwrap();
    assert!(geometries >= 50, "{first}");
}

#[test]
fn report_flags_expanding_sketches() {
    let dir = tempfile::tempdir().unwrap();
    let o = sknn(
        dir.path(),
        &[
            "train",
            "--image-shape",
            "8x8x1",
            "--classes",
            "2",
            "--n",
            "1",
            "--epochs",
            "1",
            "--sketch",
            "fc1:k=30,l=9",
            "--lr",
            "0",
            "--out",
            "big.sknn",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = sknn(
        dir.path(),
        &["report", "--model", "big.sknn", "--dense-equivalent"],
    );
    assert_eq!(code(&o), 0);
    let line = stdout(&o)
        .lines()
        .find(|l| l.contains("sk-fc"))
        .unwrap()
        .to_string();
    assert!(line.contains("expansion"), "{line}");
    assert!(
        line.contains(" 75600 ") && line.contains(" 7500 "),
        "{line}"
    );

    let o = sknn(dir.path(), &["--json", "report", "--model", "big.sknn"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rate = v["compression_rate"].as_f64().unwrap();
    assert!(rate > 1.0);
    assert_eq!(v["layers"][6]["expansion"], true);
}

#[test]
fn report_on_a_corrupt_file_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.sknn"), b"NOPE").unwrap();
    let o = sknn(dir.path(), &["report", "--model", "bad.sknn"]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("SKNN") || stderr(&o).contains("checkpoint"),
        "{}",
        stderr(&o)
    );
}
