use std::path::Path;
use std::process::{Command, Output};

use ptgc_core::predictor::ModelParams;

fn ptgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptgc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_config_keys_with_defaults() {
    let out = ptgc(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for key in ["sim.dt = 0.05", "tracker.k = 1.0", "pred.train.lr = 0.001", "experiment.repeats = 3", "bev.grid = 256"] {
        assert!(text.contains(key), "missing '{key}' in help");
    }
}

#[test]
fn usage_config_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("x.csv");
    assert_eq!(code(&ptgc(&["run", "--mode", "fast", "--out", p(&log)])), 2);
    assert_eq!(code(&ptgc(&["frobnicate"])), 2);

    let out = ptgc(&["--set", "tracker.bogus=1", "run", "--mode", "dc", "--out", p(&log)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"sim": {"dt": -1}}"#).unwrap();
    assert_eq!(code(&ptgc(&["--config", p(&bad), "run", "--mode", "dc", "--out", p(&log)])), 3);

    let missing = dir.path().join("nope.bin");
    assert_eq!(code(&ptgc(&["eval", "--data", p(&missing)])), 4);
    assert_eq!(code(&ptgc(&["run", "--mode", "ptgc", "--predictor", "neural", "--out", p(&log)])), 3);
}

#[test]
fn runs_are_byte_identical_with_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for path in [&a, &b] {
        let out = ptgc(&["--workers", "1", "--seed", "4", "run", "--mode", "dc", "--delay", "0", "--out", p(path)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "tick");
    for (i, row) in lines.enumerate() {
        assert_eq!(row.split(',').next().unwrap(), i.to_string());
    }
}

#[test]
fn data_train_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    let again = dir.path().join("d2.bin");

    let out = ptgc(&["gen-data", "--episodes", "0", "--out", p(&data)]);
    assert_ne!(code(&out), 0);
    assert!(!data.exists());

    let out = ptgc(&["gen-data", "--episodes", "1", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("records: "), "{text}");
    assert!(text.contains("split (train/val/test): "));
    assert_eq!(code(&ptgc(&["gen-data", "--episodes", "1", "--out", p(&again)])), 0);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());

    let out = ptgc(&["eval", "--data", p(&data)]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    let ctra_rows: Vec<&str> = table.lines().filter(|l| l.starts_with("CTRA")).collect();
    assert_eq!(ctra_rows.len(), 3, "{table}");

    // a motion-only model carries no context encoder
    let model = dir.path().join("m.bin");
    let out = ptgc(&["--set", "pred.train.epochs=1", "train", "--data", p(&data), "--model-out", p(&model), "--mode", "m"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = ModelParams::load(std::fs::File::open(&model).unwrap()).unwrap();
    assert!(loaded.tensor_names().iter().all(|n| !n.starts_with("context")));
    let curve = std::fs::read_to_string(dir.path().join("m.bin.curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_loss,val_loss,val_ade");

    let out = ptgc(&["eval", "--data", p(&data), "--model", p(&model), "--out", p(&dir.path().join("t.csv"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("M-model")).count(), 3);

    assert_eq!(code(&ptgc(&["train", "--data", p(&data), "--model-out", p(&model), "--mode", "x"])), 2);
    // windows of a different length do not fit this dataset
    let out = ptgc(&["--set", "pred.model.horizon=10", "eval", "--data", p(&data)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn small_experiment_writes_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = ptgc(&[
        "--set",
        "experiment.delays_ms=[0,400]",
        "--set",
        "experiment.repeats=1",
        "experiment",
        "--predictor",
        "ctra",
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        results.lines().next().unwrap(),
        "seed,mode,delay_ms,repeat,valid,reason,tct_s,d2c_m2,se,mean_speed_mps"
    );
    assert_eq!(results.lines().count(), 1 + 3);
    let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "delay_ms,p_d2c,p_tct,p_se,p_ove");
    assert!(scores.lines().nth(1).unwrap().starts_with("400,"));
    assert!(dir.path().join("summary.csv").exists());
}
