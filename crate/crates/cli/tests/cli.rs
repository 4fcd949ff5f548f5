use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "episodes=20",
    "--set",
    "eval_interval=10",
    "--set",
    "val_episodes=10",
    "--set",
    "eval_episodes=20",
    "--set",
    "hidden=8",
    "--set",
    "data_classes=30",
    "--set",
    "train_classes=12",
    "--set",
    "val_classes=9",
    "--set",
    "per_class=25",
];

fn anyway(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anyway"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ANYWAY_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = anyway(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn gradcheck_passes_with_default_dims() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--nets", "10", "--out", "gc"], dir.path());
    assert!(!stdout.contains("FAIL"));
    let report = read(dir.path().join("gc/report.csv"));
    assert!(report.starts_with("check,block,max_rel_error,passed\n"));
    assert!(report.contains("anyway_scatter,anyway_head.w,"));
    assert!(report.contains("semantic_outer,semantic_head.w,"));
    assert!(report.contains("proto_distance,encoder.w0,"));
    assert!(!report.contains(",false"));
}

#[test]
fn invalid_config_exits_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = anyway(&["train", "--set", "width=4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`width`"), "{err}");

    fs::write(dir.path().join("bad.cfg"), "shots = 5\nbogus = 1\n").unwrap();
    let out = anyway(&["train", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn zero_episodes_writes_initial_checkpoint_and_empty_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_small(&["train", "--out", "t"]);
    args.extend(["--set", "episodes=0"]);
    ok(&args, dir.path());
    let curve = read(dir.path().join("t/curve.csv"));
    assert_eq!(curve, "step,train_loss,val_acc_3,val_acc_5,val_acc_7,val_acc_9,val_acc_sum\n");
    assert_eq!(
        fs::read(dir.path().join("t/best.ckpt")).unwrap(),
        fs::read(dir.path().join("t/final.ckpt")).unwrap()
    );
}

#[test]
fn training_is_byte_deterministic_and_manifest_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_small(&["train", "--out", "a"]);
    args.extend(["--set", "cardinality_pool=3,5,7"]);
    ok(&args, dir.path());
    let pos = args.iter().position(|a| *a == "a").unwrap();
    args[pos] = "b";
    ok(&args, dir.path());
    for f in ["best.ckpt", "final.ckpt", "curve.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("a/manifest.json"))).unwrap();
    let ns: Vec<u64> = manifest["validation"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["N"].as_u64().unwrap())
        .collect();
    assert_eq!(ns, [3, 5, 7]);
    let sum: f64 = manifest["validation"].as_array().unwrap().iter().map(|v| v["acc"].as_f64().unwrap()).sum();
    assert!((sum - manifest["validation_sum"].as_f64().unwrap()).abs() < 1e-12);
    assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["train", "--out", "first"]), dir.path());
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("first/manifest.json"))).unwrap();
    fs::write(dir.path().join("echo.cfg"), manifest["config"].as_str().unwrap()).unwrap();
    ok(&["train", "--config", "echo.cfg", "--out", "second"], dir.path());
    assert_eq!(
        fs::read(dir.path().join("first/best.ckpt")).unwrap(),
        fs::read(dir.path().join("second/best.ckpt")).unwrap()
    );
}

#[test]
fn eval_and_sweep_reports_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["train", "--out", "t"]), dir.path());
    let mut eval = with_small(&["eval", "--checkpoint", "t/best.ckpt", "--out", "e"]);
    eval.extend(["--set", "j_repeats=1,6", "--set", "eval_ns=3,5"]);
    ok(&eval, dir.path());
    let report = read(dir.path().join("e/report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "dataset,N,K,method,J_repeats,episodes,acc_mean,acc_std");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("synth,3,5,original,1,20,"));
    assert!(lines[2].starts_with("synth,3,5,original,6,20,"));

    ok(&eval, dir.path());
    assert_eq!(read(dir.path().join("e/report.csv")), report, "eval report is not deterministic");

    let mut sweep = with_small(&["sweep-ensemble", "--checkpoint", "t/best.ckpt", "--out", "s"]);
    sweep.extend(["--set", "eval_ns=9"]);
    ok(&sweep, dir.path());
    let rows: Vec<Vec<String>> = read(dir.path().join("s/report.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 6 * 3);
    let j1: Vec<&Vec<String>> = rows.iter().filter(|r| r[4] == "1").collect();
    assert_eq!(j1.len(), 3);
    assert!(j1.iter().all(|r| r[6] == j1[0][6]), "single-member ensembles disagree");
}

#[test]
fn eval_rejects_cardinality_above_head_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = with_small(&["train", "--out", "t"]);
    train.extend(["--set", "mode=fixed", "--set", "fixed_n=3", "--set", "eval_ns=3"]);
    ok(&train, dir.path());
    let mut eval = with_small(&["eval", "--checkpoint", "t/best.ckpt", "--out", "e"]);
    eval.extend(["--set", "mode=fixed", "--set", "fixed_n=3", "--set", "eval_ns=5"]);
    let out = anyway(&eval, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval_ns"));
}

#[test]
fn identical_compare_configs_give_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare", "--seeds", "2", "--out", "c"];
    args.extend(SMALL.iter().copied());
    args.extend(["--set", "eval_ns=3,5"]);
    ok(&args, dir.path());
    let report = read(dir.path().join("c/report.csv"));
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N,seeds,acc_a_mean,acc_a_std,acc_b_mean,acc_b_std,delta_mean,delta_std,pooled_std"
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[6].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[7].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn compare_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = anyway(&["compare", "--set-b", "data_seed=3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data_seed"));
}

#[test]
fn ablation_with_one_width_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate-o", "--widths", "10", "--seeds", "1"];
    args.extend(SMALL.iter().copied());
    args.extend(["--set", "eval_ns=3,5"]);
    let out = Command::new(env!("CARGO_BIN_EXE_anyway"))
        .args(&args)
        .current_dir(dir.path())
        .env("ANYWAY_OUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path().join("elsewhere/ablate-o/report.csv"));
    assert_eq!(report.lines().next().unwrap(), "width,seed,N,K,episodes,acc_mean,acc_std");
    assert_eq!(report.lines().count(), 1 + 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("elsewhere/ablate-o/manifest.json"))).unwrap();
    assert_eq!(manifest["training"][0]["width"], 10);
    assert!(manifest["training"][0]["train_seconds"].is_number());
}

#[test]
fn generated_features_train_from_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["gen-data", "--output", "data/blobs.awm"]), dir.path());
    let mut args = with_small(&["train", "--out", "f"]);
    args.extend(["--set", "dataset=data/blobs.awm"]);
    ok(&args, dir.path());
    let mut synth = with_small(&["train", "--out", "s"]);
    synth.extend(["--set", "dataset=synth"]);
    ok(&synth, dir.path());
    assert_eq!(
        fs::read(dir.path().join("f/best.ckpt")).unwrap(),
        fs::read(dir.path().join("s/best.ckpt")).unwrap()
    );
}

#[test]
fn protonet_reports_prototype_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = with_small(&["train", "--out", "p"]);
    train.extend(["--set", "backend=protonet", "--set", "semantic=true"]);
    ok(&train, dir.path());
    let mut eval = with_small(&["eval", "--checkpoint", "p/best.ckpt", "--out", "e"]);
    eval.extend(["--set", "backend=protonet", "--set", "eval_ns=3,9"]);
    ok(&eval, dir.path());
    let report = read(dir.path().join("e/report.csv"));
    assert!(report.contains("synth,9,5,prototype,1,20,"));
    let mut wrong = with_small(&["eval", "--checkpoint", "p/best.ckpt", "--out", "w"]);
    wrong.extend(["--set", "backend=maml"]);
    assert_eq!(anyway(&wrong, dir.path()).status.code(), Some(2));
}
