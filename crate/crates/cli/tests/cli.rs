use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptseg::data::load_dataset;
use adaptseg::tensor::{tensor_read, tensor_write};
use adaptseg::{LabelMap, Tensor32};

const BIN: &str = env!("CARGO_BIN_EXE_adaptseg");
const SMALL_DATA: [&str; 6] = ["--source-count", "12", "--target-train-count", "10", "--target-test-count", "6"];

fn run_in(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args).env_remove("ADAPT_PARSE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args, &[]);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn with_data() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen-data", "--seed", "7"];
    args.extend(SMALL_DATA);
    ok(dir.path(), &args);
    dir
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--seed", "7", "--k-c", "5", "--checkpoint-interval", "5", "--eval-interval", "5"];
    args.extend(extra);
    ok(dir, &args)
}

/// Relative path and contents of every file under `dir`, sorted.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn gen_data_splits_withholds_labels_and_is_reproducible() {
    let a = with_data();
    for (split, n, labeled) in
        [("data/source", 12, true), ("data/target/train", 10, false), ("data/target/test", 6, true)]
    {
        let manifest = fs::read_to_string(a.path().join(split).join("manifest.tsv")).unwrap();
        assert_eq!(manifest.lines().count(), n, "{split}");
        assert!(manifest.lines().all(|l| l.split('\t').nth(2).unwrap().is_empty() != labeled), "{split}");
    }
    assert!(!a.path().join("data/target/train/labels").read_dir().unwrap().any(|_| true));

    let b = with_data();
    assert_eq!(tree(&a.path().join("data")), tree(&b.path().join("data")));

    let mut args = vec!["gen-data", "--seed", "7"];
    args.extend(SMALL_DATA);
    let refused = run_in(a.path(), &args, &[]);
    assert_eq!(code(&refused), 1);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    args.push("--force");
    ok(a.path(), &args);
    assert_eq!(tree(&a.path().join("data")), tree(&b.path().join("data")));

    fs::write(a.path().join("data/source/notes.txt"), "mine").unwrap();
    assert_eq!(code(&run_in(a.path(), &args, &[])), 1);
    assert!(a.path().join("data/source/notes.txt").exists());
}

#[test]
fn train_writes_audit_metrics_and_checkpoints() {
    let d = with_data();
    train(d.path(), &["--iterations", "20"]);
    let run = d.path().join("runs/adapt");
    let audit = fs::read_to_string(run.join("audit.log")).unwrap();
    let count = |s: &str| audit.lines().filter(|l| l.contains(&format!(" step={s} "))).count();
    let counts: Vec<usize> = ["P1", "EQ2", "EQ1", "EQ4", "EQ3", "P2"].iter().map(|s| count(s)).collect();
    assert_eq!(counts, [20, 20, 20, 4, 4, 20]);
    let t5: Vec<&str> = audit.lines().filter(|l| l.starts_with("t=5 ")).map(|l| l.split(' ').nth(1).unwrap()).collect();
    assert_eq!(t5, ["step=P1", "step=EQ2", "step=EQ1", "step=EQ4", "step=EQ3", "step=P2"]);

    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "iter,pixel_accuracy,foreground_accuracy,avg_precision,avg_recall,avg_f1");
    let iters: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["5", "10", "15", "20"]);

    let ckpts: Vec<String> = tree(&run.join("checkpoints")).into_iter().map(|(p, _)| p.display().to_string()).collect();
    assert_eq!(ckpts, ["iter_000005.ckpt", "iter_000010.ckpt", "iter_000015.ckpt", "iter_000020.ckpt"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["history"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config"]["train"]["k_c"], "5");

    let refused = run_in(d.path(), &["train", "--iterations", "2"], &[]);
    assert_eq!(code(&refused), 1);
}

#[test]
fn source_only_runs_only_the_supervised_step() {
    let d = with_data();
    train(d.path(), &["--iterations", "7", "--mode", "source_only", "--run-dir", "runs/so", "--eval-interval", "3"]);
    let audit = fs::read_to_string(d.path().join("runs/so/audit.log")).unwrap();
    assert_eq!(audit.lines().count(), 7);
    assert!(audit.lines().all(|l| l.contains(" step=P1 params=E,L ")));
    let metrics = fs::read_to_string(d.path().join("runs/so/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count() - 1, 7 / 3);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let d = with_data();
    train(d.path(), &["--iterations", "10", "--run-dir", "a"]);
    train(d.path(), &["--iterations", "10", "--run-dir", "b"]);
    let files = ["checkpoints/iter_000010.ckpt", "checkpoints/iter_000005.ckpt", "metrics.csv", "audit.log"];
    for f in files {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }

    train(d.path(), &["--iterations", "5", "--run-dir", "c"]);
    train(d.path(), &["--iterations", "10", "--run-dir", "c", "--resume", "c/checkpoints/iter_000005.ckpt"]);
    // Resuming a finished run from an earlier checkpoint truncates its logs.
    train(d.path(), &["--iterations", "10", "--run-dir", "b", "--resume", "b/checkpoints/iter_000005.ckpt"]);
    for run in ["b", "c"] {
        for f in files {
            assert_eq!(
                fs::read(d.path().join("a").join(f)).unwrap(),
                fs::read(d.path().join(run).join(f)).unwrap(),
                "{run}/{f}"
            );
        }
    }

    let changed = run_in(
        d.path(),
        &[
            "train",
            "--seed",
            "7",
            "--k-c",
            "5",
            "--lr-main",
            "0.5",
            "--run-dir",
            "c",
            "--resume",
            "c/checkpoints/iter_000005.ckpt",
        ],
        &[],
    );
    assert_eq!(code(&changed), 1);
}

#[test]
fn config_file_env_and_flags_layer_in_order() {
    let d = with_data();
    let cfg = d.path().join("exp.cfg");
    fs::write(&cfg, "# experiment\n[run]\nseed = 3\neval_interval = 0\n\n[train]\niterations = 1\nlr_main = 0.02\n")
        .unwrap();
    let seed_of = |run: &str| {
        let text = fs::read_to_string(d.path().join(run).join("config.txt")).unwrap();
        let line = text.lines().find(|l| l.starts_with("seed = ")).unwrap().to_string();
        assert!(text.contains("lr_main = 0.02"));
        line
    };
    ok(d.path(), &["train", "--config", "exp.cfg", "--run-dir", "r1"]);
    assert_eq!(seed_of("r1"), "seed = 3");
    let env = run_in(d.path(), &["train", "--config", "exp.cfg", "--run-dir", "r2"], &[("ADAPT_PARSE_SEED", "5")]);
    assert!(env.status.success());
    assert_eq!(seed_of("r2"), "seed = 5");
    let flag = run_in(
        d.path(),
        &["train", "--config", "exp.cfg", "--run-dir", "r3", "--seed=9"],
        &[("ADAPT_PARSE_SEED", "5")],
    );
    assert!(flag.status.success());
    assert_eq!(seed_of("r3"), "seed = 9");

    // The written config reproduces the run on its own.
    ok(d.path(), &["train", "--config", "r3/config.txt", "--run-dir", "r4"]);
    assert_eq!(
        fs::read(d.path().join("r3/checkpoints/iter_000001.ckpt")).unwrap(),
        fs::read(d.path().join("r4/checkpoints/iter_000001.ckpt")).unwrap()
    );

    fs::write(&cfg, "[train]\nseed = 3\n").unwrap();
    let bad = run_in(d.path(), &["train", "--config", "exp.cfg"], &[]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
    assert_eq!(code(&run_in(d.path(), &["train", "--run-dir", "data/source"], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["train", "--batch-size", "many"], &[])), 1);
}

#[test]
fn eval_reports_and_refuses_unlabeled_data() {
    let d = with_data();
    let fixture =
        ok(d.path(), &["eval", "--predictions", "data/target/test", "--data", "data/target/test", "--out", "rep"]);
    let text = String::from_utf8(fixture.stdout.clone()).unwrap();
    let keys: Vec<&str> = text.lines().filter_map(|l| l.trim().strip_prefix('"')?.split('"').next()).collect();
    assert_eq!(
        keys,
        [
            "pixel_accuracy",
            "foreground_accuracy",
            "avg_precision",
            "avg_recall",
            "avg_f1",
            "f1_class_0",
            "f1_class_1",
            "f1_class_2",
            "f1_class_3"
        ]
    );
    let report: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).unwrap();
    assert!(report.values().all(|v| v.as_f64() == Some(1.0)));
    assert_eq!(fs::read(d.path().join("rep/report.json")).unwrap(), fixture.stdout);
    let csv = fs::read_to_string(d.path().join("rep/report.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "1,1,1,1,1,1,1,1,1");

    train(d.path(), &["--iterations", "5"]);
    let ckpt = "runs/adapt/checkpoints/iter_000005.ckpt";
    let first = ok(d.path(), &["eval", "--checkpoint", ckpt, "--data", "data/target/test"]);
    let second = ok(d.path(), &["eval", "--checkpoint", ckpt, "--data", "data/target/test"]);
    assert_eq!(first.stdout, second.stdout);
    let logged = fs::read_to_string(d.path().join("runs/adapt/metrics.csv")).unwrap();
    let r: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert!(logged.lines().nth(1).unwrap().ends_with(&format!(",{}", r["avg_f1"])));

    let refused = run_in(d.path(), &["eval", "--checkpoint", ckpt, "--data", "data/target/train"], &[]);
    assert_eq!(code(&refused), 1);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("unlabeled"));
}

#[test]
fn infer_is_pure_shaped_and_repeatable() {
    let d = with_data();
    train(d.path(), &["--iterations", "5"]);
    let ckpt = "runs/adapt/checkpoints/iter_000005.ckpt";
    let image = "data/target/test/images/00000.tsr";
    let out = ok(
        d.path(),
        &["infer", "--checkpoint", ckpt, "--image", image, "--out", "p1.tsr", "--vis", "p1.ppm", "--assert-purity"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("purity check passed"));
    ok(d.path(), &["infer", "--checkpoint", ckpt, "--image", image, "--out", "p2.tsr"]);
    assert_eq!(fs::read(d.path().join("p1.tsr")).unwrap(), fs::read(d.path().join("p2.tsr")).unwrap());
    let pred: LabelMap = tensor_read(d.path().join("p1.tsr")).unwrap();
    assert_eq!(pred.dims(), &[49, 25]);
    assert!(pred.data().iter().all(|&c| c < 4));
    let ppm = fs::read(d.path().join("p1.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n25 49\n255\n"));
    assert_eq!(ppm.len(), b"P6\n25 49\n255\n".len() + 49 * 25 * 3);

    let test = load_dataset(d.path().join("data/target/test")).unwrap();
    let small = Tensor32::zeros(&[3, 40, 25]);
    tensor_write(&small, d.path().join("small.tsr")).unwrap();
    let wrong = run_in(d.path(), &["infer", "--checkpoint", ckpt, "--image", "small.tsr", "--out", "p3.tsr"], &[]);
    assert_eq!(code(&wrong), 1);
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("[3, 49, 25]"));
    assert_eq!(test.samples[0].image.dims(), &[3, 49, 25]);
}

#[test]
fn gradcheck_reports_five_networks_and_fails_on_a_fault() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let sections: Vec<&str> = text.lines().filter(|l| l.starts_with('[')).collect();
    assert_eq!(sections, ["[E]", "[C]", "[L]", "[A_f]", "[A_l]"]);
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("PASS")).count(), 5);

    let fault = run_in(d.path(), &["gradcheck", "--inject-fault", "1.01"], &[]);
    assert_eq!(code(&fault), 2);
    assert!(String::from_utf8_lossy(&fault.stdout).contains("FAIL"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_in(d.path(), &["--help"], &[])), 0);
    assert_eq!(code(&run_in(d.path(), &["--version"], &[])), 0);
    assert_eq!(code(&run_in(d.path(), &[], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["frobnicate"], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["train", "--no-such-key", "1"], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["train", "--seed"], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["eval", "--checkpoint", "x", "--data", "d", "--seed", "2"], &[])), 1);
    assert_eq!(code(&run_in(d.path(), &["train", "--config", "missing.cfg"], &[])), 3);
    assert_eq!(code(&run_in(d.path(), &["train"], &[])), 3);
    fs::write(d.path().join("bad.ckpt"), b"CKPT\x01garbage").unwrap();
    fs::write(d.path().join("img.tsr"), b"").unwrap();
    assert_eq!(
        code(&run_in(d.path(), &["infer", "--checkpoint", "bad.ckpt", "--image", "img.tsr", "--out", "o.tsr"], &[])),
        3
    );
}

#[test]
fn non_finite_training_exits_with_the_numerical_code() {
    let d = with_data();
    let out = run_in(d.path(), &["train", "--iterations", "30", "--lr-main", "1e30", "--eval-interval", "0"], &[]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at iteration"));
}
