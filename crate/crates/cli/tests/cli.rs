use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorpot"))
        .args(args)
        .current_dir(dir)
        .env("TENSORPOT_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &[&str] = &["embedding_dimension=6", "num_rbf=6", "num_layers=1"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn gen_toy_is_reproducible_and_guards_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["one", "two"] {
        let o = run(dir.path(), &["gen-toy", "--out-dir", out, "--frames", "4"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["manifest.txt", "a.xyz", "b.xyz", "merged.xyz"] {
        let a = fs::read(dir.path().join("one").join(file)).unwrap();
        let b = fs::read(dir.path().join("two").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let manifest = fs::read_to_string(dir.path().join("one/manifest.txt")).unwrap();
    assert!(manifest.contains("frames_a = 12"), "{manifest}");
    assert!(manifest.contains("frames_merged = 24"));

    let o = run(dir.path(), &["gen-toy", "--out-dir", "one", "--frames", "4"]);
    assert_eq!(code(&o), 1);
    let o = run(dir.path(), &["gen-toy", "--out-dir", "one", "--frames", "4", "--force"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn configuration_errors_exit_with_one_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["check-equivariance", "bogus_key=1"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus_key") && err.contains("embedding_dimension"), "{err}");
    assert_eq!(code(&run(dir.path(), &["train", "--no-such-flag"])), 1);
    fs::write(dir.path().join("bad.txt"), "lr 1e-3\nwarmup 5\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "bad.txt", "--data", "missing.xyz", "--out-dir", "run"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn equivariance_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &with_small(&["check-equivariance", "--trials", "4"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = run(
        dir.path(),
        &with_small(&["check-equivariance", "--trials", "4", "--sabotage", "flip-skew-z"]),
    );
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &with_small(&["check-equivariance", "--trials", "0"]));
    assert_eq!(code(&o), 0);
}

#[test]
fn gradcheck_and_benchmark_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &with_small(&["gradcheck", "--systems", "2"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir.path(), &with_small(&["bench-scaling", "--sizes", "8,16", "--repeats", "1"]));
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("t(16)/t(8)"), "{table}");
    let o = run(dir.path(), &with_small(&["bench-scaling", "--sizes", "1"]));
    assert_eq!(code(&o), 1);
}

#[test]
fn train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["gen-toy", "--out-dir", "toy", "--frames", "4"])), 0);
    let o = run(
        d,
        &with_small(&[
            "train",
            "--data",
            "toy/merged.xyz",
            "--out-dir",
            "run",
            "max_epochs=2",
            "batch_size=4",
            "attribute_mode=total_charge",
        ]),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(d.join("run/metrics.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.split('\t').count() == 7));

    let o = run(d, &["eval", "--model", "run/checkpoint.json", "--data", "toy/merged.xyz", "--split", "test"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("Q=0") && table.contains("Q=-1"), "{table}");

    let o = run(d, &["predict", "--model", "run/model.json", "--data", "toy/a.xyz", "--out-dir", "pred"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(d.join("pred/predictions.xyz")).unwrap();
    assert_eq!(text.matches("energy=").count(), 12);

    let o = run(d, &["eval", "--model", "run/model.json", "--data", "missing.xyz"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["gen-toy", "--out-dir", "toy", "--frames", "8"])), 0);
    let o = run(d, &with_small(&["train", "--data", "toy/a.xyz", "--out-dir", "run", "max_epochs=0"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("run/checkpoint.json").exists());
    assert!(d.join("run/model.json").exists());
    assert_eq!(fs::read_to_string(d.join("run/metrics.tsv")).unwrap().lines().count(), 1);
}

#[test]
fn neutral_data_trains_identically_with_and_without_charge_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["gen-toy", "--out-dir", "toy", "--frames", "4"])), 0);
    for (mode, out) in [("none", "base"), ("total_charge", "ext")] {
        let mode = format!("attribute_mode={mode}");
        let o = run(
            d,
            &with_small(&["train", "--data", "toy/a.xyz", "--out-dir", out, "max_epochs=2", "batch_size=4", &mode]),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(d.join("base/metrics.tsv")).unwrap(),
        fs::read(d.join("ext/metrics.tsv")).unwrap()
    );
    let params = |dir: &str| {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join(dir).join("model.json")).unwrap()).unwrap();
        v["params"].clone()
    };
    assert_eq!(params("base"), params("ext"));
}
