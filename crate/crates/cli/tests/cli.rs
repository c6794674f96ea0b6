use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--clips", "20", "--frames", "8", "--joints", "2", "--pitches", "4", "--density", "0.4",
    "--feature-width", "4", "--refiner-layers", "1", "--predictor-width", "8", "--dims", "8,16",
    "--diffusion-steps", "5", "--position-steps", "3", "--motion-steps", "3", "--embedder-steps", "3",
    "--batch-size", "4", "--wgd-components", "2", "--eval-clips", "3",
];

fn s2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2c")).args(args).env("RUST_LOG", "warn").output().expect("spawn s2c")
}

fn ok(args: &[&str]) -> String {
    let out = s2c(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_tiny(dir: &Path) {
    let mut args = vec!["gen-data", "--out", p(dir)];
    args.extend_from_slice(TINY);
    ok(&args);
}

#[test]
fn verify_passes_with_stable_output() {
    let a = ok(&["verify"]);
    assert!(a.ends_with("12 checks, 0 failed\n"), "{a}");
    assert!(a.lines().all(|l| !l.starts_with("FAIL")));
    assert_eq!(a, ok(&["verify"]));
    assert_eq!(ok(&["verify", "--quiet"]), "12 checks, 0 failed\n");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(s2c(&["gen-data", "--out", "/tmp/x", "--no-such-flag", "1"]).status.code(), Some(2));
    assert_eq!(s2c(&[]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = s2c(&["gen-data", "--out", p(dir.path()), "--fusion-mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fusion-mode"));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny(&data);
    let missing = dir.path().join("nowhere/model.s2c");
    let out = s2c(&["sample", "--data", p(&data), "--checkpoint", p(&missing), "--out", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
    let out = s2c(&["train-position", "--data", p(&dir.path().join("absent")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_chain_is_traceable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    gen_tiny(&d("data"));
    ok(&["train-position", "--data", p(&d("data")), "--out", p(&d("pos"))]);
    let ckpt = d("pos").join("position.s2c");
    ok(&["train-motion", "--data", p(&d("data")), "--checkpoint", p(&ckpt), "--out", p(&d("mot"))]);
    let model = d("mot").join("model.s2c");
    for out in ["s1", "s2"] {
        let text = ok(&["sample", "--data", p(&d("data")), "--checkpoint", p(&model), "--out", p(&d(out))]);
        assert!(text.contains("clip 16:"), "{text}");
    }
    let bytes = |dir: &str| std::fs::read(d(dir).join("samples.s2c")).unwrap();
    assert_eq!(bytes("s1"), bytes("s2"));

    // The resolved config travels down the chain unchanged.
    let cfg = |dir: &str| std::fs::read_to_string(d(dir).join("run.cfg")).unwrap();
    assert_eq!(cfg("data"), cfg("s1"));
    assert!(cfg("s1").contains("frames=8\n") && cfg("s1").contains("# config-hash="));

    let samples = d("s1").join("samples.s2c");
    let csv = ok(&["evaluate", "--data", p(&d("data")), "--samples", p(&samples), "--out", p(&d("eval"))]);
    assert_eq!(csv.lines().next().unwrap(), "metric,hand,value,config_hash,seed");
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(std::fs::read_to_string(d("eval").join("metrics.csv")).unwrap(), csv);

    // Retraining under the same hash reproduces the checkpoint bitwise.
    ok(&["train-motion", "--data", p(&d("data")), "--checkpoint", p(&ckpt), "--out", p(&d("mot2"))]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(d("mot2").join("model.s2c")).unwrap());
}

#[test]
fn ablate_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny(&data);
    let out = dir.path().join("grid");
    let text = ok(&["ablate", "--data", p(&data), "--out", p(&out), "--seeds", "1,2", "--cells", "on,on,hcaa;on,on,none"]);
    assert!(text.contains("fusion modes by mean FID"));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().skip(1).all(|l| l.contains(",ok,")));
    let summary = std::fs::read_to_string(out.join("ablation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().starts_with("true,true,hcaa,2,"));
    assert_eq!(s2c(&["ablate", "--data", p(&data), "--out", p(&out), "--cells", "on,on"]).status.code(), Some(2));
}
