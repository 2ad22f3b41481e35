use std::path::Path;

use gasdro::cli::{
    cmd_verify, read_metrics_dir, resolve_config, run, Common, ExperimentConfig, EXIT_FAILED, EXIT_OK, EXIT_USAGE,
};

fn args(cmd: &[&str], out: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::iter::once("gasdro").chain(cmd.iter().copied()).map(String::from).collect();
    v.extend(["--out".to_string(), out.display().to_string()]);
    v
}

const SMALL: [&str; 12] = [
    "--set",
    "data.train_length=200",
    "--set",
    "data.test_length=120",
    "--set",
    "train.epochs=3",
    "--set",
    "ddpm.pretrain_steps=50",
    "--set",
    "solver.outer_iters=1",
    "--set",
    "solver.inner_epochs=1",
];

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(["gasdro", "--help"]), EXIT_OK);
    assert_eq!(run(["gasdro", "train", "--help"]), EXIT_OK);
    assert_eq!(run(["gasdro", "--version"]), EXIT_OK);
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(["gasdro"]), EXIT_USAGE);
    assert_eq!(run(["gasdro", "frobnicate"]), EXIT_USAGE);
    assert_eq!(run(args(&["train", "--method", "nope"], d.path())), EXIT_USAGE);
    assert_eq!(run(args(&["train", "--set", "no.such.key=1"], d.path())), EXIT_USAGE);
    assert_eq!(run(args(&["train", "--set", "missing-equals"], d.path())), EXIT_USAGE);
    assert_eq!(run(args(&["train", "--preset", "huge"], d.path())), EXIT_USAGE);
    assert_eq!(run(args(&["verify", "--only", "nope"], d.path())), EXIT_USAGE);
    // no data written yet
    assert_eq!(run(args(&["train", "--method", "erm"], d.path())), EXIT_USAGE);
    // no checkpoints yet
    assert_eq!(run(args(&["eval"], d.path())), EXIT_USAGE);
    assert_eq!(run(args(&["sweep-eps", "--eps", "0.1,-1"], d.path())), EXIT_USAGE);
}

#[test]
fn config_layers_in_order() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("x.conf");
    std::fs::write(&file, "seed = 5\ntrain.epochs = 7\n").unwrap();
    let common = Common {
        seed: Some(9),
        config: Some(file),
        out: d.path().to_path_buf(),
        preset: "paper".into(),
        overrides: vec!["train.epochs=8".into()],
    };
    let raw = resolve_config(&common).unwrap();
    let cfg = ExperimentConfig::from_config(&raw, d.path()).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.train.epochs, 8);
    assert_eq!(cfg.ddpm.steps, 500);
}

#[test]
fn pipeline_writes_expected_files() {
    let d = tempfile::tempdir().unwrap();
    let with = |cmd: &[&str]| {
        let mut a = args(cmd, d.path());
        a.extend(SMALL.iter().map(|s| s.to_string()));
        a
    };
    assert_eq!(run(with(&["gen-data"])), EXIT_OK);
    for f in ["train.csv", "test_noisy.csv", "test_fast.csv", "test_loud.csv", "test_drift.csv"] {
        assert!(d.path().join("data").join(f).exists(), "{f}");
    }
    for m in ["erm", "gasdro"] {
        assert_eq!(run(with(&["train", "--method", m])), EXIT_OK);
        for f in [format!("model_{m}.ckpt"), format!("diagnostics_{m}.txt"), format!("train_{m}.txt")] {
            assert!(d.path().join(&f).exists(), "{f}");
        }
    }
    let diag = std::fs::read_to_string(d.path().join("diagnostics_gasdro.txt")).unwrap();
    assert!(diag.lines().any(|l| l.starts_with("kind=inner ")));
    assert!(diag.lines().any(|l| l.starts_with("kind=outer ")));

    assert_eq!(run(with(&["eval"])), EXIT_OK);
    let recs = read_metrics_dir(d.path()).unwrap();
    // 2 methods × 4 test sets × (clean + 12 corruptions)
    assert_eq!(recs.len(), 2 * 4 * 13);
    assert!(recs.iter().all(|r| r.mse.is_finite() && r.w1 >= 0.0));

    assert_eq!(run(with(&["report"])), EXIT_OK);
    let table = std::fs::read_to_string(d.path().join("table_clean.csv")).unwrap();
    assert!(table.starts_with("dataset,erm,gasdro\n"));
    assert!(table.contains("Average improvement vs erm (%)"));
    assert!(d.path().join("table_cutout_0.3.csv").exists());

    assert_eq!(run(with(&["sweep-eps", "--eps", "0.3,0.01"])), EXIT_OK);
    let sweep = std::fs::read_to_string(d.path().join("sweep_eps.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "eps,avg_ood_mse");
    assert!(rows[1].starts_with("0.01,") && rows[2].starts_with("0.3,"));
}

#[test]
fn verify_single_probe() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(args(&["verify", "--only", "toy-kl"], d.path())), EXIT_OK);
    let text = std::fs::read_to_string(d.path().join("verify.txt")).unwrap();
    assert!(text.starts_with("probe=toy-kl ") && text.contains("status=pass"));
    let reps = cmd_verify(Some("dual-lemma"), 3).unwrap();
    assert!(reps[0].passed());
    assert_ne!(EXIT_FAILED, EXIT_OK);
}
