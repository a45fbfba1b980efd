use std::path::Path;
use std::process::{Command, Output};

fn hshmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hshmm"))
        .args(args)
        .env("HSHMM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 12] = [
    "--set",
    "embedding_dim=4",
    "--set",
    "language_dim=2",
    "--set",
    "gradient_steps=20",
    "--set",
    "supervised_iterations=2",
    "--set",
    "unsupervised_iterations=2",
    "--set",
    "truncation=8",
];

fn synth(dir: &Path) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"n_utterances": 12, "seed": 4}"#).unwrap();
    let out = hshmm(&["synth", "--spec", p(&spec), "--out-dir", p(&dir.join("corpus"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&hshmm(&[])), 1);
    assert_eq!(code(&hshmm(&["no-such-command"])), 1);
    assert_eq!(code(&hshmm(&["eval", "--ref", "a"])), 1);
    assert_eq!(code(&hshmm(&["--help"])), 0);
}

#[test]
fn missing_and_malformed_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.txt");
    let out = hshmm(&["eval", "--ref", p(&missing), "--hyp", p(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "u1 0 10\n").unwrap();
    assert_eq!(code(&hshmm(&["eval", "--ref", p(&bad), "--hyp", p(&bad)])), 2);

    let out = hshmm(&["train-hyper", "--set", "n_samples=0", "--source", "a=b", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    let out = hshmm(&["train-hyper", "--source", "nameonly", "--out-dir", p(tmp.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn covariance_overflow_in_strict_mode_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let source = format!("s={}", p(&tmp.path().join("corpus").join("source0").join("manifest.tsv")));
    let hyper = tmp.path().join("hyper");
    let mut args = vec!["train-hyper", "--source", &source, "--out-dir", p(&hyper)];
    args.extend_from_slice(&["--set", "strict=true", "--set", "init.init_scale=200"]);
    args.extend_from_slice(&SMALL);
    let out = hshmm(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let corpus = tmp.path().join("corpus");
    let s0 = format!("source0={}", p(&corpus.join("source0").join("manifest.tsv")));
    let s1 = format!("source1={}", p(&corpus.join("source1").join("manifest.tsv")));
    let hyper = tmp.path().join("hyper");
    let mut args = vec!["train-hyper", "--source", &s0, "--source", &s1, "--out-dir", p(&hyper)];
    args.extend_from_slice(&SMALL);
    let out = hshmm(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "model.hshm", "train_log.jsonl"] {
        assert!(hyper.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(hyper.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let manifest = corpus.join("target").join("manifest.tsv");
    let disc = tmp.path().join("discover");
    let checkpoint = hyper.join("model.hshm");
    let mut args = vec![
        "discover",
        "--checkpoint",
        p(&checkpoint),
        "--manifest",
        p(&manifest),
        "--out-dir",
        p(&disc),
    ];
    args.extend_from_slice(&SMALL);
    let out = hshmm(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["hyper_sha256_before"], summary["hyper_sha256_after"]);

    let dec = tmp.path().join("decode");
    let model = disc.join("model.hshm");
    let out = hshmm(&["decode", "--checkpoint", p(&model), "--manifest", p(&manifest), "--out-dir", p(&dec)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let units = dec.join("units.txt");
    let out = hshmm(&["eval", "--ref", p(&manifest), "--hyp", p(&units)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let nmi = m["nmi"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&nmi));

    let out = hshmm(&["export-embeddings", "--checkpoint", p(&model)]);
    assert_eq!(code(&out), 0);
    let tsv = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = tsv.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["source0", "source1", "target"]);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 5));
}
