use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kdalign"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn kdalign")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "kdalign {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SUBCOMMANDS: &[&str] = &[
    "",
    "synth",
    "acquire-rules",
    "compile-rules",
    "pretrain",
    "train",
    "infer",
    "eval",
    "experiment",
    "noise-study",
];

#[test]
fn help_output_matches_golden_files() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var("KDALIGN_BLESS").is_ok_and(|v| v == "1");
    for sub in SUBCOMMANDS {
        let mut args: Vec<&str> = sub.split_whitespace().collect();
        args.push("--help");
        let text = stdout(&ok(&args));
        let name = if sub.is_empty() { "kdalign" } else { sub };
        let file = dir.join(format!("{name}.help"));
        if bless {
            std::fs::write(&file, &text).unwrap();
        } else {
            let want = std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}", file.display()));
            assert_eq!(text, want, "help for `{name}` changed; rerun with KDALIGN_BLESS=1");
        }
    }
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s.csv");
    assert_eq!(run(&["eval", "--scores", "/nonexistent/s.csv", "--labels", "/nonexistent/l.csv"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["synth"]).status.code(), Some(1));
    let bad = run(&["synth", "--out", p(&out), "--train.bogus=1", "--model.embed_dim=foo"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("train.bogus") && err.contains("model.embed_dim"), "{err}");
    assert!(!out.exists());
    assert_eq!(run(&["eval", "--scores", "a", "--labels", "b", "--train.lambda=1"]).status.code(), Some(1));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn eval_of_a_perfect_ranking_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("l.csv");
    let scores = tmp.path().join("s.csv");
    std::fs::write(&labels, "f0,label\n0.1,0\n0.2,1\n0.3,0\n0.4,1\n0.5,0\n").unwrap();
    std::fs::write(&scores, "score\n0.1\n0.9\n0.2\n0.8\n0.3\n").unwrap();
    let o = ok(&["eval", "--scores", p(&scores), "--labels", p(&labels)]);
    assert_eq!(stdout(&o).trim(), "auprc=1.0 rec@k=1.0");
}

#[test]
fn acquiring_from_all_normal_data_gives_no_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let rules = tmp.path().join("r.txt");
    let mut text = String::from("f0,f1,label\n");
    for i in 0..50 {
        text.push_str(&format!("{},{},0\n", i, 50 - i));
    }
    std::fs::write(&data, text).unwrap();
    ok(&["acquire-rules", "--data", p(&data), "--out", p(&rules)]);
    assert_eq!(std::fs::read_to_string(&rules).unwrap().trim(), "");
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const QUICK: &[&str] = &["--train.epochs=8", "--know_encoder.pretrain.steps=20"];

#[test]
fn pipeline_is_reproducible_and_reruns_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("d.csv");
    ok(&["synth", "--out", p(&data)]);
    let first = read(&data);
    ok(&["synth", "--out", p(&data)]);
    assert_eq!(first, read(&data));

    let rules = t.join("r.txt");
    ok(&["acquire-rules", "--data", p(&data), "--out", p(&rules)]);
    let rules_text = String::from_utf8(read(&rules)).unwrap();
    assert!(rules_text.contains("THEN anomaly IS true"), "{rules_text}");

    let compiled = t.join("c.json");
    ok(&["compile-rules", "--rules", p(&rules), "--out", p(&compiled)]);
    let json: serde_json::Value = serde_json::from_slice(&read(&compiled)).unwrap();
    assert_eq!(json["rules"].as_array().unwrap().len(), rules_text.lines().count());

    let enc = t.join("enc.kdal");
    let mut args = vec!["pretrain", "--rules", p(&rules), "--out", p(&enc)];
    args.extend(QUICK);
    ok(&args);

    let mut outputs = Vec::new();
    for dir in ["a", "b", "a"] {
        let out = t.join(dir);
        let mut args = vec![
            "train", "--data", p(&data), "--rules", p(&rules), "--encoder", p(&enc), "--out", p(&out), "--train.lambda=0.3",
        ];
        args.extend(QUICK);
        let o = ok(&args);
        outputs.push((stdout(&o), read(&out.join("model.kdal")), read(&out.join("log.csv"))));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let scores = t.join("s.csv");
    ok(&["infer", "--checkpoint", p(&t.join("a/model.kdal")), "--data", p(&data), "--out", p(&scores)]);
    let e = stdout(&ok(&["eval", "--scores", p(&scores), "--labels", p(&data)]));
    assert!(e.starts_with("auprc="), "{e}");

    let other_seed = t.join("c");
    let mut args = vec![
        "train", "--data", p(&data), "--rules", p(&rules), "--encoder", p(&enc), "--out", p(&other_seed), "--train.lambda=0.3", "--seed", "7",
    ];
    args.extend(QUICK);
    ok(&args);
    assert_ne!(outputs[0].1, read(&other_seed.join("model.kdal")));
}

#[test]
fn zero_lambda_matches_disabled_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("d.csv");
    ok(&["synth", "--out", p(&data)]);
    let a = t.join("a");
    let b = t.join("b");
    ok(&["train", "--data", p(&data), "--out", p(&a), "--train.lambda=0", "--train.epochs=5"]);
    ok(&["train", "--data", p(&data), "--out", p(&b), "--ot.enabled=false", "--train.lambda=0.5", "--train.epochs=5"]);
    assert_eq!(read(&a.join("model.kdal")), read(&b.join("model.kdal")));
}

#[test]
fn ot_dump_writes_one_file_per_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("d.csv");
    ok(&["synth", "--out", p(&data)]);
    let out = t.join("run");
    ok(&["train", "--data", p(&data), "--out", p(&out), "--train.lambda=0.3", "--train.epochs=2", "--dump-ot"]);
    let files: Vec<_> = std::fs::read_dir(out.join("ot")).unwrap().collect();
    assert!(!files.is_empty());
    let first = files[0].as_ref().unwrap().path();
    let v: serde_json::Value = serde_json::from_slice(&read(&first)).unwrap();
    assert!(v.get("epoch").is_some(), "{v}");
}

#[test]
fn synthetic_experiment_finishes_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exp");
    let start = std::time::Instant::now();
    let o = ok(&["experiment", "--out", p(&out), "--eval.runs=2", "--train.epochs=10"]);
    assert!(start.elapsed().as_secs() < 120);
    let table = stdout(&o);
    assert!(table.contains("baseline") && table.contains("kdalign"), "{table}");
    for f in ["report.txt", "runs.csv", "report.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cfg = String::from_utf8(read(&out.join("config.toml"))).unwrap();
    assert!(cfg.contains("runs = 2"), "{cfg}");
}
