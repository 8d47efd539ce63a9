use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn physforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physforge")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = physforge(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");

    std::fs::write(&cfg, "[verifier]\nmax_paralel = 4\n").unwrap();
    let out = physforge(&["--config", path(&cfg), "pipeline"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("max_paralel"), "{}", stderr(&out));

    std::fs::write(&cfg, "[verifier]\nmax_parallel = \"many\"\n").unwrap();
    let out = physforge(&["--config", path(&cfg), "pipeline"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("verifier.max_parallel"), "{}", stderr(&out));
}

#[test]
fn eval_renders_rows_against_a_saved_baseline() {
    let t = fixtures().join("minif2f");
    let dir = tempfile::tempdir().unwrap();
    let base_report = dir.path().join("base.json");
    let eval = |verdicts: &str, extra: &[&str]| {
        let (labels, verdicts) = (t.join("labels.jsonl"), t.join(verdicts));
        let mut args = vec!["eval", "pass-at-k", "--k", "16", "--corpus", path(&labels)];
        args.extend(["--verdicts", path(&verdicts)]);
        args.extend(extra);
        physforge(&args)
    };

    let base = eval("base.verdicts.jsonl", &["--out", path(&base_report), "--format", "json"]);
    assert!(base.status.success(), "{}", stderr(&base));
    let v: serde_json::Value = serde_json::from_slice(&base.stdout).unwrap();
    assert_eq!(v["overall"]["display"], "167/244 = 68.4%");

    let trained = eval("trained.verdicts.jsonl", &["--baseline", path(&base_report)]);
    assert!(trained.status.success(), "{}", stderr(&trained));
    let text = stdout(&trained);
    let row = |label: &str| {
        let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("no {label} row:\n{text}"));
        line.split_whitespace().collect::<Vec<_>>().join(" ")
    };
    assert_eq!(row("Overall Pass Rate"), "Overall Pass Rate 170/244 = 69.7% (+1.3%)");
    assert_eq!(row("Olympiad/AIME"), "Olympiad/AIME 7/15 = 46.7% (-6.6%)");
    assert_eq!(row("MATH/Algebra"), "MATH/Algebra 65/70 = 92.9% (+2.9%)");
}

#[test]
fn extract_writes_records_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("src");
    std::fs::create_dir_all(root.join("Mech")).unwrap();
    std::fs::write(
        root.join("Mech/Basic.lean"),
        "import Mathlib\n\ntheorem ok (x : ℕ) : x + 0 = x := by simp\n\ntheorem hole : 1 = 1 := by sorry\n",
    )
    .unwrap();
    let out_file = dir.path().join("corpus.jsonl");
    let skipped = dir.path().join("skipped.jsonl");
    let out = physforge(&["extract", "--root", path(&root), "--out", path(&out_file), "--skipped", path(&skipped)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let records = std::fs::read_to_string(&out_file).unwrap();
    assert_eq!(records.lines().count(), 1);
    assert!(records.contains("theorem ok"));
    assert!(std::fs::read_to_string(&skipped).unwrap().contains("hole"));
    assert!(physforge::manifest::sidecar_path(&out_file).exists());
}

#[test]
fn pipeline_rerun_skips_finished_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("replay/pipeline.toml");
    let work = dir.path().join("work");
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_physforge"))
            .args(["--config", path(&cfg)])
            .args(extra)
            .args(["pipeline", "--work-dir", path(&work)])
            .env("RUST_LOG", "info")
            .output()
            .unwrap()
    };

    let first = run(&[]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(!stderr(&first).contains("up to date"));
    let ledger = std::fs::read_to_string(work.join("ledger.json")).unwrap();

    let second = run(&[]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert!(stderr(&second).matches("up to date").count() >= 8, "{}", stderr(&second));
    assert_eq!(std::fs::read_to_string(work.join("ledger.json")).unwrap(), ledger);

    let forced = run(&["--force"]);
    assert!(forced.status.success());
    assert!(!stderr(&forced).contains("up to date"));
}
