//! Regenerates `tests/fixtures/{replay,minif2f}`. Run from anywhere:
//!
//! ```text
//! cargo run -p physforge --example make_fixtures
//! ```
//!
//! Replay: 100 one-lemma seed files, a generator mock that answers each
//! seed with 10 conjectures, three prover mocks and a stub verdict table.
//! Conjecture `g` (0..1000) has rank `g * 7919 mod 1000`; it is well formed
//! when rank < 238 and provable when rank < 89, proved by prover A when
//! rank < 45 and by prover C otherwise. Five provable conjectures restate an
//! earlier one with different spacing.
//!
//! MiniF2F: 244 labelled theorems and 16 verdicts each for a base and a
//! trained model, with per-category solved counts fixed below.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use physforge_core::prompt::PromptStyle;
use physforge_core::source::{MockRule, MockSource};
use physforge_core::verify::{CheckMode, Status, StubRule, StubTable, VerificationVerdict};

const SEEDS: usize = 100;
const PER_SEED: usize = 10;
const DUPLICATES: usize = 5;

fn rank(g: usize) -> usize {
    g * 7919 % 1000
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    let mut text = serde_json::to_string_pretty(value).unwrap();
    text.push('\n');
    write(path, &text);
}

fn suffix(g: usize) -> &'static str {
    match rank(g) {
        r if r < 45 => "_wf_pvA",
        r if r < 89 => "_wf_pvC",
        r if r < 238 => "_wf",
        _ => "",
    }
}

fn statement(g: usize) -> String {
    format!("theorem conj_{g:04}{} (x : ℝ) (h : 0 < x) : 0 < x + {g}", suffix(g))
}

fn replay(dir: &Path) {
    let _ = fs::remove_dir_all(dir);
    for i in 0..SEEDS {
        let src = format!(
            "import Mathlib\n\n/-- Adding zero to seed {i}. -/\ntheorem seed_{i:03} (x : ℝ) : x + 0 + {i} = x + {i} := by\n  simp\n"
        );
        write(&dir.join(format!("seeds/Seeds/Seed{i:03}.lean")), &src);
    }

    let mut statements: Vec<String> = (0..SEEDS * PER_SEED).map(statement).collect();
    // The last few provable conjectures of each prover repeat earlier ones
    // up to whitespace, so deduplication has something to remove.
    for tag in ["_wf_pvA", "_wf_pvC"] {
        let ids: Vec<usize> = (0..statements.len()).filter(|&g| suffix(g) == tag).collect();
        let n = if tag == "_wf_pvA" { 3 } else { DUPLICATES - 3 };
        for k in 0..n {
            let (src, dst) = (ids[k], ids[ids.len() - 1 - k]);
            statements[dst] = statements[src].replace(" : ", "  :\n    ");
        }
    }

    let mut generator = MockSource::new("generator", PromptStyle::ConjectureGen);
    generator.default_completions.push("I could not think of any conjectures.".into());
    for i in 0..SEEDS {
        let list: Vec<_> = statements[i * PER_SEED..(i + 1) * PER_SEED].iter().map(|s| json!({ "statement": s })).collect();
        let body = serde_json::to_string_pretty(&json!({ "conjectures": list })).unwrap();
        let reply = if i % 3 == 0 { format!("Here are the variants.\n```json\n{body}\n```\n") } else { body };
        generator = generator.with_rule(MockRule { contains: format!("seed_{i:03}"), completions: vec![reply], logprob: None, fail: None });
    }
    write_json(&dir.join("generator.json"), &generator);

    let fail = |n: usize| (0..n).map(|k| format!(" by\n  nlinarith [h, sq_nonneg (x - {k})]\n```")).collect::<Vec<_>>();
    let mut a = fail(5);
    a.push(" by\n  proof_ok\n```".into());
    let mut prover_a = MockSource::new("prover_a", PromptStyle::Deepseek);
    prover_a.default_completions = fail(1);
    prover_a.supports_logprobs = true;
    prover_a = prover_a.with_rule(MockRule { contains: "_pvA".into(), completions: a, logprob: Some(-0.25), fail: None });
    write_json(&dir.join("prover_a.json"), &prover_a);

    let prover_b = MockSource::fixed("prover_b", PromptStyle::KiminaGoedel, " by\n  sorry\n```");
    write_json(&dir.join("prover_b.json"), &prover_b);

    let mut c = fail(5);
    c[2] = " by\n  proof_ok\n```".into();
    let mut prover_c = MockSource::new("prover_c", PromptStyle::KiminaGoedel);
    prover_c.default_completions = fail(1);
    prover_c = prover_c.with_rule(MockRule { contains: "_pvC".into(), completions: c, logprob: None, fail: None });
    write_json(&dir.join("prover_c.json"), &prover_c);

    let rule = |mode, statement: Option<&str>, proof: Option<&str>| StubRule {
        mode: Some(mode),
        statement_contains: statement.map(Into::into),
        proof_contains: proof.map(Into::into),
        header_contains: None,
        status: Status::Pass,
        diagnostics: String::new(),
    };
    let table = StubTable {
        default: Status::Fail,
        entries: Vec::new(),
        rules: vec![rule(CheckMode::Syntax, Some("_wf"), None), rule(CheckMode::Proof, None, Some("proof_ok"))],
    };
    write_json(&dir.join("stub.json"), &table);

    let config = r#"# Hermetic replay: mock endpoints and a stub verifier.
[paths]
corpus_root = "seeds"
work_dir = "work"

[corpus]
exact_counts = [100, 0]

[verifier]
backend = "stub"
stub_table = "stub.json"
max_parallel = 4

[[endpoints]]
name = "generator"
kind = "mock"
mock_file = "generator.json"
style = "conjecture_gen"

[[endpoints]]
name = "prover_a"
kind = "mock"
mock_file = "prover_a.json"
style = "deepseek"
supports_logprobs = true

[[endpoints]]
name = "prover_b"
kind = "mock"
mock_file = "prover_b.json"
style = "kimina_goedel"

[[endpoints]]
name = "prover_c"
kind = "mock"
mock_file = "prover_c.json"
style = "kimina_goedel"

[conjecture]
generator = "generator"
per_seed = 10
provers = ["prover_a", "prover_b", "prover_c"]
n_proofs = 16

[rl]
policy_endpoint = "prover_a"

[seeds]
split = 7
"#;
    write(&dir.join("pipeline.toml"), config);
}

/// (label, theorems, solved by base, solved by trained)
const MINIF2F: [(&str, usize, usize, usize); 8] = [
    ("Olympiad/IMO", 20, 4, 4),
    ("Olympiad/AIME", 15, 8, 7),
    ("Olympiad/AMC", 45, 25, 25),
    ("MATH/Algebra", 70, 63, 65),
    ("MATH/Number Theory", 60, 51, 53),
    ("Custom/Algebra", 18, 8, 8),
    ("Custom/Number Theory", 8, 4, 4),
    ("Custom/Induction", 8, 4, 4),
];

fn minif2f(dir: &Path) {
    let _ = fs::remove_dir_all(dir);
    let mut labels = String::new();
    let mut base = Vec::new();
    let mut trained = Vec::new();
    let mut t = 0usize;
    for (label, total, solved_base, solved_trained) in MINIF2F {
        let slug = label.to_lowercase().replace(['/', ' '], "_");
        for j in 0..total {
            let id = format!("minif2f_{slug}_{j:02}");
            labels.push_str(&json!({ "theorem_id": id, "category": label }).to_string());
            labels.push('\n');
            for (verdicts, solved, salt) in [(&mut base, solved_base, 3), (&mut trained, solved_trained, 5)] {
                // Solved theorems pass at one or two varied attempt indices;
                // the rest mix failures and timeouts.
                let first = (t * 7 + salt) % 16;
                for a in 0..16 {
                    let status = if j < solved && (a == first || (t.is_multiple_of(4) && a == (first + 9) % 16)) {
                        Status::Pass
                    } else if (t + a).is_multiple_of(11) {
                        Status::Timeout
                    } else {
                        Status::Fail
                    };
                    verdicts.push(VerificationVerdict::new(format!("{id}/{a}"), status, ""));
                }
            }
            t += 1;
        }
    }
    write(&dir.join("labels.jsonl"), &labels);
    for (name, verdicts) in [("base.verdicts.jsonl", base), ("trained.verdicts.jsonl", trained)] {
        let text: String = verdicts.iter().map(|v| serde_json::to_string(v).unwrap() + "\n").collect();
        write(&dir.join(name), &text);
    }
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    replay(&root.join("replay"));
    minif2f(&root.join("minif2f"));
    println!("fixtures written under {}", root.display());
}
