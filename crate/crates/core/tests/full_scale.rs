//! Full-size conjecture pipeline over hand-rolled sources and a stub
//! verifier: 2,933 seeds, 10 conjectures each, with syntax and provability
//! verdicts assigned by a permuted rank so exactly 6,971 elaborate and
//! 2,608 of those are provable.

use std::collections::BTreeMap;

use physforge_core::conjecture::{run_conjecture_pipeline, ProverShare};
use physforge_core::curriculum::curriculum_order;
use physforge_core::grpo::{build_batches, GrpoConfig};
use physforge_core::prompt::{PromptStyle, RenderedPrompt};
use physforge_core::source::{CompletionSource, Completion, ProofAttempt, ScoredAttempt, SlotResults, SourceError};
use physforge_core::tokens::WhitespaceEstimator;
use physforge_core::verify::{CheckMode, Status, StubBackend, StubRule, StubTable, VerificationVerdict};
use physforge_core::TheoremRecord;

const SEEDS: usize = 2933;
const PER_SEED: usize = 10;
const GENERATED: usize = SEEDS * PER_SEED;
const SYNTAX_OK: usize = 6971;
const PROVABLE: usize = 2608;

/// 7919 is prime and coprime to 29,330, so this is a permutation.
fn rank(g: usize) -> usize {
    g * 7919 % GENERATED
}

fn completion(text: String) -> Result<Completion, SourceError> {
    Ok(Completion { text, finish_reason: "stop".into(), logprobs: None })
}

struct Generator;

impl CompletionSource for Generator {
    fn name(&self) -> &str {
        "generator"
    }
    fn style(&self) -> PromptStyle {
        PromptStyle::ConjectureGen
    }
    fn supports_logprobs(&self) -> bool {
        false
    }
    fn complete(&self, prompt: &RenderedPrompt, n: usize, _: bool) -> SlotResults {
        let at = prompt.text.find("seed_").expect("seed name in prompt") + 5;
        let seed: usize = prompt.text[at..at + 4].parse().unwrap();
        let list: Vec<serde_json::Value> = (0..PER_SEED)
            .map(|j| {
                let g = seed * PER_SEED + j;
                let tag = match rank(g) {
                    r if r < PROVABLE => "_wf_pv",
                    r if r < SYNTAX_OK => "_wf",
                    _ => "",
                };
                serde_json::json!({ "statement": format!("theorem conj_{g:05}{tag} (x : ℝ) : x + {g} = {g} + x") })
            })
            .collect();
        let reply = serde_json::json!({ "conjectures": list }).to_string();
        Ok((0..n).map(|_| completion(reply.clone())).collect())
    }
}

/// Proves exactly the `_pv` conjectures, on its last sample.
struct Prover(&'static str);

impl CompletionSource for Prover {
    fn name(&self) -> &str {
        self.0
    }
    fn style(&self) -> PromptStyle {
        PromptStyle::Deepseek
    }
    fn supports_logprobs(&self) -> bool {
        false
    }
    fn complete(&self, prompt: &RenderedPrompt, n: usize, _: bool) -> SlotResults {
        let provable = prompt.text.contains("_pv ");
        Ok((0..n)
            .map(|i| {
                let body = if provable && i + 1 == n { "proof_ok" } else { "ring_nf" };
                completion(format!(" by\n  {body}\n```"))
            })
            .collect())
    }
}

fn seeds() -> Vec<TheoremRecord> {
    (0..SEEDS)
        .map(|i| {
            TheoremRecord::new(
                format!("Seeds/S{i:04}.lean"),
                "import Mathlib\n",
                format!("theorem seed_{i:04} (x : ℝ) : x + 0 = x"),
                ":= by simp",
                None,
                12,
            )
        })
        .collect()
}

fn stub() -> StubBackend {
    let pass = |mode, statement: Option<&str>, proof: Option<&str>| StubRule {
        mode: Some(mode),
        statement_contains: statement.map(Into::into),
        proof_contains: proof.map(Into::into),
        header_contains: None,
        status: Status::Pass,
        diagnostics: String::new(),
    };
    StubBackend::new(StubTable {
        rules: vec![pass(CheckMode::Syntax, Some("_wf"), None), pass(CheckMode::Proof, None, Some("proof_ok"))],
        ..StubTable::default()
    })
}

#[test]
fn conjecture_pipeline_at_full_scale() {
    let seeds = seeds();
    let (a, b, c) = (Prover("prover_a"), Prover("prover_b"), Prover("prover_c"));
    let provers = [
        ProverShare { source: &a, budget: 6 },
        ProverShare { source: &b, budget: 5 },
        ProverShare { source: &c, budget: 5 },
    ];
    let run = run_conjecture_pipeline(&seeds, &Generator, PER_SEED, &provers, &stub(), 300.0, &WhitespaceEstimator).unwrap();
    let l = &run.ledger;
    assert_eq!(l.n_generated, GENERATED);
    assert_eq!(l.n_syntax_ok, SYNTAX_OK);
    assert_eq!(l.n_provable, PROVABLE);
    assert_eq!(l.retention_display(), "23.8%");
    assert_eq!(l.yield_display(), "8.9%");
    assert_eq!(l.n_rejected_syntax + l.n_rejected_provability + l.n_provable + l.n_pending, l.n_generated);
    assert_eq!(run.assembly.duplicates, 0);
    assert_eq!(run.assembly.records.len(), 5541);

    // Every provable conjecture's witness verifies on the same stub.
    for c in run.conjectures.iter().filter(|c| c.witness_proof.is_some()) {
        assert!(c.witness_proof.as_deref().unwrap().contains("proof_ok"));
    }

    let ordered = curriculum_order(run.assembly.records.clone()).unwrap();
    assert_eq!(ordered.len(), 5541);
    let cfg = GrpoConfig { group_size: 2, batch_size: 256, ..GrpoConfig::default() };
    let scored: BTreeMap<String, Vec<ScoredAttempt>> = ordered
        .iter()
        .map(|r| {
            let attempts = (0..2)
                .map(|i| {
                    let attempt = ProofAttempt {
                        theorem_id: r.id.clone(),
                        attempt_index: i,
                        prover_name: "policy".into(),
                        completion: " by\n  simp\n```".into(),
                        finish_reason: "stop".into(),
                        logprobs: None,
                    };
                    let status = if i == 0 { Status::Pass } else { Status::Fail };
                    ScoredAttempt { verdict: VerificationVerdict::new(attempt.job_id(), status, ""), attempt }
                })
                .collect();
            (r.id.clone(), attempts)
        })
        .collect();
    let build = build_batches(&ordered, &scored, PromptStyle::Deepseek, &cfg, "corpus").unwrap();
    assert!(build.skipped.is_empty());
    assert_eq!(build.batches.len(), 22);
    assert_eq!(build.batches.last().unwrap().groups.len(), 165);
    assert_eq!(build.group_count(), 5541);
    let positions: Vec<usize> = build.batches.iter().map(|b| b.metadata.curriculum_position).collect();
    assert_eq!(positions[1], 256);
    assert_eq!(positions[21], 21 * 256);
}
