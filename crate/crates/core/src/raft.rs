//! Rejection-sampling fine-tuning sets: keep only verified proofs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prompt::{extract_proof, render_prompt, PromptStyle};
use crate::record::{Split, TheoremRecord};
use crate::source::ScoredAttempt;
use crate::tokens::TokenEstimator;

/// One training record per distinct passing completion. The proof is the
/// one recovered from the completion for `style`, or the raw completion when
/// nothing can be recovered.
pub fn raft_select(
    records: &[TheoremRecord],
    scored: &BTreeMap<String, Vec<ScoredAttempt>>,
    style: PromptStyle,
    estimator: &dyn TokenEstimator,
) -> Vec<TheoremRecord> {
    let mut out = Vec::new();
    for record in records {
        let Some(attempts) = scored.get(&record.id) else { continue };
        let mut seen = BTreeSet::new();
        for s in attempts.iter().filter(|s| s.verdict.passed()) {
            if !seen.insert(s.attempt.completion.as_str()) {
                continue;
            }
            let proof = extract_proof(&s.attempt.completion, &record.statement, style)
                .unwrap_or_else(|| s.attempt.completion.trim().to_string());
            let token_len = estimator.estimate(&record.header)
                + estimator.estimate(&record.statement)
                + estimator.estimate(&proof);
            let mut selected = TheoremRecord::new(
                record.source_path.clone(),
                record.header.clone(),
                record.statement.clone(),
                proof,
                record.doc_comment.clone(),
                token_len,
            );
            selected.category = record.category;
            selected.split = Split::Train;
            out.push(selected);
        }
    }
    out
}

/// Supervised pair; the loss is meant to apply to `completion` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub prompt_id: String,
    pub prompt_text: String,
    pub completion: String,
}

/// The prompt a prover sees for `record` and the completion that would
/// reproduce its proof.
pub fn sft_pair(record: &TheoremRecord, style: PromptStyle) -> Result<SftPair> {
    let prompt = render_prompt(record, style)?;
    let proof = record.proof.trim();
    let completion = if style.prefills_statement() {
        let body = proof.strip_prefix(":=").unwrap_or(proof);
        alloc::format!("{body}\n```")
    } else {
        alloc::format!("```lean4\n{}\n{} {}\n```", record.header.trim_end(), record.statement.trim(), proof)
    };
    Ok(SftPair { prompt_id: record.id.clone(), prompt_text: prompt.text, completion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::ProofAttempt;
    use crate::tokens::WhitespaceEstimator;
    use crate::verify::{Status, VerificationVerdict};

    fn scored(id: &str, idx: usize, completion: &str, status: Status) -> ScoredAttempt {
        ScoredAttempt {
            attempt: ProofAttempt {
                theorem_id: id.into(),
                attempt_index: idx,
                prover_name: "m".into(),
                completion: completion.into(),
                finish_reason: "stop".into(),
                logprobs: None,
            },
            verdict: VerificationVerdict::new(alloc::format!("{id}/{idx}"), status, ""),
        }
    }

    fn fixture() -> (Vec<TheoremRecord>, BTreeMap<String, Vec<ScoredAttempt>>) {
        let a = TheoremRecord::new("A.lean", "import Mathlib", "theorem a : True", ":= trivial", None, 6);
        let b = TheoremRecord::new("A.lean", "import Mathlib", "theorem b : True", ":= trivial", None, 6);
        let mut map = BTreeMap::new();
        map.insert(
            a.id.clone(),
            alloc::vec![
                scored(&a.id, 0, " by trivial\n```", Status::Pass),
                scored(&a.id, 1, " True.intro\n```", Status::Pass),
                scored(&a.id, 2, " by simp\n```", Status::Fail),
                scored(&a.id, 3, " by trivial\n```", Status::Pass),
            ],
        );
        map.insert(b.id.clone(), alloc::vec![scored(&b.id, 0, " sorry", Status::ForbiddenKeyword)]);
        (alloc::vec![a, b], map)
    }

    #[test]
    fn keeps_distinct_passing_proofs() {
        let (records, map) = fixture();
        let out = raft_select(&records, &map, PromptStyle::Deepseek, &WhitespaceEstimator);
        let proofs: Vec<&str> = out.iter().map(|r| r.proof.as_str()).collect();
        assert_eq!(proofs, [":= by trivial", ":= True.intro"]);
        assert!(out.iter().all(|r| r.split == Split::Train && r.statement == "theorem a : True"));
        assert!(raft_select(&[], &map, PromptStyle::Deepseek, &WhitespaceEstimator).is_empty());
    }

    #[test]
    fn sft_pair_completes_the_prefill() {
        let (records, _) = fixture();
        let pair = sft_pair(&records[0], PromptStyle::Deepseek).unwrap();
        assert!(pair.prompt_text.ends_with("theorem a : True :="));
        assert_eq!(pair.completion, " trivial\n```");
    }
}
