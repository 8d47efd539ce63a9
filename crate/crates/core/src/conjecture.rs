//! Synthetic conjectures: generation from seed records, the well-formedness
//! and provability filters, deduplication and retention accounting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::split_declarations;
use crate::error::{Error, Result};
use crate::eval::Score;
use crate::hash::content_id;
use crate::lexer::normalize_whitespace;
use crate::prompt::{extract_proof, render_prompt, PromptStyle};
use crate::record::{Split, TheoremRecord};
use crate::source::{attempts_for_prompt, sample_many, CompletionSource, ProofAttempt};
use crate::tokens::TokenEstimator;
use crate::verify::{check_syntax_batch, syntax_job, verify_batch, Backend, Status, VerificationJob};

/// Conjectures requested per seed by default.
pub const DEFAULT_PER_SEED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    SyntaxOk,
    Provable,
    Rejected,
}

/// Filter that rejected a conjecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Syntax,
    Provability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conjecture {
    pub conjecture_id: String,
    pub parent_id: String,
    /// Declaration ending in `:= sorry`.
    pub statement: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_proof: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_at: Option<Filter>,
    /// Set when a filter could not decide (toolchain or transport trouble);
    /// the conjecture keeps its stage and should be re-run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_reason: Option<String>,
}

impl Conjecture {
    pub fn new(parent_id: &str, index: usize, statement: &str) -> Self {
        let statement = normalize_conjecture(statement);
        Conjecture {
            conjecture_id: content_id(&["conjecture", parent_id, &index.to_string(), &statement]),
            parent_id: parent_id.to_string(),
            statement,
            stage: Stage::Generated,
            rejection_reason: None,
            witness_proof: None,
            rejected_at: None,
            pending_reason: None,
        }
    }

    /// The statement without its `:= sorry` placeholder.
    pub fn body(&self) -> &str {
        conjecture_body(&self.statement)
    }

    fn reject(&mut self, at: Filter, reason: String) {
        self.stage = Stage::Rejected;
        self.rejected_at = Some(at);
        self.rejection_reason = Some(reason);
        self.pending_reason = None;
    }

    /// Record used to prompt provers, or the training record once a witness
    /// proof is known.
    pub fn as_record(&self, parent: &TheoremRecord) -> TheoremRecord {
        let proof = self.witness_proof.clone().unwrap_or_default();
        let mut r = TheoremRecord::new(parent.source_path.clone(), parent.header.clone(), self.body(), proof, None, 0);
        r.category = parent.category;
        r
    }
}

/// Strips a trailing proof placeholder or proof from a declaration.
pub fn conjecture_body(statement: &str) -> &str {
    let trimmed = statement.trim();
    if let Some(decl) = split_declarations(trimmed).into_iter().next() {
        if decl.offset == 0 && !decl.proof.is_empty() {
            return decl.statement.trim();
        }
    }
    let mut body = trimmed;
    for suffix in ["sorry", "by", ":="] {
        body = body.strip_suffix(suffix).map_or(body, str::trim_end);
    }
    body
}

/// Declaration text ending in exactly one `:= sorry`.
pub fn normalize_conjecture(statement: &str) -> String {
    format!("{} := sorry", conjecture_body(statement))
}

/// Dedup key: whitespace-collapsed statement without its placeholder.
pub fn dedup_key(statement: &str) -> String {
    normalize_whitespace(conjecture_body(statement))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyError {
    NoJson,
    MissingKey,
}

impl core::fmt::Display for ReplyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ReplyError::NoJson => f.write_str("reply contains no JSON object"),
            ReplyError::MissingKey => f.write_str("reply has no \"conjectures\" list"),
        }
    }
}

fn statements_of(value: &Value) -> Option<Vec<String>> {
    let list = value.get("conjectures")?.as_array()?;
    Some(
        list.iter()
            .filter_map(|item| match item {
                Value::String(s) => Some(s.clone()),
                other => other.get("statement")?.as_str().map(String::from),
            })
            .filter(|s| !s.trim().is_empty())
            .collect(),
    )
}

/// Statements from a generator reply. The dictionary may be wrapped in prose
/// or a code fence; the first object with a `conjectures` list wins.
pub fn parse_conjecture_reply(reply: &str) -> core::result::Result<Vec<String>, ReplyError> {
    let mut saw_json = false;
    for (at, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[at..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            saw_json = true;
            if let Some(list) = statements_of(&value) {
                return Ok(list);
            }
        }
    }
    Err(if saw_json { ReplyError::MissingKey } else { ReplyError::NoJson })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Generation {
    pub conjectures: Vec<Conjecture>,
    /// Why the seed produced nothing, if it did not.
    pub failure: Option<String>,
}

/// Asks `source` for variants of `seed`. A malformed reply is re-requested
/// once; after that the seed yields nothing and the reason is returned.
pub fn generate_conjectures<S: CompletionSource + ?Sized>(source: &S, seed: &TheoremRecord, k: usize) -> Result<Generation> {
    if k == 0 {
        return Err(Error::input("conjectures per seed must be at least 1"));
    }
    let prompt = render_prompt(seed, PromptStyle::ConjectureGen)?;
    let mut failure = String::new();
    for _ in 0..2 {
        let attempt = attempts_for_prompt(source, &seed.id, &prompt, 1, 0, false)?;
        let reply = attempt.first().map_or("", |a| a.completion.as_str());
        match parse_conjecture_reply(reply) {
            Ok(statements) => {
                let conjectures = statements
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, s)| Conjecture::new(&seed.id, i, s))
                    .filter(|c| !c.body().is_empty())
                    .collect();
                return Ok(Generation { conjectures, failure: None });
            }
            Err(e) => failure = format!("seed {}: {e}", seed.id),
        }
    }
    Ok(Generation { conjectures: Vec::new(), failure: Some(failure) })
}

/// Per-filter outcome counts; deltas from independent seed shards add up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageDelta {
    pub survived: usize,
    pub rejected: usize,
    pub pending: usize,
}

impl core::ops::Add for StageDelta {
    type Output = StageDelta;
    fn add(self, o: StageDelta) -> StageDelta {
        StageDelta { survived: self.survived + o.survived, rejected: self.rejected + o.rejected, pending: self.pending + o.pending }
    }
}

fn parent_of<'a>(parents: &'a BTreeMap<String, TheoremRecord>, c: &Conjecture) -> Result<&'a TheoremRecord> {
    parents
        .get(&c.parent_id)
        .ok_or_else(|| Error::input(format!("conjecture {}: parent {} not found", c.conjecture_id, c.parent_id)))
}

/// Well-formedness filter over conjectures at `Generated`. Toolchain
/// errors leave a conjecture at `Generated` with a pending reason.
pub fn filter_syntax<B: Backend + ?Sized>(
    conjectures: &mut [Conjecture],
    parents: &BTreeMap<String, TheoremRecord>,
    backend: &B,
    timeout_secs: f64,
) -> Result<StageDelta> {
    let mut idx = Vec::new();
    let mut jobs = Vec::new();
    for (i, c) in conjectures.iter().enumerate().filter(|(_, c)| c.stage == Stage::Generated) {
        let parent = parent_of(parents, c)?;
        jobs.push(syntax_job(c.conjecture_id.clone(), parent.header.clone(), c.body(), timeout_secs)?);
        idx.push(i);
    }
    let mut delta = StageDelta::default();
    for (i, verdict) in idx.into_iter().zip(check_syntax_batch(backend, &jobs)) {
        let c = &mut conjectures[i];
        match verdict.status {
            Status::Pass => {
                c.stage = Stage::SyntaxOk;
                c.pending_reason = None;
                delta.survived += 1;
            }
            Status::ToolchainError => {
                c.pending_reason = Some(format!("toolchain error: {}", verdict.diagnostics));
                delta.pending += 1;
            }
            status => {
                c.reject(Filter::Syntax, format!("{status:?}: {}", verdict.diagnostics.trim()));
                delta.rejected += 1;
            }
        }
    }
    Ok(delta)
}

/// A prover and the number of proofs it contributes per conjecture.
pub struct ProverShare<'a> {
    pub source: &'a dyn CompletionSource,
    pub budget: usize,
}

/// Provability filter over conjectures at `SyntaxOk`: a conjecture is
/// provable when any sampled proof verifies. Provers run in order, each
/// only on conjectures still unproven, so sampling stops at the first prover
/// that succeeds; the witness is the first passing attempt in (prover,
/// attempt) order. Conjectures whose every request failed stay at
/// `SyntaxOk` with a pending reason.
pub fn filter_provable<B: Backend + ?Sized>(
    conjectures: &mut [Conjecture],
    parents: &BTreeMap<String, TheoremRecord>,
    provers: &[ProverShare<'_>],
    backend: &B,
    timeout_secs: f64,
) -> Result<StageDelta> {
    if provers.iter().map(|p| p.budget).sum::<usize>() == 0 {
        return Err(Error::config("provability filter needs at least one proof per conjecture"));
    }
    let open: Vec<usize> = (0..conjectures.len()).filter(|&i| conjectures[i].stage == Stage::SyntaxOk).collect();
    let records: Vec<TheoremRecord> =
        open.iter().map(|&i| parent_of(parents, &conjectures[i]).map(|p| conjectures[i].as_record(p))).collect::<Result<_>>()?;
    let mut proven: BTreeMap<usize, String> = BTreeMap::new();
    let mut answered = alloc::vec![false; open.len()];
    let mut offset = 0;
    for prover in provers.iter().filter(|p| p.budget > 0) {
        let todo: Vec<usize> = (0..open.len()).filter(|k| !proven.contains_key(k)).collect();
        if todo.is_empty() {
            break;
        }
        let batch: Vec<&TheoremRecord> = todo.iter().map(|&k| &records[k]).collect();
        let sampled = sample_many(prover.source, &batch, prover.budget, offset)?;
        let mut jobs: Vec<(usize, ProofAttempt, VerificationJob)> = Vec::new();
        for (&k, attempts) in todo.iter().zip(sampled) {
            for a in attempts {
                if a.transport_failed() {
                    continue;
                }
                answered[k] = true;
                let proof = extract_proof(&a.completion, &records[k].statement, prover.source.style()).unwrap_or_default();
                let job = VerificationJob::new(a.job_id(), records[k].header.clone(), records[k].statement.clone(), proof, timeout_secs)?;
                jobs.push((k, a, job));
            }
        }
        let plain: Vec<VerificationJob> = jobs.iter().map(|(_, _, j)| j.clone()).collect();
        for ((k, _, job), verdict) in jobs.into_iter().zip(verify_batch(backend, &plain)) {
            if verdict.passed() {
                proven.entry(k).or_insert(job.proof_candidate);
            }
        }
        offset += prover.budget;
    }
    let mut delta = StageDelta::default();
    for (k, &i) in open.iter().enumerate() {
        let c = &mut conjectures[i];
        if let Some(proof) = proven.remove(&k) {
            c.stage = Stage::Provable;
            c.witness_proof = Some(proof);
            c.pending_reason = None;
            delta.survived += 1;
        } else if !answered[k] {
            c.pending_reason = Some("every proof request failed".to_string());
            delta.pending += 1;
        } else {
            c.reject(Filter::Provability, format!("no verified proof in {offset} attempts"));
            delta.rejected += 1;
        }
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assembly {
    pub records: Vec<TheoremRecord>,
    /// Provable conjectures dropped as duplicates of a seed or of an
    /// earlier conjecture.
    pub duplicates: usize,
}

/// Seeds followed by provable conjectures promoted to training records.
pub fn assemble_training_set(
    seeds: &[TheoremRecord],
    conjectures: &[Conjecture],
    parents: &BTreeMap<String, TheoremRecord>,
    estimator: &dyn TokenEstimator,
) -> Result<Assembly> {
    let mut seen: BTreeSet<String> = seeds.iter().map(|s| dedup_key(&s.statement)).collect();
    let mut out = Assembly { records: seeds.to_vec(), duplicates: 0 };
    for r in &mut out.records {
        r.split = Split::Train;
    }
    for c in conjectures.iter().filter(|c| c.stage == Stage::Provable) {
        if !seen.insert(dedup_key(&c.statement)) {
            out.duplicates += 1;
            continue;
        }
        let mut r = c.as_record(parent_of(parents, c)?);
        r.token_len = estimator.estimate(&r.header) + estimator.estimate(&r.statement) + estimator.estimate(&r.proof);
        r.split = Split::Train;
        out.records.push(r);
    }
    Ok(out)
}

/// Retention accounting for one pipeline run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineLedger {
    pub n_seeds: usize,
    pub n_generated: usize,
    pub n_syntax_ok: usize,
    pub n_provable: usize,
    pub n_rejected_syntax: usize,
    pub n_rejected_provability: usize,
    pub n_pending: usize,
    /// Seeds whose generator reply never parsed.
    pub n_failed_seeds: usize,
    /// `n_syntax_ok / n_generated`.
    pub retention_syntax: f64,
    /// `n_provable / n_generated`.
    pub yield_overall: f64,
    /// Provable conjectures left after deduplication.
    pub n_provable_unique: Option<usize>,
    pub n_training: Option<usize>,
    /// Proofs per conjecture contributed by each prover.
    pub prover_budget: Vec<(String, usize)>,
}

impl PipelineLedger {
    pub fn tally(n_seeds: usize, conjectures: &[Conjecture]) -> Self {
        let mut l = PipelineLedger { n_seeds, n_generated: conjectures.len(), ..Default::default() };
        for c in conjectures {
            match (c.stage, c.rejected_at) {
                (Stage::Provable, _) => l.n_provable += 1,
                (Stage::Rejected, Some(Filter::Syntax)) => l.n_rejected_syntax += 1,
                (Stage::Rejected, _) => l.n_rejected_provability += 1,
                _ => {}
            }
            if c.stage == Stage::Generated || (c.stage == Stage::SyntaxOk && c.pending_reason.is_some()) {
                l.n_pending += 1;
            }
        }
        l.n_syntax_ok = conjectures
            .iter()
            .filter(|c| matches!(c.stage, Stage::SyntaxOk | Stage::Provable) || c.rejected_at == Some(Filter::Provability))
            .count();
        let ratio = |n: usize| if l.n_generated == 0 { 0.0 } else { n as f64 / l.n_generated as f64 };
        l.retention_syntax = ratio(l.n_syntax_ok);
        l.yield_overall = ratio(l.n_provable);
        l
    }

    pub fn retention_display(&self) -> String {
        percent_only(self.n_syntax_ok, self.n_generated)
    }

    pub fn yield_display(&self) -> String {
        percent_only(self.n_provable, self.n_generated)
    }

    pub fn render_text(&self) -> String {
        let mut rows: Vec<(String, String)> = alloc::vec![
            ("seeds".into(), self.n_seeds.to_string()),
            ("generated".into(), self.n_generated.to_string()),
            ("syntax ok".into(), format!("{}  (retention {})", self.n_syntax_ok, self.retention_display())),
            ("provable".into(), format!("{}  (yield {})", self.n_provable, self.yield_display())),
            ("rejected by syntax".into(), self.n_rejected_syntax.to_string()),
            ("rejected by provability".into(), self.n_rejected_provability.to_string()),
            ("pending re-run".into(), self.n_pending.to_string()),
            ("seeds without reply".into(), self.n_failed_seeds.to_string()),
        ];
        if let Some(n) = self.n_provable_unique {
            rows.push(("provable after dedup".into(), n.to_string()));
        }
        if let Some(n) = self.n_training {
            rows.push(("training records".into(), n.to_string()));
        }
        if !self.prover_budget.is_empty() {
            let parts: Vec<String> = self.prover_budget.iter().map(|(n, b)| format!("{n}={b}")).collect();
            rows.push(("prover budget".into(), parts.join(" ")));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        v["retention_syntax_percent"] = json!(self.retention_display());
        v["yield_overall_percent"] = json!(self.yield_display());
        v
    }
}

fn percent_only(n: usize, total: usize) -> String {
    let s = Score { solved: n, total };
    let shown = s.display();
    shown.rsplit_once(" = ").map_or(shown.clone(), |(_, p)| p.to_string())
}

/// Everything produced by [`run_conjecture_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub conjectures: Vec<Conjecture>,
    pub assembly: Assembly,
    pub ledger: PipelineLedger,
    pub failures: Vec<String>,
}

/// Generation, both filters and assembly over `seeds`.
pub fn run_conjecture_pipeline<B: Backend + ?Sized>(
    seeds: &[TheoremRecord],
    generator: &dyn CompletionSource,
    per_seed: usize,
    provers: &[ProverShare<'_>],
    backend: &B,
    timeout_secs: f64,
    estimator: &dyn TokenEstimator,
) -> Result<PipelineRun> {
    let parents: BTreeMap<String, TheoremRecord> = seeds.iter().map(|s| (s.id.clone(), s.clone())).collect();
    let mut conjectures = Vec::new();
    let mut failures = Vec::new();
    for seed in seeds {
        let g = generate_conjectures(generator, seed, per_seed)?;
        conjectures.extend(g.conjectures);
        failures.extend(g.failure);
    }
    filter_syntax(&mut conjectures, &parents, backend, timeout_secs)?;
    filter_provable(&mut conjectures, &parents, provers, backend, timeout_secs)?;
    let assembly = assemble_training_set(seeds, &conjectures, &parents, estimator)?;
    let mut ledger = PipelineLedger::tally(seeds.len(), &conjectures);
    ledger.n_failed_seeds = failures.len();
    ledger.n_provable_unique = Some(ledger.n_provable - assembly.duplicates);
    ledger.n_training = Some(assembly.records.len());
    ledger.prover_budget = provers.iter().map(|p| (p.source.name().to_string(), p.budget)).collect();
    Ok(PipelineRun { conjectures, assembly, ledger, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::MockSource;
    use crate::tokens::WhitespaceEstimator;
    use crate::verify::{CheckMode, StubBackend, StubRule, StubTable};

    #[test]
    fn normalization() {
        assert_eq!(normalize_conjecture("lemma a : x = x"), "lemma a : x = x := sorry");
        assert_eq!(normalize_conjecture("lemma a : x = x := sorry"), "lemma a : x = x := sorry");
        assert_eq!(normalize_conjecture("lemma a : x = x := by\n  sorry"), "lemma a : x = x := sorry");
        assert_eq!(normalize_conjecture("lemma a : x = x := by simp"), "lemma a : x = x := sorry");
        assert_eq!(dedup_key("lemma  a :\n  x = x := sorry"), dedup_key("lemma a : x = x"));
    }

    #[test]
    fn reply_parsing() {
        let reply = "Here you go:\n```json\n{\"conjectures\": [{\"statement\": \"lemma a : True\"}, {\"statement\": \"lemma b : {x | x} = ∅ := sorry\"}]}\n```\nThanks";
        assert_eq!(parse_conjecture_reply(reply).unwrap(), ["lemma a : True", "lemma b : {x | x} = ∅ := sorry"]);
        assert_eq!(parse_conjecture_reply("{\"items\": []}"), Err(ReplyError::MissingKey));
        assert_eq!(parse_conjecture_reply("no idea"), Err(ReplyError::NoJson));
        assert_eq!(parse_conjecture_reply("{\"conjectures\": [\"lemma c : True\"]}").unwrap(), ["lemma c : True"]);
    }

    fn seed() -> TheoremRecord {
        let mut r = TheoremRecord::new(
            "Relativity/Mod.lean",
            "import Mathlib\n",
            "lemma sub_mulVec (M N : Matrix n n ℝ) (v : n → ℝ) : (M - N) *ᵥ v = M *ᵥ v - N *ᵥ v",
            ":= sub_mulVec M N v",
            Some("/-- Differences distribute. -/".into()),
            20,
        );
        r.category = crate::record::Category::Relativity;
        r
    }

    fn reply(statements: &[&str]) -> String {
        let list: Vec<Value> = statements.iter().map(|s| json!({ "statement": s })).collect();
        json!({ "conjectures": list }).to_string()
    }

    #[test]
    fn generation_caps_and_normalizes() {
        let many: Vec<String> = (0..12).map(|i| format!("lemma c{i} : True")).collect();
        let refs: Vec<&str> = many.iter().map(String::as_str).collect();
        let gen = MockSource::fixed("gen", PromptStyle::ConjectureGen, reply(&refs));
        let out = generate_conjectures(&gen, &seed(), 10).unwrap();
        assert_eq!(out.conjectures.len(), 10);
        assert!(out.conjectures.iter().all(|c| c.statement.ends_with(":= sorry") && c.stage == Stage::Generated));
        let ids: BTreeSet<&str> = out.conjectures.iter().map(|c| c.conjecture_id.as_str()).collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn malformed_reply_yields_nothing() {
        let gen = MockSource::fixed("gen", PromptStyle::ConjectureGen, "{\"lemmas\": []}");
        let out = generate_conjectures(&gen, &seed(), 10).unwrap();
        assert!(out.conjectures.is_empty());
        assert!(out.failure.unwrap().contains("conjectures"));
    }

    fn stub() -> StubBackend {
        let rule = |mode, stmt: Option<&str>, proof: Option<&str>| StubRule {
            mode: Some(mode),
            statement_contains: stmt.map(String::from),
            proof_contains: proof.map(String::from),
            header_contains: None,
            status: Status::Pass,
            diagnostics: String::new(),
        };
        StubBackend::new(StubTable {
            default: Status::Fail,
            entries: Vec::new(),
            rules: alloc::vec![rule(CheckMode::Syntax, Some("ok_"), None), rule(CheckMode::Proof, None, Some("good"))],
        })
    }

    #[test]
    fn end_to_end_on_mocks() {
        let gen = MockSource::fixed(
            "gen",
            PromptStyle::ConjectureGen,
            reply(&["lemma ok_a : True", "lemma ok_b : False", "lemma bad_c : True", "lemma ok_a : True := sorry"]),
        );
        let a = MockSource::fixed("A", PromptStyle::Deepseek, " by bad");
        let b = MockSource::new("B", PromptStyle::Deepseek).with_rule(crate::source::MockRule {
            contains: "ok_a".into(),
            completions: alloc::vec![" by bad".into(), " by good".into()],
            logprob: None,
            fail: None,
        });
        let provers = [ProverShare { source: &a, budget: 3 }, ProverShare { source: &b, budget: 2 }];
        let run = run_conjecture_pipeline(&[seed()], &gen, 10, &provers, &stub(), 10.0, &WhitespaceEstimator).unwrap();
        let l = &run.ledger;
        assert_eq!((l.n_generated, l.n_syntax_ok, l.n_provable), (4, 3, 2));
        assert_eq!((l.n_rejected_syntax, l.n_rejected_provability, l.n_pending), (1, 1, 0));
        assert_eq!(run.assembly.duplicates, 1);
        assert_eq!(run.assembly.records.len(), 2);
        let promoted = &run.assembly.records[1];
        assert_eq!(promoted.statement, "lemma ok_a : True");
        assert_eq!(promoted.proof, ":= by good");
        assert_eq!(promoted.category, crate::record::Category::Relativity);
        let witness = run.conjectures.iter().find(|c| c.stage == Stage::Provable).unwrap();
        assert_eq!(witness.witness_proof.as_deref(), Some(":= by good"));
        assert_eq!(l.prover_budget, [("A".to_string(), 3), ("B".to_string(), 2)]);
        assert_eq!(l.retention_display(), "75.0%");
        assert!(l.render_text().contains("yield 50.0%"));
    }

    #[test]
    fn empty_inputs() {
        let parents = BTreeMap::new();
        let d = filter_syntax(&mut [], &parents, &stub(), 1.0).unwrap();
        assert_eq!(d, StageDelta::default());
        let out = assemble_training_set(&[seed()], &[], &parents, &WhitespaceEstimator).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].split, Split::Train);
    }

    #[test]
    fn transport_failures_leave_conjectures_pending() {
        let s = seed();
        let mut parents = BTreeMap::new();
        parents.insert(s.id.clone(), s.clone());
        let mut cs = alloc::vec![Conjecture::new(&s.id, 0, "lemma ok_x : True")];
        cs[0].stage = Stage::SyntaxOk;
        let down = MockSource::new("down", PromptStyle::Deepseek).with_rule(crate::source::MockRule {
            contains: "ok_x".into(),
            completions: Vec::new(),
            logprob: None,
            fail: Some(crate::source::MockFailure::Transport),
        });
        let d = filter_provable(&mut cs, &parents, &[ProverShare { source: &down, budget: 4 }], &stub(), 1.0).unwrap();
        assert_eq!(d.pending, 1);
        assert_eq!(cs[0].stage, Stage::SyntaxOk);
        assert!(cs[0].pending_reason.is_some());
    }
}
