//! Completion sources (prover and generator endpoints) and proof sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{extract_proof, render_prompt, PromptStyle, RenderedPrompt};
use crate::record::TheoremRecord;
use crate::verify::{VerificationJob, VerificationVerdict};

/// `finish_reason` of an attempt whose request never succeeded.
pub const TRANSPORT_FAILURE: &str = "transport_failure";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Natural-log probability.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SourceError {
    /// Credentials were rejected; `env_var` names where they came from.
    #[error("authentication rejected (check {env_var})")]
    Auth { env_var: String },
    /// Network or server failure that survived the retry policy.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unsupported request: {0}")]
    Capability(String),
    #[error("bad endpoint configuration: {0}")]
    Config(String),
}

/// One prover or generator endpoint.
pub trait CompletionSource {
    fn name(&self) -> &str;

    /// Prompt layout this endpoint expects.
    fn style(&self) -> PromptStyle;

    fn supports_logprobs(&self) -> bool;

    /// Draws `n` independent samples. The outer error aborts the whole
    /// request (bad credentials, bad configuration); inner errors fail single
    /// slots.
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        n: usize,
        logprobs: bool,
    ) -> core::result::Result<Vec<core::result::Result<Completion, SourceError>>, SourceError>;

    /// [`complete`](Self::complete) for many prompts; results align with
    /// `prompts`. Network clients override this to overlap requests.
    fn complete_many(&self, prompts: &[RenderedPrompt], n: usize, logprobs: bool) -> Vec<SlotResults> {
        prompts.iter().map(|p| self.complete(p, n, logprobs)).collect()
    }
}

/// Outcome of one request: per-sample results, or a request-wide failure.
pub type SlotResults = core::result::Result<Vec<core::result::Result<Completion, SourceError>>, SourceError>;

impl<S: CompletionSource + ?Sized> CompletionSource for &S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn style(&self) -> PromptStyle {
        (**self).style()
    }
    fn supports_logprobs(&self) -> bool {
        (**self).supports_logprobs()
    }
    fn complete(
        &self,
        prompt: &RenderedPrompt,
        n: usize,
        logprobs: bool,
    ) -> core::result::Result<Vec<core::result::Result<Completion, SourceError>>, SourceError> {
        (**self).complete(prompt, n, logprobs)
    }
    fn complete_many(&self, prompts: &[RenderedPrompt], n: usize, logprobs: bool) -> Vec<SlotResults> {
        (**self).complete_many(prompts, n, logprobs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofAttempt {
    pub theorem_id: String,
    pub attempt_index: usize,
    pub prover_name: String,
    pub completion: String,
    pub finish_reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

impl ProofAttempt {
    pub fn transport_failed(&self) -> bool {
        self.finish_reason == TRANSPORT_FAILURE
    }

    pub fn logprob_sum(&self) -> Option<f64> {
        self.logprobs.as_ref().map(|lp| lp.iter().map(|t| t.logprob).sum())
    }

    /// `theorem_id/attempt_index`, the job id used for its verification.
    pub fn job_id(&self) -> String {
        format!("{}/{}", self.theorem_id, self.attempt_index)
    }
}

/// An attempt paired with its verification verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAttempt {
    pub attempt: ProofAttempt,
    pub verdict: VerificationVerdict,
}

/// Pairs attempts with verdicts by job id and groups them per theorem in
/// attempt order. Attempts without a verdict are left out and counted.
pub fn join_verdicts(
    attempts: Vec<ProofAttempt>,
    verdicts: Vec<VerificationVerdict>,
) -> (BTreeMap<String, Vec<ScoredAttempt>>, usize) {
    let mut by_job: BTreeMap<String, VerificationVerdict> =
        verdicts.into_iter().map(|v| (v.job_id.clone(), v)).collect();
    let mut grouped: BTreeMap<String, Vec<ScoredAttempt>> = BTreeMap::new();
    let mut unmatched = 0;
    for attempt in attempts {
        match by_job.remove(&attempt.job_id()) {
            Some(verdict) => grouped.entry(attempt.theorem_id.clone()).or_default().push(ScoredAttempt { attempt, verdict }),
            None => unmatched += 1,
        }
    }
    for list in grouped.values_mut() {
        list.sort_by_key(|s| s.attempt.attempt_index);
    }
    (grouped, unmatched)
}

fn lift(endpoint: &str, err: SourceError) -> Error {
    match err {
        SourceError::Auth { env_var } => Error::Auth { endpoint: endpoint.to_string(), env_var },
        SourceError::Capability(what) => Error::Capability { endpoint: endpoint.to_string(), what },
        SourceError::Config(msg) => Error::config(format!("endpoint {endpoint}: {msg}")),
        SourceError::Transport(msg) => Error::input(format!("endpoint {endpoint}: {msg}")),
    }
}

/// Sends `prompt` for `n` samples and turns every slot into an attempt
/// numbered from `first_index`. Failed slots become empty attempts marked
/// [`TRANSPORT_FAILURE`].
pub fn attempts_for_prompt<S: CompletionSource + ?Sized>(
    source: &S,
    theorem_id: &str,
    prompt: &RenderedPrompt,
    n: usize,
    first_index: usize,
    logprobs: bool,
) -> Result<Vec<ProofAttempt>> {
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    into_attempts(source.name(), theorem_id, source.complete(prompt, n, logprobs), n, first_index, logprobs)
}

fn into_attempts(
    name: &str,
    theorem_id: &str,
    slots: SlotResults,
    n: usize,
    first_index: usize,
    logprobs: bool,
) -> Result<Vec<ProofAttempt>> {
    let slots = match slots {
        Ok(slots) => slots,
        Err(SourceError::Transport(msg)) => (0..n).map(|_| Err(SourceError::Transport(msg.clone()))).collect(),
        Err(e) => return Err(lift(name, e)),
    };
    let mut out = Vec::with_capacity(n);
    for (offset, slot) in slots.into_iter().take(n).enumerate() {
        let attempt_index = first_index + offset;
        let attempt = match slot {
            Ok(c) => ProofAttempt {
                theorem_id: theorem_id.to_string(),
                attempt_index,
                prover_name: name.to_string(),
                completion: c.text,
                finish_reason: c.finish_reason,
                logprobs: if logprobs { c.logprobs } else { None },
            },
            Err(SourceError::Transport(_)) => ProofAttempt {
                theorem_id: theorem_id.to_string(),
                attempt_index,
                prover_name: name.to_string(),
                completion: String::new(),
                finish_reason: TRANSPORT_FAILURE.to_string(),
                logprobs: None,
            },
            Err(other) => return Err(lift(name, other)),
        };
        out.push(attempt);
    }
    Ok(out)
}

/// Samples `n` proofs of `record` using the endpoint's own prompt style.
pub fn sample_proofs<S: CompletionSource + ?Sized>(
    source: &S,
    record: &TheoremRecord,
    n: usize,
    first_index: usize,
) -> Result<Vec<ProofAttempt>> {
    let prompt = render_prompt(record, source.style())?;
    attempts_for_prompt(source, &record.id, &prompt, n, first_index, source.supports_logprobs())
}

/// [`sample_proofs`] over many records through one
/// [`CompletionSource::complete_many`] call; output aligns with `records`.
pub fn sample_many<S: CompletionSource + ?Sized>(
    source: &S,
    records: &[&TheoremRecord],
    n: usize,
    first_index: usize,
) -> Result<Vec<Vec<ProofAttempt>>> {
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    let prompts = records.iter().map(|r| render_prompt(r, source.style())).collect::<Result<Vec<_>>>()?;
    let logprobs = source.supports_logprobs();
    let slots = source.complete_many(&prompts, n, logprobs);
    records
        .iter()
        .zip(slots)
        .map(|(r, slot)| into_attempts(source.name(), &r.id, slot, n, first_index, logprobs))
        .collect()
}

/// Like [`sample_proofs`] but token log-probabilities are mandatory. An
/// endpoint without them is refused before any request is made.
pub fn complete_with_logprobs<S: CompletionSource + ?Sized>(
    source: &S,
    prompt_id: &str,
    prompt: &RenderedPrompt,
    n: usize,
) -> Result<Vec<ProofAttempt>> {
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    if !source.supports_logprobs() {
        return Err(Error::Capability {
            endpoint: source.name().to_string(),
            what: "token log-probabilities".to_string(),
        });
    }
    attempts_for_prompt(source, prompt_id, prompt, n, 0, true)
}

/// The verification job for one attempt: the proof recovered from the
/// completion for `style`, checked against the record it answers. Nothing
/// recoverable leaves an empty proof, which verification fails outright.
pub fn attempt_job(record: &TheoremRecord, attempt: &ProofAttempt, style: PromptStyle, timeout_secs: f64) -> Result<VerificationJob> {
    let proof = extract_proof(&attempt.completion, &record.statement, style).unwrap_or_default();
    VerificationJob::new(attempt.job_id(), record.header.clone(), record.statement.clone(), proof, timeout_secs)
}

/// Near-even split of `n` samples over `endpoints`; the remainder goes to
/// the earliest endpoints, so 16 over 3 gives 6, 5, 5.
pub fn split_budget(n: usize, endpoints: usize) -> Vec<usize> {
    if endpoints == 0 {
        return Vec::new();
    }
    let (base, extra) = (n / endpoints, n % endpoints);
    (0..endpoints).map(|i| base + usize::from(i < extra)).collect()
}

/// Budget split honoring per-endpoint overrides; endpoints without one share
/// what is left via [`split_budget`]. The result always sums to `n`.
pub fn allocate_budget(n: usize, overrides: &[Option<usize>]) -> Result<Vec<usize>> {
    if overrides.is_empty() {
        return Err(Error::config("no endpoints to allocate a sample budget over"));
    }
    let fixed: usize = overrides.iter().flatten().sum();
    let free = overrides.iter().filter(|o| o.is_none()).count();
    if fixed > n || (free == 0 && fixed != n) {
        return Err(Error::config(format!("per-endpoint budgets sum to {fixed}, expected {n}")));
    }
    let mut shares = split_budget(n - fixed, free).into_iter();
    Ok(overrides.iter().map(|o| o.unwrap_or_else(|| shares.next().unwrap_or(0))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Transport,
    Auth,
}

/// Canned reply for prompts containing `contains`. Samples cycle through
/// `completions`; each whitespace-separated token is given `logprob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    #[serde(default)]
    pub completions: Vec<String>,
    #[serde(default)]
    pub logprob: Option<f64>,
    #[serde(default)]
    pub fail: Option<MockFailure>,
}

/// Deterministic offline endpoint driven by substring rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSource {
    pub name: String,
    #[serde(default)]
    pub style: PromptStyle,
    #[serde(default)]
    pub supports_logprobs: bool,
    #[serde(default = "default_logprob")]
    pub default_logprob: f64,
    /// Reply when no rule matches.
    #[serde(default)]
    pub default_completions: Vec<String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

fn default_logprob() -> f64 {
    -1.0
}

impl MockSource {
    pub fn new(name: impl Into<String>, style: PromptStyle) -> Self {
        MockSource {
            name: name.into(),
            style,
            supports_logprobs: false,
            default_logprob: default_logprob(),
            default_completions: Vec::new(),
            rules: Vec::new(),
        }
    }

    /// Mock answering every prompt with `text`.
    pub fn fixed(name: impl Into<String>, style: PromptStyle, text: impl Into<String>) -> Self {
        let mut mock = MockSource::new(name, style);
        mock.default_completions.push(text.into());
        mock
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    fn logprobs_for(text: &str, logprob: f64) -> Vec<TokenLogprob> {
        text.split_whitespace().map(|t| TokenLogprob { token: t.to_string(), logprob }).collect()
    }
}

impl CompletionSource for MockSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn style(&self) -> PromptStyle {
        self.style
    }

    fn supports_logprobs(&self) -> bool {
        self.supports_logprobs
    }

    fn complete(
        &self,
        prompt: &RenderedPrompt,
        n: usize,
        logprobs: bool,
    ) -> core::result::Result<Vec<core::result::Result<Completion, SourceError>>, SourceError> {
        let rule = self.rules.iter().find(|r| prompt.text.contains(&r.contains));
        match rule.and_then(|r| r.fail) {
            Some(MockFailure::Auth) => {
                return Err(SourceError::Auth { env_var: format!("{}_API_KEY", self.name.to_uppercase()) })
            }
            Some(MockFailure::Transport) => {
                return Ok((0..n).map(|_| Err(SourceError::Transport("mock transport failure".to_string()))).collect())
            }
            None => {}
        }
        let texts = rule.map_or(&self.default_completions, |r| &r.completions);
        let logprob = rule.and_then(|r| r.logprob).unwrap_or(self.default_logprob);
        Ok((0..n)
            .map(|i| {
                let text = if texts.is_empty() { String::new() } else { texts[i % texts.len()].clone() };
                let lp = (logprobs && self.supports_logprobs).then(|| Self::logprobs_for(&text, logprob));
                Ok(Completion { text, finish_reason: "stop".to_string(), logprobs: lp })
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(name: &str) -> TheoremRecord {
        TheoremRecord::new("A.lean", "import Mathlib\n", format!("theorem {name} : True"), ":= trivial", None, 5)
    }

    #[test]
    fn fixed_mock_repeats() {
        let mock = MockSource::fixed("m", PromptStyle::Deepseek, " by trivial");
        let attempts = sample_proofs(&mock, &record("t"), 16, 0).unwrap();
        assert_eq!(attempts.len(), 16);
        assert!(attempts.iter().all(|a| a.completion == " by trivial" && a.logprobs.is_none()));
        assert_eq!(attempts.iter().map(|a| a.attempt_index).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn budgets() {
        assert_eq!(split_budget(16, 3), [6, 5, 5]);
        assert_eq!(split_budget(16, 1), [16]);
        assert_eq!(split_budget(2, 4), [1, 1, 0, 0]);
        assert_eq!(allocate_budget(16, &[Some(10), None, None]).unwrap(), [10, 3, 3]);
        assert!(allocate_budget(16, &[Some(10), Some(2)]).is_err());
        assert!(allocate_budget(4, &[Some(10), None]).is_err());
        for n in 0..40 {
            for k in 1..7 {
                assert_eq!(split_budget(n, k).iter().sum::<usize>(), n);
            }
        }
    }

    #[test]
    fn logprob_capture() {
        let mut mock = MockSource::fixed("lp", PromptStyle::Deepseek, "a b c d e");
        mock.supports_logprobs = true;
        let prompt = render_prompt(&record("t"), PromptStyle::Deepseek).unwrap();
        let attempts = complete_with_logprobs(&mock, "p1", &prompt, 3).unwrap();
        for a in &attempts {
            assert_eq!(a.logprobs.as_ref().unwrap().len(), 5);
            assert_eq!(a.logprob_sum(), Some(-5.0));
            assert_eq!(a.theorem_id, "p1");
        }
        assert!(complete_with_logprobs(&mock, "p1", &prompt, 0).is_err());
        mock.supports_logprobs = false;
        assert!(matches!(complete_with_logprobs(&mock, "p1", &prompt, 2), Err(Error::Capability { .. })));
    }

    #[test]
    fn failures() {
        let mock = MockSource::new("m", PromptStyle::Deepseek)
            .with_rule(MockRule { contains: "flaky".into(), completions: vec![], logprob: None, fail: Some(MockFailure::Transport) })
            .with_rule(MockRule { contains: "locked".into(), completions: vec![], logprob: None, fail: Some(MockFailure::Auth) });
        let attempts = sample_proofs(&mock, &record("flaky"), 4, 0).unwrap();
        assert!(attempts.iter().all(|a| a.transport_failed() && a.completion.is_empty()));
        match sample_proofs(&mock, &record("locked"), 4, 0) {
            Err(Error::Auth { env_var, .. }) => assert_eq!(env_var, "M_API_KEY"),
            other => panic!("expected auth error, got {other:?}"),
        }
    }

    #[test]
    fn attempts_round_trip_json() {
        let a = ProofAttempt {
            theorem_id: "x".into(),
            attempt_index: 3,
            prover_name: "m".into(),
            completion: " by simp".into(),
            finish_reason: "stop".into(),
            logprobs: None,
        };
        let line = serde_json::to_string(&a).unwrap();
        assert!(!line.contains("logprobs"));
        assert_eq!(serde_json::from_str::<ProofAttempt>(&line).unwrap(), a);
        assert_eq!(a.job_id(), "x/3");
    }
}
