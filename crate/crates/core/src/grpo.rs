//! Verifiable rewards, group-relative advantages, the clipped surrogate and
//! the KL penalty, plus assembly of training batches for an external trainer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{render_prompt, PromptStyle};
use crate::record::TheoremRecord;
use crate::source::ScoredAttempt;
use crate::verify::{Status, VerificationVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    /// Groups per exported training batch.
    pub batch_size: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig { group_size: 16, clip_eps: 0.2, kl_beta: 0.0, std_floor: 1e-8, batch_size: 256 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size must be at least 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps must lie in (0, 1)"));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::config("kl_beta must be a finite nonnegative number"));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::config("std_floor must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// 1 for a passing verdict, 0 for anything else. Forbidden keywords are
/// already a distinct non-passing status, so they score 0.
pub fn reward_for(status: Status) -> f64 {
    if status == Status::Pass {
        1.0
    } else {
        0.0
    }
}

pub fn reward(verdict: &VerificationVerdict) -> f64 {
    reward_for(verdict.status)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    libm::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

/// `(r - mean) / std` for any group length; all zeros when the spread is
/// below `std_floor`, which covers groups where every sample scored alike.
pub fn normalized_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let m = mean(rewards);
    let std = pop_std(rewards);
    if std < std_floor {
        return alloc::vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - m) / std).collect()
}

pub fn advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>> {
    if rewards.len() != cfg.group_size {
        return Err(Error::input(format!("expected {} rewards, got {}", cfg.group_size, rewards.len())));
    }
    Ok(normalized_advantages(rewards, cfg.std_floor))
}

/// `min(w·A, clip(w, 1-ε, 1+ε)·A)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `exp(Δ) - Δ - 1`, accurate near zero.
pub fn kl_estimate(delta: f64) -> f64 {
    if delta.abs() < 1e-3 {
        let d2 = delta * delta;
        d2 * (0.5 + delta * (1.0 / 6.0 + delta * (1.0 / 24.0 + delta / 120.0)))
    } else {
        libm::expm1(delta) - delta
    }
}

/// Per-token log-probabilities of each completion under the three policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLogprobs {
    pub current: Vec<Vec<f64>>,
    pub old: Vec<Vec<f64>>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub prompt_id: String,
    pub prompt_text: String,
    pub completions: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Every reward was equal, so every advantage is zero.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<GroupLogprobs>,
}

impl GrpoGroup {
    /// Group with rewards taken from verdicts and advantages computed.
    pub fn from_rewards(
        prompt_id: impl Into<String>,
        prompt_text: impl Into<String>,
        completions: Vec<String>,
        rewards: Vec<f64>,
        cfg: &GrpoConfig,
    ) -> Result<Self> {
        if completions.len() != rewards.len() {
            return Err(Error::input("completions and rewards differ in length"));
        }
        let advantages = advantages(&rewards, cfg)?;
        Ok(GrpoGroup {
            prompt_id: prompt_id.into(),
            prompt_text: prompt_text.into(),
            degenerate: pop_std(&rewards) < cfg.std_floor,
            completions,
            rewards,
            advantages,
            logprobs: None,
        })
    }

    fn len(&self) -> usize {
        self.advantages.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTerms {
    pub per_token: Vec<Vec<f64>>,
    /// `(1/G) Σ_i (1/|y_i|) Σ_t term`.
    pub group_value: f64,
}

fn check_arrays<'a>(group: &GrpoGroup, arrays: &'a [Vec<f64>], what: &str) -> Result<&'a [Vec<f64>]> {
    if arrays.len() != group.len() {
        return Err(Error::input(format!(
            "group {}: {what} logprobs cover {} completions, expected {}",
            group.prompt_id,
            arrays.len(),
            group.len()
        )));
    }
    Ok(arrays)
}

/// Mean over completions of each completion's per-token mean; an empty
/// completion contributes 0.
fn double_mean(per_token: &[Vec<f64>]) -> f64 {
    if per_token.is_empty() {
        return 0.0;
    }
    let total: f64 = per_token
        .iter()
        .map(|ts| if ts.is_empty() { 0.0 } else { ts.iter().sum::<f64>() / ts.len() as f64 })
        .sum();
    total / per_token.len() as f64
}

pub fn surrogate_terms(group: &GrpoGroup, cfg: &GrpoConfig) -> Result<SurrogateTerms> {
    let lp = group.logprobs.as_ref().ok_or_else(|| Error::input("group lacks current/old logprobs"))?;
    let current = check_arrays(group, &lp.current, "current")?;
    let old = check_arrays(group, &lp.old, "old")?;
    let mut per_token = Vec::with_capacity(group.len());
    for (i, (cur, old)) in current.iter().zip(old).enumerate() {
        if cur.len() != old.len() {
            return Err(Error::input(format!("completion {i}: current and old logprob lengths differ")));
        }
        let a = group.advantages[i];
        per_token.push(cur.iter().zip(old).map(|(c, o)| clipped_term(libm::exp(c - o), a, cfg.clip_eps)).collect::<Vec<_>>());
    }
    let group_value = double_mean(&per_token);
    Ok(SurrogateTerms { per_token, group_value })
}

/// `β` times the doubly-normalized mean of `exp(Δ) - Δ - 1`, with
/// `Δ = log π_ref - log π_θ`. Zero whenever `β = 0`.
pub fn kl_penalty(group: &GrpoGroup, cfg: &GrpoConfig) -> Result<f64> {
    if cfg.kl_beta == 0.0 {
        return Ok(0.0);
    }
    let lp = group.logprobs.as_ref().ok_or_else(|| Error::input("group lacks logprobs"))?;
    let reference = lp.reference.as_ref().ok_or_else(|| Error::input("kl_beta > 0 needs reference logprobs"))?;
    let current = check_arrays(group, &lp.current, "current")?;
    let reference = check_arrays(group, reference, "reference")?;
    let mut per_token = Vec::with_capacity(group.len());
    for (i, (cur, rf)) in current.iter().zip(reference).enumerate() {
        if cur.len() != rf.len() {
            return Err(Error::input(format!("completion {i}: current and reference logprob lengths differ")));
        }
        per_token.push(cur.iter().zip(rf).map(|(c, r)| kl_estimate(r - c)).collect::<Vec<_>>());
    }
    Ok(cfg.kl_beta * double_mean(&per_token))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub config: GrpoConfig,
    /// Curriculum index of the first group in the batch.
    pub curriculum_position: usize,
    pub corpus_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub index: usize,
    pub metadata: BatchMetadata,
    pub groups: Vec<GrpoGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub record_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchBuild {
    pub batches: Vec<TrainingBatch>,
    pub skipped: Vec<SkippedRecord>,
}

impl BatchBuild {
    pub fn group_count(&self) -> usize {
        self.batches.iter().map(|b| b.groups.len()).sum()
    }
}

fn group_for(
    record: &TheoremRecord,
    scored: &[ScoredAttempt],
    style: PromptStyle,
    cfg: &GrpoConfig,
) -> core::result::Result<GrpoGroup, String> {
    if scored.len() != cfg.group_size {
        return Err(format!("{} scored attempts, group size is {}", scored.len(), cfg.group_size));
    }
    let prompt = render_prompt(record, style).map_err(|e| format!("{e}"))?;
    let completions = scored.iter().map(|s| s.attempt.completion.clone()).collect();
    let rewards = scored.iter().map(|s| reward(&s.verdict)).collect();
    let mut group = GrpoGroup::from_rewards(record.id.clone(), prompt.text, completions, rewards, cfg)
        .map_err(|e| format!("{e}"))?;
    let sampled: Option<Vec<Vec<f64>>> = scored
        .iter()
        .map(|s| s.attempt.logprobs.as_ref().map(|lp| lp.iter().map(|t| t.logprob).collect()))
        .collect();
    // Samples come from the policy being trained, so at export time the
    // current and old policies coincide.
    group.logprobs = sampled.map(|old| GroupLogprobs { current: old.clone(), old, reference: None });
    Ok(group)
}

/// One group per record in the given (curriculum) order, chunked into
/// batches of `cfg.batch_size`. Records without exactly `group_size` scored
/// attempts are skipped and reported.
pub fn build_batches(
    ordered: &[TheoremRecord],
    scored: &BTreeMap<String, Vec<ScoredAttempt>>,
    style: PromptStyle,
    cfg: &GrpoConfig,
    corpus_hash: &str,
) -> Result<BatchBuild> {
    cfg.validate()?;
    let mut build = BatchBuild::default();
    let mut groups = Vec::new();
    for record in ordered {
        let attempts = scored.get(&record.id).map_or(&[][..], Vec::as_slice);
        match group_for(record, attempts, style, cfg) {
            Ok(g) => groups.push(g),
            Err(reason) => build.skipped.push(SkippedRecord { record_id: record.id.clone(), reason }),
        }
    }
    let mut position = 0;
    let mut groups = groups.into_iter().peekable();
    while groups.peek().is_some() {
        let chunk: Vec<GrpoGroup> = groups.by_ref().take(cfg.batch_size).collect();
        let index = build.batches.len();
        let len = chunk.len();
        build.batches.push(TrainingBatch {
            index,
            metadata: BatchMetadata { config: *cfg, curriculum_position: position, corpus_hash: corpus_hash.into() },
            groups: chunk,
        });
        position += len;
    }
    Ok(build)
}
