//! pass@k scoring, per-category accuracy tables and the perplexity probe.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::prompt::render_prompt;
use crate::record::TheoremRecord;
use crate::source::{complete_with_logprobs, CompletionSource, ProofAttempt};
use crate::verify::{Status, VerificationVerdict};

/// Row label for theorems that carry no category.
pub const UNLABELED: &str = "Unlabeled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Score {
    pub solved: usize,
    pub total: usize,
}

impl Score {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.solved as f64 / self.total as f64)
    }

    /// Percentage in tenths, rounded half up: 167/244 gives 684.
    pub fn percent_tenths(&self) -> Option<i64> {
        let (s, t) = (self.solved as i64, self.total as i64);
        (t > 0).then(|| (2000 * s + t) / (2 * t))
    }

    /// `167/244 = 68.4%`, or `0/0 = —` for an empty row.
    pub fn display(&self) -> String {
        match self.percent_tenths() {
            Some(p) => format!("{}/{} = {}", self.solved, self.total, format_tenths(p)),
            None => "0/0 = —".to_string(),
        }
    }

    fn add(&mut self, solved: bool) {
        self.total += 1;
        self.solved += usize::from(solved);
    }
}

fn format_tenths(p: i64) -> String {
    let sign = if p < 0 { "-" } else { "" };
    format!("{sign}{}.{}%", p.abs() / 10, p.abs() % 10)
}

/// Signed difference of two rendered percentages, e.g. `+2.4%`.
pub fn format_delta(current: &Score, baseline: &Score) -> Option<String> {
    let d = current.percent_tenths()? - baseline.percent_tenths()?;
    Some(if d >= 0 { format!("+{}", format_tenths(d)) } else { format_tenths(d) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub label: String,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub endpoint: String,
    pub k: usize,
    pub config_hash: String,
    /// Theorems scored with fewer than `k` verdicts.
    #[serde(default)]
    pub short_theorems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryScore>,
    pub overall: Score,
    pub metadata: EvalMetadata,
}

impl EvalReport {
    pub fn category(&self, label: &str) -> Option<&Score> {
        self.categories.iter().find(|c| c.label == label).map(|c| &c.score)
    }
}

/// Splits `theorem_id/attempt_index` job ids back into their parts.
pub fn parse_job_id(job_id: &str) -> Option<(&str, usize)> {
    let (theorem, index) = job_id.rsplit_once('/')?;
    Some((theorem, index.parse().ok()?))
}

/// Statuses per theorem, in attempt order. Verdicts whose job id does not
/// carry an attempt index are returned separately.
pub fn group_verdicts(verdicts: &[VerificationVerdict]) -> (BTreeMap<String, Vec<Status>>, Vec<String>) {
    let mut indexed: BTreeMap<String, Vec<(usize, Status)>> = BTreeMap::new();
    let mut malformed = Vec::new();
    for v in verdicts {
        match parse_job_id(&v.job_id) {
            Some((theorem, idx)) => indexed.entry(theorem.to_string()).or_default().push((idx, v.status)),
            None => malformed.push(v.job_id.clone()),
        }
    }
    let grouped = indexed
        .into_iter()
        .map(|(t, mut list)| {
            list.sort_by_key(|(i, _)| *i);
            (t, list.into_iter().map(|(_, s)| s).collect())
        })
        .collect();
    (grouped, malformed)
}

/// pass@k: a theorem is solved when any of its first `k` verdicts passed.
///
/// Every theorem in `labels` or `verdicts` is scored exactly once, in the
/// row of its label (or [`UNLABELED`]). Rows follow `category_order`, then
/// any other labels alphabetically.
pub fn pass_at_k(
    verdicts: &BTreeMap<String, Vec<Status>>,
    labels: &BTreeMap<String, String>,
    category_order: &[String],
    k: usize,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let mut rows: BTreeMap<&str, Score> = BTreeMap::new();
    let mut overall = Score { solved: 0, total: 0 };
    let mut short = Vec::new();
    let no_verdicts: Vec<Status> = Vec::new();
    let theorems = labels.keys().chain(verdicts.keys().filter(|t| !labels.contains_key(*t)));
    for theorem in theorems {
        let list = verdicts.get(theorem).unwrap_or(&no_verdicts);
        if list.len() < k {
            short.push(theorem.clone());
        }
        let solved = list.iter().take(k).any(|s| *s == Status::Pass);
        let label = labels.get(theorem).map_or(UNLABELED, String::as_str);
        rows.entry(label).or_insert(Score { solved: 0, total: 0 }).add(solved);
        overall.add(solved);
    }
    let mut categories: Vec<CategoryScore> = category_order
        .iter()
        .map(|label| CategoryScore {
            label: label.clone(),
            score: rows.remove(label.as_str()).unwrap_or(Score { solved: 0, total: 0 }),
        })
        .collect();
    categories.extend(rows.into_iter().map(|(label, score)| CategoryScore { label: label.to_string(), score }));
    Ok(EvalReport { categories, overall, metadata: EvalMetadata { k, short_theorems: short, ..EvalMetadata::default() } })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
}

fn row_cells(label: &str, score: &Score, baseline: Option<&Score>) -> [String; 3] {
    let delta = baseline.and_then(|b| format_delta(score, b)).map(|d| format!("({d})")).unwrap_or_default();
    [label.to_string(), score.display(), delta]
}

fn score_json(score: &Score, baseline: Option<&Score>) -> serde_json::Value {
    json!({
        "solved": score.solved,
        "total": score.total,
        "rate": score.rate(),
        "display": score.display(),
        "delta": baseline.and_then(|b| format_delta(score, b)),
    })
}

/// Deterministic rendering. With a baseline, each row also shows the signed
/// change of its rounded percentage.
pub fn render_report(report: &EvalReport, baseline: Option<&EvalReport>, format: ReportFormat) -> String {
    let base_row = |label: &str| baseline.and_then(|b| b.category(label));
    match format {
        ReportFormat::Json => {
            let categories: Vec<serde_json::Value> = report
                .categories
                .iter()
                .map(|c| {
                    let mut v = score_json(&c.score, base_row(&c.label));
                    v["label"] = json!(c.label);
                    v
                })
                .collect();
            let value = json!({
                "k": report.metadata.k,
                "endpoint": report.metadata.endpoint,
                "config_hash": report.metadata.config_hash,
                "short_theorems": report.metadata.short_theorems,
                "categories": categories,
                "overall": score_json(&report.overall, baseline.map(|b| &b.overall)),
            });
            let mut out = serde_json::to_string_pretty(&value).unwrap_or_default();
            out.push('\n');
            out
        }
        ReportFormat::Text => {
            let mut rows: Vec<[String; 3]> = alloc::vec![[
                "Category".to_string(),
                format!("pass@{}", report.metadata.k),
                if baseline.is_some() { "vs baseline".to_string() } else { String::new() },
            ]];
            rows.extend(report.categories.iter().map(|c| row_cells(&c.label, &c.score, base_row(&c.label))));
            rows.push(row_cells("Overall Pass Rate", &report.overall, baseline.map(|b| &b.overall)));
            let width = |col: usize| rows.iter().map(|r| r[col].chars().count()).max().unwrap_or(0);
            let (w0, w1) = (width(0), width(1));
            let mut out = String::new();
            if !report.metadata.endpoint.is_empty() {
                let _ = writeln!(out, "endpoint: {}", report.metadata.endpoint);
            }
            for r in &rows {
                let line = format!("{:<w0$}  {:<w1$}  {}", r[0], r[1], r[2]);
                let _ = writeln!(out, "{}", line.trim_end());
            }
            out
        }
    }
}

/// `exp(-mean logprob)` with natural-log probabilities.
pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::input("perplexity of an empty token sequence"));
    }
    if let Some(bad) = logprobs.iter().find(|lp| !(**lp <= 0.0)) {
        return Err(Error::input(format!("log-probability {bad} is not a log of a probability")));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(libm::exp(-mean))
}

pub fn attempt_perplexity(attempt: &ProofAttempt) -> Result<f64> {
    let lps: Vec<f64> = attempt
        .logprobs
        .as_ref()
        .ok_or_else(|| Error::input(format!("attempt {} carries no logprobs", attempt.job_id())))?
        .iter()
        .map(|t| t.logprob)
        .collect();
    perplexity(&lps)
}

/// Mean of per-sample perplexities, computed as offsets from the first so
/// that identical samples reproduce their value exactly.
pub fn mean_of(values: &[f64]) -> Option<f64> {
    let first = *values.first()?;
    let n = values.len() as f64;
    Some(first + values.iter().map(|v| v - first).sum::<f64>() / n)
}

pub fn mean_perplexity(prompt_id: &str, attempts: &[ProofAttempt]) -> Result<f64> {
    if attempts.is_empty() {
        return Err(Error::input(format!("prompt {prompt_id}: no samples")));
    }
    if let Some(stray) = attempts.iter().find(|a| a.theorem_id != prompt_id) {
        return Err(Error::input(format!("sample for {} mixed into prompt {prompt_id}", stray.theorem_id)));
    }
    let ppls = attempts.iter().map(attempt_perplexity).collect::<Result<Vec<_>>>()?;
    Ok(mean_of(&ppls).unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPerplexity {
    pub prompt_id: String,
    pub mean_ppl: f64,
    pub samples: usize,
    /// Samples dropped because their request failed.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPerplexity {
    pub split: String,
    pub average: f64,
    pub prompts: Vec<PromptPerplexity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub endpoint: String,
    pub seed: u64,
    pub n_samples: usize,
    pub splits: Vec<SplitPerplexity>,
}

impl PerplexityReport {
    pub fn split(&self, name: &str) -> Option<&SplitPerplexity> {
        self.splits.iter().find(|s| s.split == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Samples drawn per prompt.
    pub n_samples: usize,
    /// Prompts drawn from each split.
    pub per_split: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { n_samples: 16, per_split: 50, seed: 0 }
    }
}

/// Seeded choice of up to `count` records, in drawn order.
pub fn sample_records<'a>(records: &'a [TheoremRecord], count: usize, rng: &mut ChaCha8Rng) -> Vec<&'a TheoremRecord> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(rng);
    idx.into_iter().take(count).map(|i| &records[i]).collect()
}

/// Average sampled-response perplexity on seeded subsets of each split.
pub fn ppl_probe<S: CompletionSource + ?Sized>(
    splits: &[(&str, &[TheoremRecord])],
    source: &S,
    cfg: &ProbeConfig,
) -> Result<PerplexityReport> {
    if cfg.per_split == 0 || cfg.n_samples == 0 {
        return Err(Error::config("the probe needs at least one prompt and one sample per prompt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (name, records) in splits {
        let chosen = sample_records(records, cfg.per_split, &mut rng);
        if chosen.is_empty() {
            return Err(Error::config(format!("split {name} has no records to probe")));
        }
        let mut prompts = Vec::with_capacity(chosen.len());
        for record in chosen {
            let prompt = render_prompt(record, source.style())?;
            let attempts = complete_with_logprobs(source, &record.id, &prompt, cfg.n_samples)?;
            let (usable, failed): (Vec<ProofAttempt>, Vec<ProofAttempt>) =
                attempts.into_iter().partition(|a| a.logprobs.as_ref().is_some_and(|l| !l.is_empty()));
            prompts.push(PromptPerplexity {
                prompt_id: record.id.clone(),
                mean_ppl: mean_perplexity(&record.id, &usable)?,
                samples: usable.len(),
                failed: failed.len(),
            });
        }
        let per_prompt: Vec<f64> = prompts.iter().map(|p| p.mean_ppl).collect();
        out.push(SplitPerplexity { split: name.to_string(), average: mean_of(&per_prompt).unwrap_or(f64::NAN), prompts });
    }
    Ok(PerplexityReport { endpoint: source.name().to_string(), seed: cfg.seed, n_samples: cfg.n_samples, splits: out })
}

/// Model-by-split table of average perplexities to three decimals.
pub fn render_perplexity_table(rows: &[(&str, f64, f64)]) -> String {
    let header = ["", "Training Set", "Test Set"];
    let cells: Vec<[String; 3]> =
        rows.iter().map(|(label, tr, te)| [label.to_string(), format!("{tr:.3}"), format!("{te:.3}")]).collect();
    let width = |col: usize| {
        cells.iter().map(|r| r[col].chars().count()).chain([header[col].len()]).max().unwrap_or(0)
    };
    let (w0, w1, w2) = (width(0), width(1), width(2));
    let mut out = String::new();
    let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", header[0], header[1], header[2]);
    for r in &cells {
        let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", r[0], r[1], r[2]);
    }
    out
}
