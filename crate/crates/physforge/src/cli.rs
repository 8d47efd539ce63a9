//! The `physforge` command line. Every stage is a plain function over files
//! so that subcommands and `pipeline` share one implementation.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use physforge_core::conjecture::{
    assemble_training_set, filter_provable, filter_syntax, generate_conjectures, Conjecture, PipelineLedger, ProverShare,
};
use physforge_core::corpus::{assign_categories, split_corpus, CategoryRules, SplitConfig};
use physforge_core::curriculum::curriculum_order;
use physforge_core::eval::{
    group_verdicts, pass_at_k, ppl_probe, render_perplexity_table, render_report, EvalReport, ProbeConfig, ReportFormat,
};
use physforge_core::grpo::{build_batches, normalized_advantages, reward, GrpoConfig};
use physforge_core::prompt::PromptStyle;
use physforge_core::raft::{raft_select, sft_pair};
use physforge_core::source::{allocate_budget, attempt_job, join_verdicts, sample_many, CompletionSource, ProofAttempt};
use physforge_core::tokens::WhitespaceEstimator;
use physforge_core::verify::{verify_batch, Backend, Status, StubBackend, StubTable, VerificationVerdict};
use physforge_core::{Split, TheoremRecord};

use crate::cache::CachedBackend;
use crate::config::{BackendKind, PipelineConfig};
use crate::http::open_endpoint;
use crate::jsonl;
use crate::lean::{LeanBackend, LeanConfig};
use crate::manifest::StageRun;
use crate::pool::ParallelBackend;
use crate::tree::extract_corpus;

#[derive(Debug, Parser)]
#[command(name = "physforge", version, about = "Formal-physics theorem-proving pipeline")]
pub struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Redo stages whose outputs are already up to date.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine lemma records from a directory of .lean files.
    Extract(ExtractArgs),
    /// Assign records to train and test splits.
    Split(SplitArgs),
    /// Sample proofs from an endpoint.
    Sample(SampleArgs),
    /// Verify sampled proofs.
    Verify(VerifyArgs),
    /// Conjecture generation, filtering and assembly.
    #[command(subcommand)]
    Conjecture(ConjectureCommand),
    /// Rewards, advantages, GRPO batches and RAFT pairs.
    #[command(subcommand)]
    Rl(RlCommand),
    /// pass@k tables and the perplexity probe.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Same as `eval ppl`.
    Ppl(PplArgs),
    /// Extract, split, conjecture filtering, assembly and RL batch export.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// JSONL of skipped declarations and why.
    #[arg(long)]
    skipped: Option<PathBuf>,
}

fn parse_counts(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected TRAIN,TEST")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exact train and test sizes, e.g. 2933,250.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
}

impl SplitChoice {
    fn split(self) -> Split {
        match self {
            SplitChoice::Train => Split::Train,
            SplitChoice::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Only records of this split.
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
    #[arg(long, default_value_t = 0)]
    first_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Lean,
    Stub,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    #[arg(long)]
    stub_table: Option<PathBuf>,
    /// Lean project with its dependencies built.
    #[arg(long)]
    project: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Seconds per verification job.
    #[arg(long)]
    timeout: Option<f64>,
    /// Verdict cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    toolchain_version: Option<String>,
}

fn parse_style(s: &str) -> Result<PromptStyle, String> {
    serde_json::from_value(Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown prompt style `{s}` (deepseek, kimina_goedel, proprietary_cot, conjecture_gen)"))
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Attempts JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// Records the attempts answer.
    #[arg(long)]
    corpus: PathBuf,
    /// Prompt style the completions answer; defaults to the style of the
    /// configured endpoint named by each attempt's prover.
    #[arg(long, value_parser = parse_style)]
    style: Option<PromptStyle>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Subcommand)]
pub enum ConjectureCommand {
    /// Ask the generator endpoint for conjectures per seed.
    Gen(GenArgs),
    /// Keep conjectures whose statement elaborates.
    FilterSyntax(FilterArgs),
    /// Keep conjectures that some sampled proof verifies.
    FilterProve(ProveArgs),
    /// Seeds plus deduplicated provable conjectures, and the retention ledger.
    Assemble(AssembleArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Seed records.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    per_seed: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Seed records the conjectures were derived from.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ProveArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// Prover endpoints in order, comma separated.
    #[arg(long, value_delimiter = ',')]
    provers: Vec<String>,
    /// Proofs per conjecture across all provers.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
    #[arg(long)]
    out: PathBuf,
    /// Ledger JSON.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GrpoArgs {
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    #[arg(long)]
    std_floor: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl GrpoArgs {
    fn apply(&self, mut cfg: GrpoConfig) -> GrpoConfig {
        cfg.group_size = self.group_size.unwrap_or(cfg.group_size);
        cfg.clip_eps = self.clip_eps.unwrap_or(cfg.clip_eps);
        cfg.kl_beta = self.kl_beta.unwrap_or(cfg.kl_beta);
        cfg.std_floor = self.std_floor.unwrap_or(cfg.std_floor);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg
    }
}

#[derive(Debug, Subcommand)]
pub enum RlCommand {
    /// Binary reward per verdict.
    Reward(RewardArgs),
    /// Group-relative advantages from rewards.
    Advantage(AdvantageArgs),
    /// Curriculum-ordered GRPO groups for an external trainer.
    Batch(BatchArgs),
    /// Supervised pairs from verified completions.
    Raft(RaftArgs),
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// Verdicts JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdvantageArgs {
    /// Rewards JSONL from `rl reward`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grpo: GrpoArgs,
}

#[derive(Debug, Args)]
pub struct ScoredArgs {
    /// Records the attempts answer.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    attempts: PathBuf,
    #[arg(long)]
    verdicts: PathBuf,
    /// Prompt style the attempts were sampled with.
    #[arg(long, value_parser = parse_style, default_value = "deepseek")]
    style: PromptStyle,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    scored: ScoredArgs,
    #[command(flatten)]
    grpo: GrpoArgs,
}

#[derive(Debug, Args)]
pub struct RaftArgs {
    #[command(flatten)]
    scored: ScoredArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Per-category pass@k table.
    PassAtK(PassAtKArgs),
    /// Sampled-response perplexity on train and test prompts.
    Ppl(PplArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatChoice {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct PassAtKArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    verdicts: PathBuf,
    /// JSONL with `id` or `theorem_id` and `category` per theorem.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report JSON from an earlier `--out`.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatChoice,
    /// Row order, comma separated.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
    /// Name recorded in the report.
    #[arg(long)]
    endpoint: Option<String>,
    /// Report JSON, usable later as a baseline.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PplArgs {
    /// Records with train and test splits assigned.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    endpoint: String,
    /// Samples per prompt.
    #[arg(long)]
    n: Option<usize>,
    /// Prompts per split.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Table row label; defaults to the endpoint name.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Overrides `paths.work_dir`.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs it: 0 on success, 1 on a
/// failed run, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

struct Ctx {
    config: Option<PipelineConfig>,
    /// Directory config-relative paths are resolved against.
    base: PathBuf,
    force: bool,
}

impl Ctx {
    fn cfg(&self) -> PipelineConfig {
        self.config.clone().unwrap_or_default()
    }

    fn config_hash(&self) -> Option<String> {
        self.config.as_ref().map(PipelineConfig::hash)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn source(&self, name: &str) -> Result<Box<dyn CompletionSource + Send + Sync>> {
        let Some(cfg) = &self.config else {
            bail!("endpoint `{name}` needs a --config that defines it");
        };
        let endpoint = cfg.endpoint(name).with_context(|| format!("no endpoint named `{name}` in the config"))?;
        open_endpoint(endpoint, &self.base)
    }

    /// Runs `body` unless every output is up to date, then records the
    /// manifest sidecars.
    fn stage(&self, run: StageRun, outputs: &[&Path], body: impl FnOnce() -> Result<()>) -> Result<bool> {
        let run = run.config_hash(self.config_hash());
        if !self.force && run.up_to_date(outputs)? {
            info!("{}: outputs up to date, skipped (--force to redo)", run.command);
            return Ok(false);
        }
        body()?;
        run.record(outputs)?;
        Ok(true)
    }

    fn backend(&self, args: &BackendArgs) -> Result<(Box<dyn Backend + Send + Sync>, f64, Value)> {
        let v = self.cfg().verifier;
        let kind = match args.backend {
            Some(BackendChoice::Lean) => BackendKind::LeanToolchain,
            Some(BackendChoice::Stub) => BackendKind::Stub,
            None => v.backend,
        };
        let timeout = args.timeout.unwrap_or(v.default_timeout);
        if !(timeout > 0.0) {
            bail!("--timeout must be positive");
        }
        let jobs = args.jobs.unwrap_or(v.max_parallel);
        let cache = args.cache.clone().or_else(|| v.cache_dir.as_ref().map(|d| self.resolve(d)));
        let params;
        let base: Box<dyn Backend + Send + Sync> = match kind {
            BackendKind::Stub => {
                let path = args
                    .stub_table
                    .clone()
                    .or_else(|| v.stub_table.as_ref().map(|p| self.resolve(p)))
                    .context("the stub backend needs --stub-table")?;
                let table: StubTable = read_json(&path)?;
                params = json!({ "backend": "stub", "stub_table": crate::jsonl::sha256_file(&path)?, "timeout": timeout });
                Box::new(StubBackend::new(table))
            }
            BackendKind::LeanToolchain => {
                let project = args
                    .project
                    .clone()
                    .or_else(|| self.cfg().paths.project_dir.map(|p| self.resolve(&p)))
                    .context("the Lean backend needs --project")?;
                let mut lean = LeanConfig::new(project);
                lean.toolchain_version = args.toolchain_version.clone().unwrap_or(v.toolchain_version);
                if let Some(cmd) = v.command {
                    lean.command = cmd;
                }
                params = json!({ "backend": "lean", "toolchain_version": lean.toolchain_version, "timeout": timeout });
                Box::new(LeanBackend::new(lean))
            }
        };
        let pooled: Box<dyn Backend + Send + Sync> = Box::new(ParallelBackend::new(base, jobs)?);
        let backend = match cache {
            Some(dir) => Box::new(CachedBackend::new(pooled, dir)) as Box<dyn Backend + Send + Sync>,
            None => pooled,
        };
        Ok((backend, timeout, params))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    jsonl::write_atomic(path, text.as_bytes())
}

fn records_in(path: &Path, split: Option<SplitChoice>) -> Result<Vec<TheoremRecord>> {
    let all: Vec<TheoremRecord> = jsonl::read(path)?;
    Ok(match split {
        Some(s) => all.into_iter().filter(|r| r.split == s.split()).collect(),
        None => all,
    })
}

fn by_id(records: Vec<TheoremRecord>) -> BTreeMap<String, TheoremRecord> {
    records.into_iter().map(|r| (r.id.clone(), r)).collect()
}

fn execute(cli: Cli) -> Result<()> {
    let (config, base) = match &cli.config {
        Some(path) => {
            let cfg = PipelineConfig::load(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (Some(cfg), base)
        }
        None => (None, PathBuf::new()),
    };
    let ctx = Ctx { config, base, force: cli.force };
    match cli.command {
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Sample(a) => cmd_sample(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Conjecture(ConjectureCommand::Gen(a)) => cmd_gen(&ctx, a),
        Command::Conjecture(ConjectureCommand::FilterSyntax(a)) => cmd_filter_syntax(&ctx, a),
        Command::Conjecture(ConjectureCommand::FilterProve(a)) => cmd_filter_prove(&ctx, a),
        Command::Conjecture(ConjectureCommand::Assemble(a)) => cmd_assemble(&ctx, a),
        Command::Rl(RlCommand::Reward(a)) => cmd_reward(&ctx, a),
        Command::Rl(RlCommand::Advantage(a)) => cmd_advantage(&ctx, a),
        Command::Rl(RlCommand::Batch(a)) => cmd_batch(&ctx, a),
        Command::Rl(RlCommand::Raft(a)) => cmd_raft(&ctx, a),
        Command::Eval(EvalCommand::PassAtK(a)) => cmd_pass_at_k(&ctx, a),
        Command::Eval(EvalCommand::Ppl(a)) | Command::Ppl(a) => cmd_ppl(&ctx, a),
        Command::Pipeline(a) => cmd_pipeline(&ctx, a),
    }
}

fn category_rules(ctx: &Ctx) -> CategoryRules {
    ctx.cfg().corpus.category_rules.map(|rules| CategoryRules { rules }).unwrap_or_default()
}

fn extract_stage(ctx: &Ctx, root: &Path, max_tokens: usize, out: &Path, skipped: Option<&Path>) -> Result<()> {
    let rules = category_rules(ctx);
    let run = StageRun::new("extract", &[root], json!({ "max_tokens": max_tokens, "category_rules": rules }))?;
    let mut outputs = vec![out];
    outputs.extend(skipped);
    ctx.stage(run, &outputs, || {
        let mut extraction = extract_corpus(root, max_tokens, &WhitespaceEstimator)?;
        let unmatched = assign_categories(&mut extraction.records, &rules);
        info!(
            "extracted {} records, skipped {} declarations, {unmatched} records fell back to the default category",
            extraction.records.len(),
            extraction.skipped.len()
        );
        jsonl::write(out, &extraction.records)?;
        if let Some(path) = skipped {
            jsonl::write(path, &extraction.skipped)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_extract(ctx: &Ctx, a: ExtractArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let root = a
        .root
        .or_else(|| cfg.paths.corpus_root.as_ref().map(|r| ctx.resolve(r)))
        .context("no corpus root: pass --root or set paths.corpus_root")?;
    extract_stage(ctx, &root, a.max_tokens.unwrap_or(cfg.corpus.max_tokens), &a.out, a.skipped.as_deref())
}

fn split_stage(ctx: &Ctx, input: &Path, split: SplitConfig, out: &Path) -> Result<()> {
    let run = StageRun::new("split", &[input], json!({ "ratio": split.ratio_train, "counts": split.exact_counts }))?
        .seed("split", split.rng_seed);
    ctx.stage(run, &[out], || {
        let records: Vec<TheoremRecord> = jsonl::read(input)?;
        let outcome = split_corpus(records, &split)?;
        info!("train {}, test {}, unassigned {}", outcome.train.len(), outcome.test.len(), outcome.unassigned.len());
        let all: Vec<TheoremRecord> = outcome.train.into_iter().chain(outcome.test).chain(outcome.unassigned).collect();
        jsonl::write(out, &all)
    })?;
    Ok(())
}

fn cmd_split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let split = SplitConfig {
        ratio_train: a.ratio.unwrap_or(cfg.corpus.ratio_train),
        rng_seed: a.seed.unwrap_or(cfg.seeds.split),
        exact_counts: a.counts.or(cfg.corpus.exact_counts),
    };
    split_stage(ctx, &a.input, split, &a.out)
}

fn sample_stage(
    ctx: &Ctx,
    input: &Path,
    split: Option<SplitChoice>,
    endpoint: &str,
    n: usize,
    first_index: usize,
    out: &Path,
) -> Result<()> {
    let params = json!({ "endpoint": ctx.config.as_ref().and_then(|c| c.endpoint(endpoint)), "n": n, "split": split.map(|s| format!("{s:?}")), "first_index": first_index });
    let run = StageRun::new("sample", &[input], params)?;
    ctx.stage(run, &[out], || {
        let source = ctx.source(endpoint)?;
        let records = records_in(input, split)?;
        let refs: Vec<&TheoremRecord> = records.iter().collect();
        let sampled = sample_many(&*source, &refs, n, first_index)?;
        let attempts: Vec<ProofAttempt> = sampled.into_iter().flatten().collect();
        let failed = attempts.iter().filter(|a| a.transport_failed()).count();
        info!("{} attempts for {} records, {failed} failed requests", attempts.len(), records.len());
        jsonl::write(out, &attempts)
    })?;
    Ok(())
}

fn cmd_sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    sample_stage(ctx, &a.input, a.split, &a.endpoint, a.n, a.first_index, &a.out)
}

fn verify_stage(
    ctx: &Ctx,
    attempts_path: &Path,
    corpus: &Path,
    style: Option<PromptStyle>,
    backend: &BackendArgs,
    out: &Path,
) -> Result<()> {
    let (backend, timeout, params) = ctx.backend(backend)?;
    let params = json!({ "backend": params, "style": style });
    let run = StageRun::new("verify", &[attempts_path, corpus], params)?;
    ctx.stage(run, &[out], || {
        let records = by_id(jsonl::read(corpus)?);
        let attempts: Vec<ProofAttempt> = jsonl::read(attempts_path)?;
        let cfg = ctx.cfg();
        let style_of = |a: &ProofAttempt| style.or_else(|| cfg.endpoint(&a.prover_name).map(|e| e.style)).unwrap_or_default();
        let jobs = attempts
            .iter()
            .map(|a| {
                let record = records.get(&a.theorem_id).with_context(|| format!("attempt for unknown theorem {}", a.theorem_id))?;
                Ok(attempt_job(record, a, style_of(a), timeout)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let verdicts = verify_batch(&*backend, &jobs);
        let passed = verdicts.iter().filter(|v| v.passed()).count();
        info!("{passed}/{} attempts verified", verdicts.len());
        jsonl::write(out, &verdicts)
    })?;
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: VerifyArgs) -> Result<()> {
    verify_stage(ctx, &a.input, &a.corpus, a.style, &a.backend, &a.out)
}

fn gen_stage(ctx: &Ctx, input: &Path, split: Option<SplitChoice>, generator: &str, per_seed: usize, out: &Path) -> Result<()> {
    let params = json!({ "generator": ctx.config.as_ref().and_then(|c| c.endpoint(generator)), "per_seed": per_seed, "split": split.map(|s| format!("{s:?}")) });
    let run = StageRun::new("conjecture gen", &[input], params)?;
    ctx.stage(run, &[out], || {
        let source = ctx.source(generator)?;
        let seeds = records_in(input, split)?;
        let generations = seeds
            .par_iter()
            .map(|s| generate_conjectures(&*source, s, per_seed))
            .collect::<physforge_core::Result<Vec<_>>>()?;
        let mut conjectures = Vec::new();
        for g in generations {
            if let Some(why) = g.failure {
                warn!("{why}");
            }
            conjectures.extend(g.conjectures);
        }
        info!("{} conjectures from {} seeds", conjectures.len(), seeds.len());
        jsonl::write(out, &conjectures)
    })?;
    Ok(())
}

fn cmd_gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let generator = a.generator.or(cfg.conjecture.generator).context("no generator: pass --generator or set conjecture.generator")?;
    gen_stage(ctx, &a.input, a.split, &generator, a.per_seed.unwrap_or(cfg.conjecture.per_seed), &a.out)
}

fn filter_syntax_stage(ctx: &Ctx, input: &Path, seeds: &Path, backend: &BackendArgs, out: &Path) -> Result<()> {
    let (backend, timeout, params) = ctx.backend(backend)?;
    let run = StageRun::new("conjecture filter-syntax", &[input, seeds], params)?;
    ctx.stage(run, &[out], || {
        let parents = by_id(jsonl::read(seeds)?);
        let mut conjectures: Vec<Conjecture> = jsonl::read(input)?;
        let delta = filter_syntax(&mut conjectures, &parents, &*backend, timeout)?;
        info!("syntax filter: {} kept, {} rejected, {} pending", delta.survived, delta.rejected, delta.pending);
        jsonl::write(out, &conjectures)
    })?;
    Ok(())
}

fn cmd_filter_syntax(ctx: &Ctx, a: FilterArgs) -> Result<()> {
    filter_syntax_stage(ctx, &a.input, &a.seeds, &a.backend, &a.out)
}

/// Per-prover proof counts: config overrides where set, the rest split
/// near-evenly.
fn prover_budgets(ctx: &Ctx, provers: &[String], n: usize) -> Result<Vec<(String, usize)>> {
    let cfg = ctx.cfg();
    let overrides: Vec<Option<usize>> = provers.iter().map(|p| cfg.endpoint(p).and_then(|e| e.budget)).collect();
    let budgets = allocate_budget(n, &overrides)?;
    Ok(provers.iter().cloned().zip(budgets).collect())
}

fn filter_prove_stage(
    ctx: &Ctx,
    input: &Path,
    seeds: &Path,
    budgets: &[(String, usize)],
    backend: &BackendArgs,
    out: &Path,
) -> Result<()> {
    if budgets.is_empty() {
        bail!("no provers: pass --provers or set conjecture.provers");
    }
    let (backend, timeout, params) = ctx.backend(backend)?;
    let endpoints: Vec<Value> =
        budgets.iter().map(|(p, b)| json!({ "budget": b, "endpoint": ctx.config.as_ref().and_then(|c| c.endpoint(p)) })).collect();
    let run = StageRun::new("conjecture filter-prove", &[input, seeds], json!({ "backend": params, "provers": endpoints }))?;
    ctx.stage(run, &[out], || {
        let parents = by_id(jsonl::read(seeds)?);
        let mut conjectures: Vec<Conjecture> = jsonl::read(input)?;
        let sources = budgets.iter().map(|(p, _)| ctx.source(p)).collect::<Result<Vec<_>>>()?;
        let shares: Vec<ProverShare<'_>> = sources
            .iter()
            .zip(budgets)
            .map(|(s, (_, budget))| ProverShare { source: &**s as &dyn CompletionSource, budget: *budget })
            .collect();
        let delta = filter_provable(&mut conjectures, &parents, &shares, &*backend, timeout)?;
        info!("provability filter: {} proved, {} rejected, {} pending", delta.survived, delta.rejected, delta.pending);
        jsonl::write(out, &conjectures)
    })?;
    Ok(())
}

fn cmd_filter_prove(ctx: &Ctx, a: ProveArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let provers = if a.provers.is_empty() { cfg.conjecture.provers.clone() } else { a.provers };
    let budgets = prover_budgets(ctx, &provers, a.n.unwrap_or(cfg.conjecture.n_proofs))?;
    filter_prove_stage(ctx, &a.filter.input, &a.filter.seeds, &budgets, &a.filter.backend, &a.filter.out)
}

fn assemble_stage(
    ctx: &Ctx,
    input: &Path,
    seeds_path: &Path,
    split: Option<SplitChoice>,
    budgets: &[(String, usize)],
    out: &Path,
    ledger_out: Option<&Path>,
) -> Result<PipelineLedger> {
    let all_seeds: Vec<TheoremRecord> = jsonl::read(seeds_path)?;
    let seeds: Vec<TheoremRecord> = match split {
        Some(s) => all_seeds.iter().filter(|r| r.split == s.split()).cloned().collect(),
        None => all_seeds.clone(),
    };
    let parents = by_id(all_seeds);
    let conjectures: Vec<Conjecture> = jsonl::read(input)?;
    let assembly = assemble_training_set(&seeds, &conjectures, &parents, &WhitespaceEstimator)?;
    let mut ledger = PipelineLedger::tally(seeds.len(), &conjectures);
    let with_output: BTreeSet<&str> = conjectures.iter().map(|c| c.parent_id.as_str()).collect();
    ledger.n_failed_seeds = seeds.iter().filter(|s| !with_output.contains(s.id.as_str())).count();
    ledger.n_provable_unique = Some(ledger.n_provable - assembly.duplicates);
    ledger.n_training = Some(assembly.records.len());
    ledger.prover_budget = budgets.to_vec();

    let run = StageRun::new("conjecture assemble", &[input, seeds_path], json!({ "split": split.map(|s| format!("{s:?}")) }))?;
    let mut outputs = vec![out];
    outputs.extend(ledger_out);
    ctx.stage(run, &outputs, || {
        jsonl::write(out, &assembly.records)?;
        if let Some(path) = ledger_out {
            write_json(path, &ledger.to_json())?;
        }
        Ok(())
    })?;
    Ok(ledger)
}

fn cmd_assemble(ctx: &Ctx, a: AssembleArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let budgets = prover_budgets(ctx, &cfg.conjecture.provers, cfg.conjecture.n_proofs)?;
    let ledger = assemble_stage(ctx, &a.input, &a.seeds, a.split, &budgets, &a.out, a.ledger.as_deref())?;
    print!("{}", ledger.render_text());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub job_id: String,
    pub status: Status,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRow {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

fn cmd_reward(ctx: &Ctx, a: RewardArgs) -> Result<()> {
    let run = StageRun::new("rl reward", &[&a.input], Value::Null)?;
    ctx.stage(run, &[&a.out], || {
        let verdicts: Vec<VerificationVerdict> = jsonl::read(&a.input)?;
        let rows: Vec<RewardRow> =
            verdicts.iter().map(|v| RewardRow { job_id: v.job_id.clone(), status: v.status, reward: reward(v) }).collect();
        jsonl::write(&a.out, &rows)
    })?;
    Ok(())
}

fn cmd_advantage(ctx: &Ctx, a: AdvantageArgs) -> Result<()> {
    let cfg = a.grpo.apply(ctx.cfg().grpo);
    cfg.validate()?;
    let run = StageRun::new("rl advantage", &[&a.input], serde_json::to_value(cfg)?)?;
    ctx.stage(run, &[&a.out], || {
        let rows: Vec<RewardRow> = jsonl::read(&a.input)?;
        let mut groups: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
        for r in &rows {
            let (theorem, idx) = physforge_core::eval::parse_job_id(&r.job_id)
                .with_context(|| format!("job id `{}` has no attempt index", r.job_id))?;
            groups.entry(theorem.to_string()).or_default().push((idx, r.reward));
        }
        let mut out = Vec::new();
        for (prompt_id, mut list) in groups {
            if list.len() != cfg.group_size {
                warn!("{prompt_id}: {} rewards, group size is {}; skipped", list.len(), cfg.group_size);
                continue;
            }
            list.sort_by_key(|(i, _)| *i);
            let rewards: Vec<f64> = list.into_iter().map(|(_, r)| r).collect();
            let advantages = normalized_advantages(&rewards, cfg.std_floor);
            let degenerate = advantages.iter().all(|&x| x == 0.0);
            out.push(AdvantageRow { prompt_id, rewards, advantages, degenerate });
        }
        jsonl::write(&a.out, &out)
    })?;
    Ok(())
}

type ScoredByRecord = BTreeMap<String, Vec<physforge_core::source::ScoredAttempt>>;

fn scored_inputs(a: &ScoredArgs) -> Result<(Vec<TheoremRecord>, ScoredByRecord)> {
    let records: Vec<TheoremRecord> = jsonl::read(&a.input)?;
    let attempts: Vec<ProofAttempt> = jsonl::read(&a.attempts)?;
    let verdicts: Vec<VerificationVerdict> = jsonl::read(&a.verdicts)?;
    let (scored, unmatched) = join_verdicts(attempts, verdicts);
    if unmatched > 0 {
        warn!("{unmatched} attempts have no verdict");
    }
    Ok((records, scored))
}

fn batch_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".batches.json");
    out.with_file_name(name)
}

fn batch_stage(ctx: &Ctx, a: &ScoredArgs, cfg: GrpoConfig) -> Result<()> {
    cfg.validate()?;
    let params = json!({ "grpo": cfg, "style": a.style });
    let run = StageRun::new("rl batch", &[&a.input, &a.attempts, &a.verdicts], params)?;
    let batches = batch_path(&a.out);
    ctx.stage(run, &[&a.out, &batches], || {
        let (records, scored) = scored_inputs(a)?;
        let ordered = curriculum_order(records)?;
        let corpus_hash = crate::jsonl::sha256_file(&a.input)?;
        let build = build_batches(&ordered, &scored, a.style, &cfg, &corpus_hash)?;
        for s in &build.skipped {
            warn!("{}: {}", s.record_id, s.reason);
        }
        info!("{} groups in {} batches, {} records skipped", build.group_count(), build.batches.len(), build.skipped.len());
        let groups: Vec<&physforge_core::grpo::GrpoGroup> = build.batches.iter().flat_map(|b| &b.groups).collect();
        jsonl::write(&a.out, &groups)?;
        let summary: Vec<Value> = build
            .batches
            .iter()
            .map(|b| json!({ "index": b.index, "groups": b.groups.len(), "metadata": b.metadata }))
            .collect();
        write_json(&batches, &json!({ "batches": summary, "skipped": build.skipped }))
    })?;
    Ok(())
}

fn cmd_batch(ctx: &Ctx, a: BatchArgs) -> Result<()> {
    batch_stage(ctx, &a.scored, a.grpo.apply(ctx.cfg().grpo))
}

fn cmd_raft(ctx: &Ctx, a: RaftArgs) -> Result<()> {
    let a = a.scored;
    let run = StageRun::new("rl raft", &[&a.input, &a.attempts, &a.verdicts], json!({ "style": a.style }))?;
    ctx.stage(run, &[&a.out], || {
        let (records, scored) = scored_inputs(&a)?;
        let selected = raft_select(&records, &scored, a.style, &WhitespaceEstimator);
        let pairs = selected.iter().map(|r| sft_pair(r, a.style)).collect::<physforge_core::Result<Vec<_>>>()?;
        info!("{} supervised pairs", pairs.len());
        jsonl::write(&a.out, &pairs)
    })?;
    Ok(())
}

/// Theorem labels from a JSONL file, and labels in first-seen order.
fn read_labels(path: &Path) -> Result<(BTreeMap<String, String>, Vec<String>)> {
    let rows: Vec<Value> = jsonl::read(path)?;
    let mut labels = BTreeMap::new();
    let mut order = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let id = row
            .get("theorem_id")
            .or_else(|| row.get("id"))
            .and_then(Value::as_str)
            .with_context(|| format!("{}:{}: no `id` or `theorem_id`", path.display(), i + 1))?;
        let Some(label) = row.get("category").and_then(Value::as_str) else { continue };
        if !order.iter().any(|l| l == label) {
            order.push(label.to_string());
        }
        labels.insert(id.to_string(), label.to_string());
    }
    Ok((labels, order))
}

fn cmd_pass_at_k(ctx: &Ctx, a: PassAtKArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let k = a.k.unwrap_or(cfg.eval.k);
    let verdicts: Vec<VerificationVerdict> = jsonl::read(&a.verdicts)?;
    let (grouped, malformed) = group_verdicts(&verdicts);
    if !malformed.is_empty() {
        warn!("{} verdicts without an attempt index ignored", malformed.len());
    }
    let (labels, seen) = match &a.corpus {
        Some(path) => read_labels(path)?,
        None => (BTreeMap::new(), Vec::new()),
    };
    let order: Vec<String> = if !a.categories.is_empty() {
        a.categories
    } else if ctx.config.is_some() {
        let mut order: Vec<String> = cfg.eval.categories.iter().filter(|c| seen.contains(c)).cloned().collect();
        order.extend(seen.into_iter().filter(|l| !cfg.eval.categories.contains(l)));
        order
    } else {
        seen
    };
    let mut report = pass_at_k(&grouped, &labels, &order, k)?;
    if !report.metadata.short_theorems.is_empty() {
        warn!("{} theorems have fewer than {k} verdicts", report.metadata.short_theorems.len());
    }
    report.metadata.endpoint = a.endpoint.unwrap_or_default();
    report.metadata.config_hash = ctx.config_hash().unwrap_or_default();
    let baseline: Option<EvalReport> = a.baseline.as_deref().map(read_json).transpose()?;
    let format = match a.format {
        FormatChoice::Text => ReportFormat::Text,
        FormatChoice::Json => ReportFormat::Json,
    };
    print!("{}", render_report(&report, baseline.as_ref(), format));
    if let Some(out) = &a.out {
        let mut inputs = vec![a.verdicts.as_path()];
        inputs.extend(a.corpus.as_deref());
        let run = StageRun::new("eval pass-at-k", &inputs, json!({ "k": k, "categories": order }))?.config_hash(ctx.config_hash());
        write_json(out, &report)?;
        run.record(&[out])?;
    }
    Ok(())
}

fn cmd_ppl(ctx: &Ctx, a: PplArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let probe = ProbeConfig {
        n_samples: a.n.unwrap_or(cfg.eval.n_ppl_samples),
        per_split: a.sample.unwrap_or(cfg.eval.ppl_sample_count_per_split),
        seed: a.seed.unwrap_or(cfg.seeds.ppl),
    };
    let source = ctx.source(&a.endpoint)?;
    let records: Vec<TheoremRecord> = jsonl::read(&a.corpus)?;
    let (train, test): (Vec<TheoremRecord>, Vec<TheoremRecord>) =
        records.into_iter().filter(|r| r.split != Split::Unassigned).partition(|r| r.split == Split::Train);
    let report = ppl_probe(&[("train", &train), ("test", &test)], &*source, &probe)?;
    let avg = |name: &str| report.split(name).map_or(f64::NAN, |s| s.average);
    let label = a.label.unwrap_or_else(|| a.endpoint.clone());
    print!("{}", render_perplexity_table(&[(&label, avg("train"), avg("test"))]));
    if let Some(out) = &a.out {
        let params = json!({ "endpoint": cfg.endpoint(&a.endpoint), "n": probe.n_samples, "sample": probe.per_split });
        let run = StageRun::new("eval ppl", &[&a.corpus], params)?.seed("ppl", probe.seed).config_hash(ctx.config_hash());
        write_json(out, &report)?;
        run.record(&[out])?;
    }
    Ok(())
}

fn cmd_pipeline(ctx: &Ctx, a: PipelineArgs) -> Result<()> {
    let Some(cfg) = &ctx.config else { bail!("pipeline needs --config") };
    let work = a.work_dir.unwrap_or_else(|| ctx.resolve(&cfg.paths.work_dir));
    std::fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;
    let at = |name: &str| work.join(name);
    let no_flags = BackendArgs::default();

    let corpus = at("corpus.jsonl");
    let root = cfg.paths.corpus_root.as_ref().map(|r| ctx.resolve(r)).context("config field `paths.corpus_root` is required")?;
    extract_stage(ctx, &root, cfg.corpus.max_tokens, &corpus, Some(&at("skipped.jsonl")))?;

    let split = at("split.jsonl");
    let split_cfg =
        SplitConfig { ratio_train: cfg.corpus.ratio_train, rng_seed: cfg.seeds.split, exact_counts: cfg.corpus.exact_counts };
    split_stage(ctx, &corpus, split_cfg, &split)?;

    let training = at("training.jsonl");
    match &cfg.conjecture.generator {
        Some(generator) => {
            let generated = at("conjectures.generated.jsonl");
            gen_stage(ctx, &split, Some(SplitChoice::Train), generator, cfg.conjecture.per_seed, &generated)?;
            let syntax_ok = at("conjectures.syntax.jsonl");
            filter_syntax_stage(ctx, &generated, &split, &no_flags, &syntax_ok)?;
            let budgets = prover_budgets(ctx, &cfg.conjecture.provers, cfg.conjecture.n_proofs)?;
            let proved = at("conjectures.jsonl");
            filter_prove_stage(ctx, &syntax_ok, &split, &budgets, &no_flags, &proved)?;
            let ledger =
                assemble_stage(ctx, &proved, &split, Some(SplitChoice::Train), &budgets, &training, Some(&at("ledger.json")))?;
            print!("{}", ledger.render_text());
        }
        None => {
            warn!("no conjecture generator configured; training on the train split alone");
            let run = StageRun::new("training set", &[&split], Value::Null)?;
            ctx.stage(run, &[&training], || jsonl::write(&training, &records_in(&split, Some(SplitChoice::Train))?))?;
        }
    }

    let curriculum = at("curriculum.jsonl");
    let run = StageRun::new("curriculum", &[&training], Value::Null)?;
    ctx.stage(run, &[&curriculum], || jsonl::write(&curriculum, &curriculum_order(jsonl::read(&training)?)?))?;

    let Some(policy) = &cfg.rl.policy_endpoint else {
        info!("no rl.policy_endpoint; stopping after the curriculum");
        return Ok(());
    };
    let attempts = at("rl.attempts.jsonl");
    sample_stage(ctx, &curriculum, None, policy, cfg.grpo.group_size, 0, &attempts)?;
    let verdicts = at("rl.verdicts.jsonl");
    let style = cfg.endpoint(policy).map(|e| e.style);
    verify_stage(ctx, &attempts, &curriculum, style, &no_flags, &verdicts)?;
    let scored = ScoredArgs {
        input: curriculum,
        attempts,
        verdicts,
        style: style.unwrap_or_default(),
        out: at("rl.batches.jsonl"),
    };
    batch_stage(ctx, &scored, cfg.grpo)
}
