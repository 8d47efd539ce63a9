//! Verification jobs, verdicts, the forbidden-keyword short circuit and the
//! table-driven stub backend used for hermetic runs.
//!
//! The real toolchain backend lives in the `physforge` crate; it only has to
//! implement [`Backend`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::content_id;
use crate::scan::scan_forbidden;

pub const DEFAULT_TIMEOUT_SECS: f64 = 300.0;
pub const DEFAULT_TOOLCHAIN_VERSION: &str = "4.20.0";
pub const SORRY_WARNING: &str = "declaration uses 'sorry'";
/// Proof placeholder used by the statement well-formedness check.
pub const SORRY_PROOF: &str = ":= sorry";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Timeout,
    ForbiddenKeyword,
    ToolchainError,
}

/// `Proof` demands a complete proof; `Syntax` only asks whether the statement
/// elaborates, so the `sorry` warning is tolerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Proof,
    Syntax,
}

impl CheckMode {
    fn tag(self) -> &'static str {
        match self {
            CheckMode::Proof => "proof",
            CheckMode::Syntax => "syntax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationJob {
    pub job_id: String,
    pub header: String,
    pub statement: String,
    pub proof_candidate: String,
    pub timeout_secs: f64,
}

impl VerificationJob {
    pub fn new(
        job_id: impl Into<String>,
        header: impl Into<String>,
        statement: impl Into<String>,
        proof_candidate: impl Into<String>,
        timeout_secs: f64,
    ) -> Result<Self> {
        let job = VerificationJob {
            job_id: job_id.into(),
            header: header.into(),
            statement: statement.into(),
            proof_candidate: proof_candidate.into(),
            timeout_secs,
        };
        if job.statement.trim().is_empty() {
            return Err(Error::input(format!("job {}: statement is empty", job.job_id)));
        }
        if !(job.timeout_secs > 0.0) {
            return Err(Error::input(format!("job {}: timeout must be positive", job.job_id)));
        }
        Ok(job)
    }

    /// The Lean file handed to the toolchain: header, a newline, then the
    /// statement followed by its proof.
    pub fn composed_source(&self) -> String {
        let header = self.header.trim_end();
        let mut out = String::with_capacity(header.len() + self.statement.len() + self.proof_candidate.len() + 4);
        if !header.is_empty() {
            out.push_str(header);
            out.push('\n');
        }
        out.push_str(self.statement.trim_end());
        out.push(' ');
        out.push_str(self.proof_candidate.trim());
        out.push('\n');
        out
    }

    /// Cache and stub-table key: a hash of the mode and composed file.
    pub fn content_key(&self, mode: CheckMode) -> String {
        content_id(&[mode.tag(), &self.composed_source()])
    }
}

/// Job that checks only whether `statement` elaborates under `header`.
pub fn syntax_job(
    job_id: impl Into<String>,
    header: impl Into<String>,
    statement: impl Into<String>,
    timeout_secs: f64,
) -> Result<VerificationJob> {
    VerificationJob::new(job_id, header, statement, SORRY_PROOF, timeout_secs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub job_id: String,
    pub status: Status,
    pub wall_time: f64,
    pub diagnostics: String,
}

impl VerificationVerdict {
    pub fn new(job_id: impl Into<String>, status: Status, diagnostics: impl Into<String>) -> Self {
        VerificationVerdict { job_id: job_id.into(), status, wall_time: 0.0, diagnostics: diagnostics.into() }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Something that can compile a composed job. Implementations never see
/// jobs rejected by the keyword scan.
pub trait Backend {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict;

    /// Checks many jobs; results are order-aligned with `jobs`.
    fn check_batch(&self, jobs: &[(&VerificationJob, CheckMode)]) -> Vec<VerificationVerdict> {
        jobs.iter().map(|(job, mode)| self.check(job, *mode)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for alloc::boxed::Box<B> {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        (**self).check(job, mode)
    }

    fn check_batch(&self, jobs: &[(&VerificationJob, CheckMode)]) -> Vec<VerificationVerdict> {
        (**self).check_batch(jobs)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        (**self).check(job, mode)
    }

    fn check_batch(&self, jobs: &[(&VerificationJob, CheckMode)]) -> Vec<VerificationVerdict> {
        (**self).check_batch(jobs)
    }
}

/// Verdict decided without compiling, if any: forbidden keywords and empty
/// proofs never reach the backend.
pub fn precheck(job: &VerificationJob, mode: CheckMode) -> Option<VerificationVerdict> {
    if mode == CheckMode::Syntax {
        return None;
    }
    if let Some(keyword) = scan_forbidden(&job.proof_candidate) {
        return Some(VerificationVerdict::new(
            job.job_id.clone(),
            Status::ForbiddenKeyword,
            format!("proof uses forbidden keyword `{keyword}`"),
        ));
    }
    let body = job.proof_candidate.trim();
    if body.is_empty() || body == ":=" {
        return Some(VerificationVerdict::new(job.job_id.clone(), Status::Fail, "empty proof candidate"));
    }
    None
}

pub fn verify<B: Backend + ?Sized>(backend: &B, job: &VerificationJob) -> VerificationVerdict {
    precheck(job, CheckMode::Proof).unwrap_or_else(|| backend.check(job, CheckMode::Proof))
}

fn run_checked<B: Backend + ?Sized>(backend: &B, jobs: &[VerificationJob], mode: CheckMode) -> Vec<VerificationVerdict> {
    let mut verdicts: Vec<Option<VerificationVerdict>> = jobs.iter().map(|j| precheck(j, mode)).collect();
    let pending: Vec<(usize, (&VerificationJob, CheckMode))> = jobs
        .iter()
        .enumerate()
        .filter(|(i, _)| verdicts[*i].is_none())
        .map(|(i, j)| (i, (j, mode)))
        .collect();
    let batch: Vec<(&VerificationJob, CheckMode)> = pending.iter().map(|(_, p)| *p).collect();
    for ((idx, _), verdict) in pending.iter().zip(backend.check_batch(&batch)) {
        verdicts[*idx] = Some(verdict);
    }
    verdicts.into_iter().flatten().collect()
}

/// Verifies every job; output is order-aligned with the input and no job's
/// failure affects another's verdict.
pub fn verify_batch<B: Backend + ?Sized>(backend: &B, jobs: &[VerificationJob]) -> Vec<VerificationVerdict> {
    run_checked(backend, jobs, CheckMode::Proof)
}

/// Does `statement` elaborate under `header`? Provability is not asked.
pub fn check_statement_syntax<B: Backend + ?Sized>(
    backend: &B,
    job_id: &str,
    header: &str,
    statement: &str,
    timeout_secs: f64,
) -> Result<VerificationVerdict> {
    let job = syntax_job(job_id, header, statement, timeout_secs)?;
    Ok(backend.check(&job, CheckMode::Syntax))
}

/// Batch form of [`check_statement_syntax`] over jobs built by [`syntax_job`].
pub fn check_syntax_batch<B: Backend + ?Sized>(backend: &B, jobs: &[VerificationJob]) -> Vec<VerificationVerdict> {
    run_checked(backend, jobs, CheckMode::Syntax)
}

fn is_error_line(line: &str) -> bool {
    let line = line.trim_start();
    line.starts_with("error:") || line.contains(": error:") || line.contains(": error ")
}

/// Maps a toolchain run to a status. A run passes when it exited cleanly,
/// printed no error-severity message and, in proof mode, did not rely on
/// `sorry`.
pub fn classify_output(mode: CheckMode, exit_success: bool, output: &str) -> Status {
    let has_error = output.lines().any(is_error_line);
    let uses_sorry = output.contains(SORRY_WARNING);
    let clean = exit_success && !has_error;
    match mode {
        CheckMode::Proof if clean && !uses_sorry => Status::Pass,
        CheckMode::Syntax if clean => Status::Pass,
        _ => Status::Fail,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    pub key: String,
    pub status: Status,
    #[serde(default)]
    pub diagnostics: String,
}

/// Substring rule; every given condition must hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(default)]
    pub mode: Option<CheckMode>,
    #[serde(default)]
    pub statement_contains: Option<String>,
    #[serde(default)]
    pub proof_contains: Option<String>,
    #[serde(default)]
    pub header_contains: Option<String>,
    pub status: Status,
    #[serde(default)]
    pub diagnostics: String,
}

impl StubRule {
    fn matches(&self, job: &VerificationJob, mode: CheckMode) -> bool {
        let contains = |needle: &Option<String>, hay: &str| needle.as_deref().is_none_or(|n| hay.contains(n));
        self.mode.is_none_or(|m| m == mode)
            && contains(&self.statement_contains, &job.statement)
            && contains(&self.proof_contains, &job.proof_candidate)
            && contains(&self.header_contains, &job.header)
    }
}

fn default_status() -> Status {
    Status::Fail
}

/// Verdict table for the stub backend: exact content keys first, then
/// ordered substring rules, then the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubTable {
    #[serde(default = "default_status")]
    pub default: Status,
    #[serde(default)]
    pub entries: Vec<StubEntry>,
    #[serde(default)]
    pub rules: Vec<StubRule>,
}

impl Default for StubTable {
    fn default() -> Self {
        StubTable { default: default_status(), entries: Vec::new(), rules: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    table: StubTable,
    index: BTreeMap<String, usize>,
}

impl StubBackend {
    pub fn new(table: StubTable) -> Self {
        let index = table.entries.iter().enumerate().map(|(i, e)| (e.key.clone(), i)).collect();
        StubBackend { table, index }
    }
}

impl Backend for StubBackend {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        let key = job.content_key(mode);
        let (status, diagnostics) = if let Some(&i) = self.index.get(&key) {
            let e = &self.table.entries[i];
            (e.status, e.diagnostics.clone())
        } else if let Some(rule) = self.table.rules.iter().find(|r| r.matches(job, mode)) {
            (rule.status, rule.diagnostics.clone())
        } else {
            let diagnostics = match self.table.default {
                Status::Pass => String::new(),
                _ => "stub: no matching entry".to_string(),
            };
            (self.table.default, diagnostics)
        };
        VerificationVerdict::new(job.job_id.clone(), status, diagnostics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::Cell;

    struct Counting<'a> {
        calls: &'a Cell<usize>,
        status: Status,
    }

    impl Backend for Counting<'_> {
        fn check(&self, job: &VerificationJob, _mode: CheckMode) -> VerificationVerdict {
            self.calls.set(self.calls.get() + 1);
            VerificationVerdict::new(job.job_id.clone(), self.status, "")
        }
    }

    fn job(proof: &str) -> VerificationJob {
        VerificationJob::new("j", "import Mathlib", "theorem t : 1 + 1 = 2", proof, 300.0).unwrap()
    }

    #[test]
    fn composition() {
        assert_eq!(job(":= by norm_num").composed_source(), "import Mathlib\ntheorem t : 1 + 1 = 2 := by norm_num\n");
        let bare = VerificationJob::new("j", "", "theorem t : True", ":= trivial", 1.0).unwrap();
        assert_eq!(bare.composed_source(), "theorem t : True := trivial\n");
    }

    #[test]
    fn job_preconditions() {
        assert!(VerificationJob::new("j", "h", "  ", ":= rfl", 1.0).is_err());
        assert!(VerificationJob::new("j", "h", "theorem t : True", ":= rfl", 0.0).is_err());
        assert!(VerificationJob::new("j", "h", "theorem t : True", ":= rfl", f64::NAN).is_err());
    }

    #[test]
    fn forbidden_keywords_never_reach_the_backend() {
        let calls = Cell::new(0);
        let backend = Counting { calls: &calls, status: Status::Pass };
        let verdict = verify(&backend, &job(":= by\n  admit"));
        assert_eq!(verdict.status, Status::ForbiddenKeyword);
        assert_eq!(calls.get(), 0);
        assert_eq!(verify(&backend, &job(":= by norm_num")).status, Status::Pass);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn syntax_check_tolerates_its_own_sorry() {
        let calls = Cell::new(0);
        let backend = Counting { calls: &calls, status: Status::Pass };
        let v = check_statement_syntax(&backend, "s", "import Mathlib", "theorem t : True", 5.0).unwrap();
        assert_eq!(v.status, Status::Pass);
        assert_eq!(calls.get(), 1);
        assert!(check_statement_syntax(&backend, "s", "import Mathlib", "", 5.0).is_err());
    }

    #[test]
    fn batch_is_order_aligned() {
        let calls = Cell::new(0);
        let backend = Counting { calls: &calls, status: Status::Fail };
        let jobs = [job(":= by simp"), job(":= sorry"), job(":= by ring")];
        let statuses: Vec<Status> = verify_batch(&backend, &jobs).iter().map(|v| v.status).collect();
        assert_eq!(statuses, [Status::Fail, Status::ForbiddenKeyword, Status::Fail]);
        assert_eq!(calls.get(), 2);
        assert!(verify_batch(&backend, &[]).is_empty());
    }

    #[test]
    fn empty_proofs_fail_without_compiling() {
        let calls = Cell::new(0);
        let backend = Counting { calls: &calls, status: Status::Pass };
        assert_eq!(verify(&backend, &job(":=")).status, Status::Fail);
        assert_eq!(verify(&backend, &job("")).status, Status::Fail);
        assert_eq!(calls.get(), 0);
    }

    #[test]
    fn output_classification() {
        let sorry = "T.lean:1:8: warning: declaration uses 'sorry'";
        assert_eq!(classify_output(CheckMode::Proof, true, ""), Status::Pass);
        assert_eq!(classify_output(CheckMode::Proof, true, sorry), Status::Fail);
        assert_eq!(classify_output(CheckMode::Syntax, true, sorry), Status::Pass);
        let err = "T.lean:2:4: error: unknown identifier 'frobulate'";
        assert_eq!(classify_output(CheckMode::Syntax, false, err), Status::Fail);
        assert_eq!(classify_output(CheckMode::Proof, true, err), Status::Fail);
        assert_eq!(classify_output(CheckMode::Proof, false, ""), Status::Fail);
        let lint = "T.lean:2:4: warning: unused variable `h`";
        assert_eq!(classify_output(CheckMode::Proof, true, lint), Status::Pass);
    }

    #[test]
    fn stub_lookup_order() {
        let pass_job = job(":= by norm_num");
        let table = StubTable {
            default: Status::Fail,
            entries: alloc::vec![StubEntry {
                key: pass_job.content_key(CheckMode::Proof),
                status: Status::Pass,
                diagnostics: String::new(),
            }],
            rules: alloc::vec![StubRule {
                mode: Some(CheckMode::Syntax),
                statement_contains: None,
                proof_contains: None,
                header_contains: None,
                status: Status::Pass,
                diagnostics: String::new(),
            }],
        };
        let stub = StubBackend::new(table);
        assert_eq!(verify(&stub, &pass_job).status, Status::Pass);
        assert_eq!(verify(&stub, &job(":= by rfl")).status, Status::Fail);
        let v = check_statement_syntax(&stub, "s", "import Mathlib", "theorem t : 1 + 1 = 2", 1.0).unwrap();
        assert_eq!(v.status, Status::Pass);
    }
}
