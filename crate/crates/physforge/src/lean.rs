//! Lean toolchain backend: one scratch file per job inside a prebuilt Lake
//! project, checked with `lake env lean` under a wall-clock limit.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use physforge_core::verify::{classify_output, Backend, CheckMode, Status, VerificationJob, VerificationVerdict};

pub const SCRATCH_DIR: &str = "PhysforgeScratch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeanConfig {
    /// Lake project whose dependencies are already built.
    pub project_dir: PathBuf,
    /// Expected `lean --version`; empty disables the check.
    #[serde(default = "default_version")]
    pub toolchain_version: String,
    /// Program and leading arguments; the scratch file path is appended.
    #[serde(default = "default_command")]
    pub command: Vec<String>,
    /// Keep scratch files of passing jobs too.
    #[serde(default)]
    pub keep_files: bool,
}

fn default_version() -> String {
    physforge_core::verify::DEFAULT_TOOLCHAIN_VERSION.to_string()
}

fn default_command() -> Vec<String> {
    vec!["lake".into(), "env".into(), "lean".into()]
}

impl LeanConfig {
    pub fn new(project_dir: impl Into<PathBuf>) -> Self {
        LeanConfig {
            project_dir: project_dir.into(),
            toolchain_version: default_version(),
            command: default_command(),
            keep_files: false,
        }
    }
}

struct RunOutput {
    success: bool,
    timed_out: bool,
    output: String,
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `program args` in `cwd`, killing it after `timeout`. Both pipes are
/// drained on their own threads so chatty output cannot block the child.
fn run(program: &str, args: &[&str], cwd: &Path, timeout: Duration) -> std::io::Result<RunOutput> {
    let mut cmd = Command::new(program);
    cmd.args(args).current_dir(cwd).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    // Own process group, so a timeout also kills what `lake` spawned.
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let (success, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => (status.success(), false),
        None => {
            #[cfg(unix)]
            if let Ok(pid) = i32::try_from(child.id()) {
                // SAFETY: plain syscall on the child's own process group.
                unsafe { libc::kill(-pid, libc::SIGKILL) };
            }
            let _ = child.kill();
            let _ = child.wait();
            (false, true)
        }
    };
    let mut output = out.join().unwrap_or_default();
    output.push_str(&err.join().unwrap_or_default());
    Ok(RunOutput { success, timed_out, output })
}

pub struct LeanBackend {
    cfg: LeanConfig,
    /// Why the toolchain is unusable, found once at construction.
    unavailable: Option<String>,
}

impl LeanBackend {
    /// Probes the toolchain once. A missing or mismatched toolchain does not
    /// fail here; every job then reports `ToolchainError`.
    pub fn new(cfg: LeanConfig) -> Self {
        let unavailable = Self::probe(&cfg).err();
        if let Some(why) = &unavailable {
            warn!("Lean toolchain unusable: {why}");
        }
        LeanBackend { cfg, unavailable }
    }

    pub fn is_available(&self) -> bool {
        self.unavailable.is_none()
    }

    fn probe(cfg: &LeanConfig) -> Result<(), String> {
        if !cfg.project_dir.is_dir() {
            return Err(format!("project directory {} does not exist", cfg.project_dir.display()));
        }
        let (program, rest) = cfg.command.split_first().ok_or("empty toolchain command")?;
        let mut args: Vec<&str> = rest.iter().map(String::as_str).collect();
        args.push("--version");
        let out = run(program, &args, &cfg.project_dir, Duration::from_secs(120))
            .map_err(|e| format!("cannot run {program}: {e}"))?;
        if !out.success {
            return Err(format!("`{} --version` failed: {}", cfg.command.join(" "), out.output.trim()));
        }
        if !cfg.toolchain_version.is_empty() && !out.output.contains(&format!("version {}", cfg.toolchain_version)) {
            return Err(format!("expected Lean {}, found: {}", cfg.toolchain_version, out.output.trim()));
        }
        debug!("toolchain: {}", out.output.trim());
        Ok(())
    }

    fn scratch_path(&self, job: &VerificationJob, mode: CheckMode) -> PathBuf {
        let key = job.content_key(mode);
        self.cfg.project_dir.join(SCRATCH_DIR).join(format!("Job_{}.lean", &key[..24]))
    }
}

impl Backend for LeanBackend {
    fn check(&self, job: &VerificationJob, mode: CheckMode) -> VerificationVerdict {
        let started = Instant::now();
        let verdict = |status, diagnostics: String| {
            let mut v = VerificationVerdict::new(job.job_id.clone(), status, diagnostics);
            v.wall_time = started.elapsed().as_secs_f64();
            v
        };
        if let Some(why) = &self.unavailable {
            return verdict(Status::ToolchainError, why.clone());
        }
        let path = self.scratch_path(job, mode);
        let written = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&path, job.composed_source()));
        if let Err(e) = written {
            return verdict(Status::ToolchainError, format!("cannot write {}: {e}", path.display()));
        }
        let (program, rest) = self.cfg.command.split_first().expect("probe rejects an empty command");
        let rel = path.strip_prefix(&self.cfg.project_dir).unwrap_or(&path).to_string_lossy().into_owned();
        let mut args: Vec<&str> = rest.iter().map(String::as_str).collect();
        args.push(&rel);
        let timeout = Duration::from_secs_f64(job.timeout_secs);
        let result = match run(program, &args, &self.cfg.project_dir, timeout) {
            Err(e) => verdict(Status::ToolchainError, format!("cannot run {program}: {e}")),
            Ok(out) if out.timed_out => verdict(Status::Timeout, format!("killed after {:.1}s\n{}", job.timeout_secs, out.output)),
            Ok(out) => verdict(classify_output(mode, out.success, &out.output), out.output),
        };
        if result.status == Status::Pass && !self.cfg.keep_files {
            let _ = std::fs::remove_file(&path);
        } else if result.status != Status::Pass {
            debug!("kept {} for inspection", path.display());
        }
        result
    }
}
