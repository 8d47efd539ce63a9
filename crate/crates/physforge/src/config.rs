//! Pipeline configuration: one TOML file, `${VAR}` interpolation in string
//! values, and validation that names the offending field.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use physforge_core::corpus::CategoryRule;
use physforge_core::grpo::GrpoConfig;
use physforge_core::prompt::PromptStyle;
use physforge_core::verify::DEFAULT_TIMEOUT_SECS;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_root: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub project_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { corpus_root: None, work_dir: PathBuf::from("work"), project_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub max_tokens: usize,
    pub ratio_train: f64,
    pub exact_counts: Option<(usize, usize)>,
    /// Replaces the built-in path-to-category table when set.
    pub category_rules: Option<Vec<CategoryRule>>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings { max_tokens: 4096, ratio_train: 0.9, exact_counts: None, category_rules: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    LeanToolchain,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierSettings {
    pub backend: BackendKind,
    pub stub_table: Option<PathBuf>,
    pub toolchain_version: String,
    pub max_parallel: usize,
    pub default_timeout: f64,
    pub cache_dir: Option<PathBuf>,
    /// Overrides `lake env lean`.
    pub command: Option<Vec<String>>,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            backend: BackendKind::default(),
            stub_table: None,
            toolchain_version: physforge_core::verify::DEFAULT_TOOLCHAIN_VERSION.to_string(),
            max_parallel: 8,
            default_timeout: DEFAULT_TIMEOUT_SECS,
            cache_dir: None,
            command: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    #[default]
    Http,
    /// Offline replay from a mock rule file.
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wire {
    /// `/chat/completions` with structured messages.
    #[default]
    Chat,
    /// `/completions` with the raw prompt string.
    Completions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    #[serde(default)]
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_id: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout: f64,
    #[serde(default)]
    pub supports_logprobs: bool,
    #[serde(default)]
    pub style: PromptStyle,
    #[serde(default)]
    pub wire: Wire,
    /// Concurrent requests to this endpoint.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Fixed share of the provability budget.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub mock_file: Option<PathBuf>,
}

fn default_max_new_tokens() -> usize {
    2048
}
fn default_temperature() -> f64 {
    1.0
}
fn default_request_timeout() -> f64 {
    600.0
}
fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjectureSettings {
    pub generator: Option<String>,
    pub per_seed: usize,
    pub provers: Vec<String>,
    pub n_proofs: usize,
}

impl Default for ConjectureSettings {
    fn default() -> Self {
        ConjectureSettings { generator: None, per_seed: 10, provers: Vec::new(), n_proofs: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlSettings {
    /// Endpoint sampled for GRPO groups; without one, `pipeline` stops after
    /// writing the curriculum-ordered training set.
    pub policy_endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k: usize,
    pub categories: Vec<String>,
    pub n_ppl_samples: usize,
    pub ppl_sample_count_per_split: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: 16,
            categories: physforge_core::Category::ALL.iter().map(|c| c.label().to_string()).collect(),
            n_ppl_samples: 16,
            ppl_sample_count_per_split: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub ppl: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub verifier: VerifierSettings,
    pub endpoints: Vec<EndpointConfig>,
    pub conjecture: ConjectureSettings,
    pub grpo: GrpoConfig,
    pub rl: RlSettings,
    pub eval: EvalSettings,
    pub seeds: Seeds,
}

/// Replaces `${NAME}` with the environment variable's value; `$${` escapes.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        let after = &rest[at + 1..];
        if let Some(tail) = after.strip_prefix("${") {
            out.push_str("${");
            rest = tail;
        } else if let Some(tail) = after.strip_prefix('{') {
            let end = tail.find('}').ok_or_else(|| "unterminated ${".to_string())?;
            let name = &tail[..end];
            let value = lookup(name).ok_or_else(|| format!("environment variable {name} is not set"))?;
            out.push_str(&value);
            rest = &tail[end + 1..];
        } else {
            out.push('$');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(value: &mut toml::Value, path: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
    match value {
        toml::Value::String(s) => *s = interpolate(s, lookup).map_err(|m| field_err(path, m))?,
        toml::Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                interpolate_value(v, &format!("{path}[{i}]"), lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (k, v) in t.iter_mut() {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                interpolate_value(v, &p, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut table: toml::Value =
            toml::from_str::<toml::Table>(text).map(toml::Value::Table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        interpolate_value(&mut table, "", lookup)?;
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text, &|name| std::env::var(name).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.corpus.ratio_train > 0.0 && self.corpus.ratio_train < 1.0) {
            return Err(field_err("corpus.ratio_train", "must lie strictly between 0 and 1"));
        }
        if self.corpus.max_tokens == 0 {
            return Err(field_err("corpus.max_tokens", "must be positive"));
        }
        if self.verifier.max_parallel == 0 {
            return Err(field_err("verifier.max_parallel", "must be at least 1"));
        }
        if !(self.verifier.default_timeout > 0.0) {
            return Err(field_err("verifier.default_timeout", "must be positive"));
        }
        if self.verifier.backend == BackendKind::Stub && self.verifier.stub_table.is_none() {
            return Err(field_err("verifier.stub_table", "required by the stub backend"));
        }
        let mut names = BTreeSet::new();
        for (i, e) in self.endpoints.iter().enumerate() {
            let f = |k: &str| format!("endpoints[{i}].{k}");
            if e.name.is_empty() || !names.insert(e.name.as_str()) {
                return Err(field_err(f("name"), format!("`{}` is empty or not unique", e.name)));
            }
            if !(e.temperature >= 0.0) {
                return Err(field_err(f("temperature"), "must be nonnegative"));
            }
            if e.max_in_flight == 0 {
                return Err(field_err(f("max_in_flight"), "must be at least 1"));
            }
            match e.kind {
                EndpointKind::Http if e.base_url.is_empty() => return Err(field_err(f("base_url"), "required for http endpoints")),
                EndpointKind::Mock if e.mock_file.is_none() => return Err(field_err(f("mock_file"), "required for mock endpoints")),
                _ => {}
            }
        }
        let known = |name: &str| names.contains(name);
        if let Some(g) = &self.conjecture.generator {
            if !known(g) {
                return Err(field_err("conjecture.generator", format!("unknown endpoint `{g}`")));
            }
        }
        for (i, p) in self.conjecture.provers.iter().enumerate() {
            if !known(p) {
                return Err(field_err(format!("conjecture.provers[{i}]"), format!("unknown endpoint `{p}`")));
            }
        }
        if let Some(p) = &self.rl.policy_endpoint {
            if !known(p) {
                return Err(field_err("rl.policy_endpoint", format!("unknown endpoint `{p}`")));
            }
        }
        if self.conjecture.per_seed == 0 {
            return Err(field_err("conjecture.per_seed", "must be at least 1"));
        }
        if self.conjecture.n_proofs == 0 {
            return Err(field_err("conjecture.n_proofs", "must be at least 1"));
        }
        self.grpo.validate().map_err(|e| field_err("grpo", e.to_string()))?;
        if self.eval.k == 0 {
            return Err(field_err("eval.k", "must be at least 1"));
        }
        if self.eval.n_ppl_samples == 0 {
            return Err(field_err("eval.n_ppl_samples", "must be at least 1"));
        }
        Ok(())
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// SHA-256 of the canonical JSON form, stamped into manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        physforge_core::hash::sha256_hex(json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(name: &str) -> Option<String> {
        (name == "PROVER_URL").then(|| "http://localhost:8000/v1".to_string())
    }

    const SAMPLE: &str = r#"
[paths]
work_dir = "out"

[verifier]
backend = "stub"
stub_table = "stub.json"
max_parallel = 4

[[endpoints]]
name = "ds"
base_url = "${PROVER_URL}"
model_id = "prover-7b"
api_key_env = "DS_KEY"
supports_logprobs = true

[conjecture]
provers = ["ds"]

[grpo]
group_size = 8
"#;

    #[test]
    fn parses_and_interpolates() {
        let cfg = PipelineConfig::from_toml_str(SAMPLE, &env).unwrap();
        assert_eq!(cfg.endpoints[0].base_url, "http://localhost:8000/v1");
        assert_eq!(cfg.grpo.group_size, 8);
        assert_eq!(cfg.grpo.clip_eps, 0.2);
        assert_eq!(cfg.verifier.default_timeout, 300.0);
        assert_eq!(cfg.endpoints[0].temperature, 1.0);
        assert_eq!(cfg.eval.k, 16);
    }

    #[test]
    fn missing_variable_names_the_field() {
        let err = PipelineConfig::from_toml_str(SAMPLE, &|_| None).unwrap_err().to_string();
        assert!(err.contains("endpoints[0].base_url") && err.contains("PROVER_URL"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let bad = SAMPLE.replace("max_parallel = 4", "max_parallel = 0");
        let err = PipelineConfig::from_toml_str(&bad, &env).unwrap_err().to_string();
        assert!(err.contains("verifier.max_parallel"), "{err}");
        let bad = SAMPLE.replace("provers = [\"ds\"]", "provers = [\"nope\"]");
        let err = PipelineConfig::from_toml_str(&bad, &env).unwrap_err().to_string();
        assert!(err.contains("conjecture.provers[0]"), "{err}");
    }

    #[test]
    fn escapes_and_plain_dollars() {
        assert_eq!(interpolate("a $${X} $5", &|_| None).unwrap(), "a ${X} $5");
        assert!(interpolate("${X", &|_| None).is_err());
    }
}
