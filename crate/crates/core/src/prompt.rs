//! Prompt templates for prover sampling and conjecture generation.
//!
//! Prover prompts restate the problem with a `sorry` placeholder in the user
//! turn and pre-fill the assistant turn with header + statement up to `:=`,
//! so the model only has to write the proof continuation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::split_declarations;
use crate::error::{Error, Result};
use crate::lexer::declaration_name;
use crate::record::TheoremRecord;

pub const SYSTEM_PROMPT: &str = "You are an expert in mathematics, physics and Lean 4.";

const PROVER_USER: &str = "Think about and solve the following problem step by step in Lean 4. -> Directly give the formal statement in Lean 4.

# Problem: {problem}
# Formal statement:
```lean4
{code}
  sorry
```";

const PROVER_ASSISTANT: &str = "```lean4\n{code}";

const DEEPSEEK_LAYOUT: &str = "<|begin_of_sentence|> {system}\n<|User|>{user}\n\n<|Assistant|>\n{assistant}";

const KIMINA_LAYOUT: &str =
    "<|im_start|>system\n{system}<|im_end|>\n<|im_start|>user\n{user}<|im_end|>\n<|im_start|>assistant\n{assistant}";

/// Chat-format markers of the two prover layouts.
pub const SPECIAL_TOKENS: &[&str] = &[
    "<|begin_of_sentence|>",
    "<|User|>",
    "<|Assistant|>",
    "<|im_start|>system",
    "<|im_start|>user",
    "<|im_start|>assistant",
    "<|im_end|>",
];

const PROPRIETARY_COT: &str = "Complete the following Lean 4 code:

```lean4
{code}
```

Before producing the Lean 4 code to formally prove the given theorem, provide a proof plan outlining the main proof steps and strategies.

The plan should highlight key ideas, intermediate lemmas, and proof structures that will guide the construction of the final formal proof.";

const CONJECTURE_GEN: &str = "You are an expert in mathematics, physics and Lean 4.
You are provided a context, a lemma, and a proof. Your task is to generate a list of 10 related physics conjecture in formal language based on the context and the seed language statements.

The conjectures should be:
1. A meaningful variant of the original theorem: modify hypotheses, generalize structures, or extend scope while keeping the core mathematical insight.
2. Must differ significantly in mathematical content (changed assumptions, stronger/weaker conclusions, or different algebraic structures) but remain recognizably related.
3. The new conjecture should be in formal language.
4. Do not include the proof.

When generating the conjectures, preserve all specific Lean identifiers exactly as they appear in the formal statement. You can also refer to the original formal statement.

Context:
{context}

Natural Language Statement:
{nq}

Original Formal Statement:
{theorem}

Return the final conjectures in JSON format as a dictionary where:
- The key is \"conjectures\"
- The value is a list of dictionaries
- Each dictionary in the list has a key \"statement\" whose value is a string containing one conjecture

Please read, understand, and then generate a list of conjectures.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[default]
    Deepseek,
    KiminaGoedel,
    ProprietaryCot,
    ConjectureGen,
}

impl PromptStyle {
    /// Styles whose assistant turn is pre-filled up to `:=`.
    pub fn prefills_statement(self) -> bool {
        matches!(self, PromptStyle::Deepseek | PromptStyle::KiminaGoedel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    fn new(role: Role, content: String) -> Self {
        ChatMessage { role, content }
    }
}

/// A prompt in both wire shapes: the raw single-string form (with the
/// model family's special tokens) and structured chat messages, where a
/// trailing assistant message is a pre-fill to continue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub style: PromptStyle,
    pub text: String,
    pub messages: Vec<ChatMessage>,
}

impl RenderedPrompt {
    pub fn continues_assistant(&self) -> bool {
        self.messages.last().is_some_and(|m| m.role == Role::Assistant)
    }
}

/// Substitutes `{name}` placeholders in one pass; substituted values are not
/// rescanned, so Lean braces in them are safe. Unknown placeholders are an
/// error.
pub fn fill(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(name) if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::input(alloc::format!("unbound template placeholder {{{name}}}")))?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Header, doc comment and statement as one Lean snippet ending in `:=`.
fn code_prefix(record: &TheoremRecord) -> String {
    let mut code = String::new();
    let header = record.header.trim_end();
    if !header.is_empty() {
        code.push_str(header);
        code.push_str("\n\n");
    }
    if let Some(doc) = record.doc_comment.as_deref() {
        code.push_str(doc.trim());
        code.push('\n');
    }
    code.push_str(record.statement.trim());
    code.push_str(" :=");
    code
}

fn prover_prompt(record: &TheoremRecord, style: PromptStyle) -> Result<RenderedPrompt> {
    let code = code_prefix(record);
    let problem = record.problem_text();
    let user = fill(PROVER_USER, &[("problem", &problem), ("code", &code)])?;
    let assistant = fill(PROVER_ASSISTANT, &[("code", &code)])?;
    let layout = if style == PromptStyle::Deepseek { DEEPSEEK_LAYOUT } else { KIMINA_LAYOUT };
    let text = fill(layout, &[("system", SYSTEM_PROMPT), ("user", &user), ("assistant", &assistant)])?;
    Ok(RenderedPrompt {
        style,
        text,
        messages: alloc::vec![
            ChatMessage::new(Role::System, SYSTEM_PROMPT.to_string()),
            ChatMessage::new(Role::User, user),
            ChatMessage::new(Role::Assistant, assistant),
        ],
    })
}

fn single_user(style: PromptStyle, text: String) -> RenderedPrompt {
    RenderedPrompt { style, messages: alloc::vec![ChatMessage::new(Role::User, text.clone())], text }
}

pub fn render_prompt(record: &TheoremRecord, style: PromptStyle) -> Result<RenderedPrompt> {
    if record.header.trim().is_empty() || record.statement.trim().is_empty() {
        return Err(Error::input(alloc::format!(
            "record {}: prompts need a nonempty header and statement",
            record.id
        )));
    }
    match style {
        PromptStyle::Deepseek | PromptStyle::KiminaGoedel => prover_prompt(record, style),
        PromptStyle::ProprietaryCot => {
            let code = alloc::format!("{}\n  sorry", code_prefix(record));
            Ok(single_user(style, fill(PROPRIETARY_COT, &[("code", &code)])?))
        }
        PromptStyle::ConjectureGen => {
            let theorem = alloc::format!("{} := sorry", record.statement.trim());
            let text = fill(
                CONJECTURE_GEN,
                &[("context", record.header.trim()), ("nq", &record.problem_text()), ("theorem", &theorem)],
            )?;
            Ok(single_user(style, text))
        }
    }
}

/// Removes chat special tokens and collapses whitespace, leaving only the
/// shared body of a prover prompt.
pub fn strip_special_tokens(text: &str) -> String {
    let mut out = String::from(text);
    for token in SPECIAL_TOKENS {
        out = out.replace(token, " ");
    }
    crate::lexer::normalize_whitespace(&out)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// Recovers the proof (starting with `:=`) that a completion proposes for
/// `statement`.
///
/// Pre-filled styles continue right after `:=`, so the proof is everything
/// up to the closing code fence. Other styles answer with a full code block,
/// from which the declaration with the statement's name is taken.
pub fn extract_proof(completion: &str, statement: &str, style: PromptStyle) -> Option<String> {
    if style.prefills_statement() {
        let body = completion.split("```").next().unwrap_or("").trim_end();
        if body.trim().is_empty() {
            return None;
        }
        let trimmed = body.trim_start();
        return Some(if trimmed.starts_with(":=") {
            trimmed.to_string()
        } else {
            alloc::format!(":={body}")
        });
    }
    let wanted = declaration_name(statement);
    fenced_blocks(completion).into_iter().rev().find_map(|block| {
        let decls = split_declarations(block);
        let decl = match wanted {
            Some(name) => decls.into_iter().rev().find(|d| d.name() == Some(name)),
            None => decls.into_iter().next_back(),
        }?;
        (!decl.proof.is_empty()).then(|| decl.proof.to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> TheoremRecord {
        TheoremRecord::new(
            "M.lean",
            "import Mathlib\n\nopen Nat\n\n",
            "theorem t {n : ℕ} : n + 0 = n",
            ":= by simp",
            Some("/-- Adding zero. -/".to_string()),
            10,
        )
    }

    #[test]
    fn fill_leaves_lean_braces_alone() {
        let out = fill("a {x} b", &[("x", "{d : ℕ} {y}")]).unwrap();
        assert_eq!(out, "a {d : ℕ} {y} b");
        assert!(fill("{missing}", &[]).is_err());
        assert_eq!(fill("{ not a placeholder }", &[]).unwrap(), "{ not a placeholder }");
    }

    #[test]
    fn prover_layout() {
        let p = render_prompt(&record(), PromptStyle::Deepseek).unwrap();
        assert!(p.text.starts_with("<|begin_of_sentence|> You are an expert"));
        assert!(p.text.contains("# Problem: Adding zero.\n"));
        assert!(p.text.contains("theorem t {n : ℕ} : n + 0 = n :=\n  sorry\n```\n\n<|Assistant|>\n```lean4\n"));
        assert!(p.text.ends_with("/-- Adding zero. -/\ntheorem t {n : ℕ} : n + 0 = n :="));
        assert!(p.continues_assistant());
        assert_eq!(p.messages.len(), 3);
    }

    #[test]
    fn rendering_is_deterministic() {
        for style in [PromptStyle::Deepseek, PromptStyle::KiminaGoedel, PromptStyle::ProprietaryCot, PromptStyle::ConjectureGen] {
            let a = render_prompt(&record(), style).unwrap();
            let b = render_prompt(&record(), style).unwrap();
            assert_eq!(a, b);
            for name in ["{problem}", "{code}", "{system}", "{user}", "{assistant}", "{context}", "{nq}", "{theorem}"] {
                assert!(!a.text.contains(name), "{style:?} left {name}");
            }
        }
    }

    #[test]
    fn families_differ_only_in_special_tokens() {
        let a = render_prompt(&record(), PromptStyle::Deepseek).unwrap();
        let b = render_prompt(&record(), PromptStyle::KiminaGoedel).unwrap();
        assert_ne!(a.text, b.text);
        assert_eq!(strip_special_tokens(&a.text), strip_special_tokens(&b.text));
        assert_eq!(a.messages, b.messages);
    }

    #[test]
    fn cot_and_conjecture_wording() {
        let cot = render_prompt(&record(), PromptStyle::ProprietaryCot).unwrap();
        assert!(cot.text.starts_with("Complete the following Lean 4 code:\n\n```lean4\nimport Mathlib"));
        assert!(cot.text.contains("provide a proof plan outlining the main proof steps"));
        let gen = render_prompt(&record(), PromptStyle::ConjectureGen).unwrap();
        assert!(gen.text.contains("Context:\nimport Mathlib\n\nopen Nat\n\nNatural Language Statement:\nAdding zero.\n"));
        assert!(gen.text.contains("Original Formal Statement:\ntheorem t {n : ℕ} : n + 0 = n := sorry\n"));
    }

    #[test]
    fn missing_doc_uses_the_name() {
        let mut r = record();
        r.doc_comment = None;
        let p = render_prompt(&r, PromptStyle::Deepseek).unwrap();
        assert!(p.text.contains("# Problem: t\n"));
    }

    #[test]
    fn empty_header_is_rejected() {
        let mut r = record();
        r.header.clear();
        assert!(render_prompt(&r, PromptStyle::Deepseek).is_err());
    }

    #[test]
    fn proof_extraction_for_prefilled_styles() {
        let stmt = "theorem t : True";
        assert_eq!(extract_proof(" by\n  trivial\n```\nDone.", stmt, PromptStyle::Deepseek).as_deref(), Some(":= by\n  trivial"));
        assert_eq!(extract_proof(":= trivial", stmt, PromptStyle::KiminaGoedel).as_deref(), Some(":= trivial"));
        assert_eq!(extract_proof("```", stmt, PromptStyle::Deepseek), None);
        assert_eq!(extract_proof("", stmt, PromptStyle::Deepseek), None);
    }

    #[test]
    fn proof_extraction_from_code_blocks() {
        let answer = "Plan: use simp.\n```lean4\nimport Mathlib\n\ntheorem helper : True := trivial\n\ntheorem t : True := by\n  exact helper\n```\nThat is all.";
        let proof = extract_proof(answer, "theorem t : True", PromptStyle::ProprietaryCot);
        assert_eq!(proof.as_deref(), Some(":= by\n  exact helper"));
        assert_eq!(extract_proof("no code here", "theorem t : True", PromptStyle::ProprietaryCot), None);
    }
}
