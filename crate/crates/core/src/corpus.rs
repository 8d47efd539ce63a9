//! Lemma mining from Lean source text, category assignment and seeded
//! train/test splitting.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexer::{
    declaration_name, is_close_bracket, is_open_bracket, leading_word, mask, skip_decl_prefix,
    CommentKind, Masked,
};
use crate::record::{Category, Split, TheoremRecord};
use crate::scan::{scan_forbidden, ForbiddenKeyword};
use crate::tokens::TokenEstimator;

/// First words that begin a new top-level command when found in column 0.
const COMMAND_WORDS: &[&str] = &[
    "lemma", "theorem", "def", "instance", "example", "structure", "class", "inductive",
    "abbrev", "namespace", "end", "section", "open", "variable", "universe", "noncomputable",
    "private", "protected", "attribute", "set_option", "notation", "infix", "infixl", "infixr",
    "prefix", "postfix", "scoped", "local", "macro", "macro_rules", "syntax", "elab", "mutual",
    "opaque", "axiom", "export", "initialize", "deriving", "unsafe", "partial", "nonrec",
    "import", "irreducible_def", "alias", "add_decl_doc", "library_note", "assert_not_exists",
    "omit", "include", "unseal", "seal", "builtin_initialize", "register_option",
];

/// A `lemma`/`theorem` declaration split into its parts, before any
/// filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDeclaration<'a> {
    pub offset: usize,
    pub header: &'a str,
    pub doc_comment: Option<&'a str>,
    pub statement: &'a str,
    /// Starts with `:=` (or the first `|` of an equation-style proof); empty
    /// when no proof body could be located.
    pub proof: &'a str,
}

impl RawDeclaration<'_> {
    pub fn name(&self) -> Option<&str> {
        declaration_name(self.statement)
    }
}

fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = alloc::vec![0];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1).filter(|&i| i < text.len()));
    starts
}

/// Bracket depth at the start of every line of masked text.
fn depth_at_line_starts(masked: &str, starts: &[usize]) -> Vec<i32> {
    let mut depths = Vec::with_capacity(starts.len());
    let mut depth = 0i32;
    let mut next = 0;
    for (i, c) in masked.char_indices() {
        while next < starts.len() && starts[next] == i {
            depths.push(depth);
            next += 1;
        }
        if is_open_bracket(c) {
            depth += 1;
        } else if is_close_bracket(c) {
            depth = (depth - 1).max(0);
        }
    }
    while depths.len() < starts.len() {
        depths.push(depth);
    }
    depths
}

fn starts_command(src: &str, masked: &Masked, at: usize) -> bool {
    let original = &src[at..];
    if original.starts_with("--") || original.starts_with("/-") {
        return true;
    }
    let line = &masked.text[at..];
    let first = match line.chars().next() {
        Some(c) if !c.is_whitespace() => c,
        _ => return false,
    };
    if line.starts_with("@[") || first == '#' {
        return true;
    }
    COMMAND_WORDS.contains(&leading_word(line))
}

/// Offsets of column-0 lines at bracket depth zero that open a new command.
fn command_starts(src: &str, masked: &Masked) -> Vec<usize> {
    let starts = line_starts(&masked.text);
    let depths = depth_at_line_starts(&masked.text, &starts);
    let mut out = Vec::new();
    for (&at, &depth) in starts.iter().zip(&depths) {
        let in_comment = masked.comments.iter().any(|c| c.start < at && at < c.end);
        if depth == 0 && !in_comment && starts_command(src, masked, at) {
            out.push(at);
        }
    }
    out
}

/// Finds the top-level `:=` that closes a signature, or the first
/// line-leading `|` of an equation-style definition.
fn proof_start(masked: &str, from: usize, to: usize) -> Option<usize> {
    let region = &masked[from..to];
    let mut depth = 0i32;
    let mut line_blank = false;
    let mut prev = '\n';
    for (i, c) in region.char_indices() {
        if prev == '\n' {
            line_blank = true;
        }
        if is_open_bracket(c) {
            depth += 1;
        } else if is_close_bracket(c) {
            depth = (depth - 1).max(0);
        } else if depth == 0 {
            if c == ':' && region[i + 1..].starts_with('=') {
                return Some(from + i);
            }
            if c == '|' && line_blank {
                let line_end = region[i..].find('\n').map_or(region.len(), |n| i + n);
                if region[i..line_end].contains("=>") {
                    return Some(from + i);
                }
            }
        }
        if !c.is_whitespace() {
            line_blank = false;
        }
        prev = c;
    }
    None
}

/// Splits a Lean source file into its `lemma`/`theorem` declarations.
///
/// A declaration begins at a column-0 line whose first word, after
/// attributes and modifiers, is `lemma` or `theorem`, and runs until the next
/// column-0 command or end of file. The header is everything before the
/// declaration's doc comment.
pub fn split_declarations(src: &str) -> Vec<RawDeclaration<'_>> {
    let masked = mask(src);
    let starts = command_starts(src, &masked);
    let mut decls = Vec::new();

    for (idx, &start) in starts.iter().enumerate() {
        let stmt_at = skip_decl_prefix(&masked.text, start);
        let keyword = leading_word(&masked.text[stmt_at..]);
        if keyword != "lemma" && keyword != "theorem" {
            continue;
        }
        // A doc comment or `@[..]` line followed by the keyword line: the
        // earlier start already claimed this declaration.
        if idx > 0 && skip_decl_prefix(&masked.text, starts[idx - 1]) == stmt_at {
            continue;
        }
        let keyword_line = masked.text[..stmt_at].rfind('\n').map_or(0, |i| i + 1);
        let end = starts.iter().copied().find(|&s| s > keyword_line).unwrap_or(src.len());

        let rest = &masked.text[start..];
        let stmt_start = start + (rest.len() - rest.trim_start().len());
        let doc = masked
            .comments
            .iter()
            .filter(|c| c.kind == CommentKind::Doc && c.end <= stmt_start)
            .find(|c| src[c.end..stmt_start].trim().is_empty())
            .copied();
        // Ordinary comments right before the declaration stay in the header.
        let header_end = doc.map_or(stmt_start, |d| d.start);

        let (statement, proof) = match proof_start(&masked.text, stmt_at, end) {
            Some(p) => (src[stmt_start..p].trim_end(), src[p..end].trim_end()),
            None => (src[stmt_start..end].trim_end(), ""),
        };
        decls.push(RawDeclaration {
            offset: stmt_start,
            header: &src[..header_end],
            doc_comment: doc.map(|d| &src[d.start..d.end]),
            statement,
            proof,
        });
    }
    decls
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    NoProofBody,
    ForbiddenToken { keyword: ForbiddenKeyword },
    TooLong { tokens: usize, limit: usize },
}

impl core::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SkipReason::NoProofBody => f.write_str("no proof body"),
            SkipReason::ForbiddenToken { keyword } => write!(f, "proof uses `{keyword}`"),
            SkipReason::TooLong { tokens, limit } => {
                write!(f, "{tokens} estimated tokens, limit is below {limit}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDeclaration {
    pub source_path: String,
    pub offset: usize,
    pub name: Option<String>,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub records: Vec<TheoremRecord>,
    pub skipped: Vec<SkippedDeclaration>,
}

impl Extraction {
    pub fn append(&mut self, mut other: Extraction) {
        self.records.append(&mut other.records);
        self.skipped.append(&mut other.skipped);
    }
}

/// Mines every proved lemma of one file whose header + statement + proof
/// estimate stays strictly below `max_tokens`.
pub fn extract_source(
    source_path: &str,
    src: &str,
    max_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> Extraction {
    let mut out = Extraction::default();
    for decl in split_declarations(src) {
        let skip = |reason| SkippedDeclaration {
            source_path: source_path.to_string(),
            offset: decl.offset,
            name: decl.name().map(ToString::to_string),
            reason,
        };
        let body = decl.proof.strip_prefix(":=").unwrap_or(decl.proof);
        if body.trim().is_empty() {
            out.skipped.push(skip(SkipReason::NoProofBody));
            continue;
        }
        if let Some(keyword) = scan_forbidden(decl.proof) {
            out.skipped.push(skip(SkipReason::ForbiddenToken { keyword }));
            continue;
        }
        let tokens = estimator.estimate(decl.header)
            + estimator.estimate(decl.statement)
            + estimator.estimate(decl.proof);
        if tokens >= max_tokens {
            out.skipped.push(skip(SkipReason::TooLong { tokens, limit: max_tokens }));
            continue;
        }
        out.records.push(TheoremRecord::new(
            source_path,
            decl.header,
            decl.statement,
            decl.proof,
            decl.doc_comment.map(ToString::to_string),
            tokens,
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRule {
    /// A path component such as `QFT`, or a `/`-separated fragment such as
    /// `Particles/SuperSymmetry`.
    pub pattern: String,
    pub category: Category,
}

/// Ordered path rules; the first match wins and unmatched paths fall into
/// [`Category::Classical`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRules {
    pub rules: Vec<CategoryRule>,
}

impl Default for CategoryRules {
    fn default() -> Self {
        let rule = |pattern: &str, category| CategoryRule { pattern: pattern.to_string(), category };
        CategoryRules {
            rules: alloc::vec![
                rule("QFT", Category::Qft),
                rule("Relativity", Category::Relativity),
                rule("Particles", Category::ParticleString),
                rule("StringTheory", Category::ParticleString),
            ],
        }
    }
}

impl CategoryRules {
    /// Category for a path and whether an explicit rule matched.
    pub fn classify(&self, path: &str) -> (Category, bool) {
        let normalized = path.replace('\\', "/");
        let components: Vec<&str> = normalized.split('/').collect();
        for rule in &self.rules {
            let pattern = rule.pattern.trim_matches('/');
            let hit = if pattern.contains('/') {
                let padded = alloc::format!("/{normalized}/");
                padded.contains(&alloc::format!("/{pattern}/"))
            } else {
                components.contains(&pattern)
            };
            if hit {
                return (rule.category, true);
            }
        }
        (Category::Classical, false)
    }
}

/// Assigns a category to every record; returns how many fell through to the
/// catch-all bucket.
pub fn assign_categories(records: &mut [TheoremRecord], rules: &CategoryRules) -> usize {
    let mut unmatched = 0;
    for record in records {
        let (category, matched) = rules.classify(&record.source_path);
        record.category = category;
        if !matched {
            unmatched += 1;
        }
    }
    unmatched
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratio_train: f64,
    pub rng_seed: u64,
    pub exact_counts: Option<(usize, usize)>,
}

impl SplitConfig {
    pub fn validate(&self, corpus_size: usize) -> Result<()> {
        if !(self.ratio_train > 0.0 && self.ratio_train < 1.0) {
            return Err(Error::config(alloc::format!(
                "ratio_train must lie in (0, 1), got {}",
                self.ratio_train
            )));
        }
        if let Some((train, test)) = self.exact_counts {
            if train + test > corpus_size {
                return Err(Error::config(alloc::format!(
                    "exact_counts {train} + {test} exceed corpus size {corpus_size}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitOutcome {
    pub train: Vec<TheoremRecord>,
    pub test: Vec<TheoremRecord>,
    /// Records beyond `exact_counts`; always empty in ratio mode.
    pub unassigned: Vec<TheoremRecord>,
}

/// Seeded shuffle, then the first `n_train` shuffled records go to train and
/// the next `n_test` to test. Each output list keeps input order.
pub fn split_corpus(records: Vec<TheoremRecord>, cfg: &SplitConfig) -> Result<SplitOutcome> {
    if records.is_empty() {
        return Err(Error::input("cannot split an empty corpus"));
    }
    cfg.validate(records.len())?;
    let n = records.len();
    let (n_train, n_test) = match cfg.exact_counts {
        Some(counts) => counts,
        None => {
            let train = libm::floor(cfg.ratio_train * n as f64 + 0.5) as usize;
            let train = train.min(n);
            (train, n - train)
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    order.shuffle(&mut rng);
    let mut assignment = alloc::vec![Split::Unassigned; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_test {
            Split::Test
        } else {
            Split::Unassigned
        };
    }

    let mut out = SplitOutcome::default();
    for (mut record, split) in records.into_iter().zip(assignment) {
        record.split = split;
        match split {
            Split::Train => out.train.push(record),
            Split::Test => out.test.push(record),
            Split::Unassigned => out.unassigned.push(record),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::WhitespaceEstimator;

    fn extract(src: &str, max: usize) -> Extraction {
        extract_source("PhysLean/Test.lean", src, max, &WhitespaceEstimator)
    }

    #[test]
    fn splits_header_doc_statement_proof() {
        let src = "import Mathlib\n\nopen Nat\n\n/-- Addition is commutative. -/\n@[simp]\nlemma add_comm' (a b : ℕ) : a + b = b + a := by\n  omega\n\nend Foo\n";
        let decls = split_declarations(src);
        assert_eq!(decls.len(), 1);
        let d = &decls[0];
        assert_eq!(d.header, "import Mathlib\n\nopen Nat\n\n");
        assert_eq!(d.doc_comment, Some("/-- Addition is commutative. -/"));
        assert_eq!(d.statement, "@[simp]\nlemma add_comm' (a b : ℕ) : a + b = b + a");
        assert_eq!(d.proof, ":= by\n  omega");
        assert_eq!(d.name(), Some("add_comm'"));
    }

    #[test]
    fn default_arguments_do_not_close_the_signature() {
        let src = "theorem t (x : ℕ := 3) : x = x := rfl\n";
        let d = &split_declarations(src)[0];
        assert_eq!(d.statement, "theorem t (x : ℕ := 3) : x = x");
        assert_eq!(d.proof, ":= rfl");
    }

    #[test]
    fn later_lemmas_see_earlier_ones_in_their_header() {
        let src = "import A\n\nlemma one : True := trivial\n\ntheorem two : True := by\n  exact one\n";
        let decls = split_declarations(src);
        assert_eq!(decls.len(), 2);
        assert_eq!(decls[1].header, "import A\n\nlemma one : True := trivial\n\n");
        assert_eq!(decls[1].proof, ":= by\n  exact one");
    }

    #[test]
    fn defs_instances_and_examples_are_not_targets() {
        let src = "def f : ℕ := 1\ninstance : Inhabited ℕ := ⟨0⟩\nexample : True := trivial\n";
        assert!(split_declarations(src).is_empty());
    }

    #[test]
    fn keywords_in_comments_and_indented_lines_are_ignored() {
        let src = "/-\nlemma fake : False := sorry\n-/\nlemma real : True := by\n  have lemma_like : True := trivial\n  exact lemma_like\n";
        let decls = split_declarations(src);
        assert_eq!(decls.len(), 1);
        assert_eq!(decls[0].name(), Some("real"));
        assert!(decls[0].proof.contains("exact lemma_like"));
    }

    #[test]
    fn equation_style_proofs() {
        let src = "theorem f_zero : ∀ n : ℕ, n + 0 = n\n  | 0 => rfl\n  | n + 1 => rfl\n";
        let d = &split_declarations(src)[0];
        assert_eq!(d.statement, "theorem f_zero : ∀ n : ℕ, n + 0 = n");
        assert!(d.proof.starts_with("| 0 => rfl"));
    }

    #[test]
    fn absolute_value_lines_are_not_equations() {
        let src = "lemma abs_le (x : ℝ) (h : x = 0) :\n    |x| ≤ 1 := by\n  simp [h]\n";
        let d = &split_declarations(src)[0];
        assert!(d.statement.ends_with("|x| ≤ 1"));
        assert_eq!(d.proof, ":= by\n  simp [h]");
    }

    #[test]
    fn line_comment_before_lemma_stays_in_header() {
        let src = "import A\n-- helper\nlemma a : True := trivial\n";
        let d = &split_declarations(src)[0];
        assert_eq!(d.header, "import A\n-- helper\n");
        assert_eq!(d.statement, "lemma a : True");
    }

    #[test]
    fn column_zero_bracket_continuations_stay_in_the_statement() {
        let src = "lemma wide (h : ∀ x,\nx = x) : True := by\n  trivial\n";
        let d = &split_declarations(src)[0];
        assert_eq!(d.statement, "lemma wide (h : ∀ x,\nx = x) : True");
    }

    #[test]
    fn sorry_proofs_are_excluded() {
        let out = extract("lemma bad : False := by sorry\n", 4096);
        assert!(out.records.is_empty());
        assert_eq!(
            out.skipped[0].reason,
            SkipReason::ForbiddenToken { keyword: ForbiddenKeyword::Sorry }
        );
    }

    #[test]
    fn token_limit_is_strict() {
        // header "" (0) + statement "lemma a : True" (4) + proof ":= trivial" (2)
        let src = "lemma a : True := trivial\n";
        assert_eq!(extract(src, 7).records.len(), 1);
        let at_limit = extract(src, 6);
        assert!(at_limit.records.is_empty());
        assert_eq!(at_limit.skipped[0].reason, SkipReason::TooLong { tokens: 6, limit: 6 });
    }

    #[test]
    fn missing_proof_body_is_skipped() {
        let out = extract("theorem t : True\n", 4096);
        assert!(out.records.is_empty());
        assert_eq!(out.skipped[0].reason, SkipReason::NoProofBody);
    }

    #[test]
    fn reconstruction_contains_the_declaration() {
        let src = "import A\n\n/-- d -/\ntheorem t : 1 = 1 := by\n  rfl\n";
        let r = &extract(src, 4096).records[0];
        let doc = r.doc_comment.as_deref().unwrap();
        let rebuilt = alloc::format!("{}{}\n{} {}", r.header, doc, r.statement, r.proof);
        assert_eq!(rebuilt, src.trim_end());
    }

    #[test]
    fn category_rules() {
        let rules = CategoryRules::default();
        assert_eq!(rules.classify("PhysLean/QFT/Wick.lean"), (Category::Qft, true));
        assert_eq!(rules.classify("PhysLean/Relativity/Tensors.lean"), (Category::Relativity, true));
        assert_eq!(
            rules.classify("PhysLean/StringTheory/FTheory/SU5.lean"),
            (Category::ParticleString, true)
        );
        assert_eq!(
            rules.classify("PhysLean/Particles/StandardModel/Basic.lean"),
            (Category::ParticleString, true)
        );
        assert_eq!(rules.classify("PhysLean/ClassicalMechanics/X.lean"), (Category::Classical, false));
        assert_eq!(rules.classify("PhysLean/QFTish/X.lean"), (Category::Classical, false));
    }

    #[test]
    fn assign_counts_unmatched() {
        let mut records = alloc::vec![
            TheoremRecord::new("P/QFT/a.lean", "", "lemma a : True", ":= trivial", None, 1),
            TheoremRecord::new("P/Optics/b.lean", "", "lemma b : True", ":= trivial", None, 1),
        ];
        assert_eq!(assign_categories(&mut records, &CategoryRules::default()), 1);
        assert_eq!(records[0].category, Category::Qft);
        assert_eq!(records[1].category, Category::Classical);
    }

    fn synthetic(n: usize) -> Vec<TheoremRecord> {
        (0..n)
            .map(|i| {
                TheoremRecord::new("S.lean", "", alloc::format!("lemma l{i} : True"), ":= trivial", None, 1)
            })
            .collect()
    }

    #[test]
    fn ratio_split_of_ten() {
        for seed in [0, 1, 42, 9999] {
            let cfg = SplitConfig { ratio_train: 0.9, rng_seed: seed, exact_counts: None };
            let out = split_corpus(synthetic(10), &cfg).unwrap();
            assert_eq!((out.train.len(), out.test.len()), (9, 1));
            assert!(out.unassigned.is_empty());
        }
    }

    #[test]
    fn bad_ratio_is_rejected() {
        for ratio in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            let cfg = SplitConfig { ratio_train: ratio, rng_seed: 0, exact_counts: None };
            assert!(matches!(split_corpus(synthetic(3), &cfg), Err(Error::Config(_))));
        }
        let cfg = SplitConfig { ratio_train: 0.9, rng_seed: 0, exact_counts: Some((3, 1)) };
        assert!(split_corpus(synthetic(3), &cfg).is_err());
        assert!(split_corpus(Vec::new(), &SplitConfig { exact_counts: None, ..cfg }).is_err());
    }

    #[test]
    fn exact_counts_leave_remainder_unassigned() {
        let cfg = SplitConfig { ratio_train: 0.9, rng_seed: 3, exact_counts: Some((5, 2)) };
        let out = split_corpus(synthetic(10), &cfg).unwrap();
        assert_eq!((out.train.len(), out.test.len(), out.unassigned.len()), (5, 2, 3));
        assert!(out.train.iter().all(|r| r.split == Split::Train));
        assert!(out.unassigned.iter().all(|r| r.split == Split::Unassigned));
    }
}
