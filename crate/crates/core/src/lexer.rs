//! Just enough Lean 4 lexing to find declarations without elaborating them.
//!
//! [`mask`] blanks out comments, string literals and character literals so
//! that later scans for brackets, `:=` or keywords cannot be fooled by their
//! contents. Masking replaces each byte with a space (newlines are kept), so
//! byte offsets in the masked text are valid offsets into the original.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommentKind {
    Line,
    Block,
    /// `/-- ... -/`
    Doc,
    /// `/-! ... -/`
    ModuleDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommentSpan {
    pub start: usize,
    pub end: usize,
    pub kind: CommentKind,
}

#[derive(Debug, Clone)]
pub struct Masked {
    pub text: String,
    pub comments: Vec<CommentSpan>,
}

/// Characters that may continue a Lean identifier. `!` and `?` are included
/// so that `apply?` and `simp!` lex as single names.
pub fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '!' | '?')
}

pub fn is_open_bracket(c: char) -> bool {
    matches!(c, '(' | '[' | '{' | '⟨' | '⦃' | '⟪' | '⁅')
}

pub fn is_close_bracket(c: char) -> bool {
    matches!(c, ')' | ']' | '}' | '⟩' | '⦄' | '⟫' | '⁆')
}

fn prev_char(src: &str, at: usize) -> Option<char> {
    src[..at].chars().next_back()
}

/// Length in bytes of a character literal starting at `at` (which must hold
/// `'`), or `None` when the quote is part of an identifier or stray.
fn char_literal_len(src: &str, at: usize) -> Option<usize> {
    if prev_char(src, at).is_some_and(is_ident_char) {
        return None;
    }
    let rest = &src[at + 1..];
    let mut chars = rest.char_indices();
    let (_, first) = chars.next()?;
    if first == '\\' {
        // escapes are short: '\n', '\x41', '\u{1F600}'
        for (i, c) in rest.char_indices().skip(1).take(12) {
            if c == '\'' {
                return Some(i + 2);
            }
            if c == '\n' {
                return None;
            }
        }
        return None;
    }
    if first == '\'' || first == '\n' {
        return None;
    }
    let after = first.len_utf8();
    if rest[after..].starts_with('\'') {
        Some(after + 2)
    } else {
        None
    }
}

pub fn mask(src: &str) -> Masked {
    let bytes = src.as_bytes();
    let mut out: Vec<u8> = Vec::with_capacity(bytes.len());
    let mut comments = Vec::new();
    let mut i = 0;

    let blank = |out: &mut Vec<u8>, from: usize, to: usize| {
        for &b in &bytes[from..to] {
            out.push(if b == b'\n' { b'\n' } else { b' ' });
        }
    };

    while i < bytes.len() {
        let b = bytes[i];
        if b == b'-' && bytes.get(i + 1) == Some(&b'-') {
            let end = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
            comments.push(CommentSpan { start: i, end, kind: CommentKind::Line });
            blank(&mut out, i, end);
            i = end;
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'-') {
            let kind = match bytes.get(i + 2) {
                Some(b'-') if bytes.get(i + 3) != Some(&b'/') => CommentKind::Doc,
                Some(b'!') => CommentKind::ModuleDoc,
                _ => CommentKind::Block,
            };
            let mut depth = 1usize;
            let mut j = i + 2;
            while j < bytes.len() && depth > 0 {
                if bytes[j] == b'/' && bytes.get(j + 1) == Some(&b'-') {
                    depth += 1;
                    j += 2;
                } else if bytes[j] == b'-' && bytes.get(j + 1) == Some(&b'/') {
                    depth -= 1;
                    j += 2;
                } else {
                    j += 1;
                }
            }
            let end = j.min(bytes.len());
            comments.push(CommentSpan { start: i, end, kind });
            blank(&mut out, i, end);
            i = end;
        } else if b == b'"' {
            let mut j = i + 1;
            while j < bytes.len() {
                match bytes[j] {
                    b'\\' => j += 2,
                    b'"' => {
                        j += 1;
                        break;
                    }
                    _ => j += 1,
                }
            }
            let end = j.min(bytes.len());
            blank(&mut out, i, end);
            i = end;
        } else if b == b'\'' {
            match char_literal_len(src, i) {
                Some(len) => {
                    blank(&mut out, i, i + len);
                    i += len;
                }
                None => {
                    out.push(b);
                    i += 1;
                }
            }
        } else {
            out.push(b);
            i += 1;
        }
    }

    // Every blanked region starts and ends on an ASCII delimiter, so the
    // output is still valid UTF-8.
    let text = String::from_utf8(out).unwrap_or_default();
    Masked { text, comments }
}

/// Text of a doc comment without its `/--` and `-/` delimiters.
pub fn doc_text(doc: &str) -> &str {
    let inner = doc.strip_prefix("/--").unwrap_or(doc);
    let inner = inner.strip_suffix("-/").unwrap_or(inner);
    inner.trim()
}

pub const DECL_MODIFIERS: &[&str] = &[
    "private",
    "protected",
    "noncomputable",
    "nonrec",
    "unsafe",
    "partial",
];

/// Skips leading whitespace, `@[...]` attribute blocks and declaration
/// modifiers in (masked) text, returning the offset of the first other word.
pub fn skip_decl_prefix(masked: &str, mut at: usize) -> usize {
    loop {
        let rest = &masked[at..];
        let trimmed = rest.trim_start();
        at += rest.len() - trimmed.len();
        if trimmed.starts_with("@[") {
            let mut depth = 0i32;
            let mut end = trimmed.len();
            for (i, c) in trimmed.char_indices() {
                match c {
                    '[' => depth += 1,
                    ']' => {
                        depth -= 1;
                        if depth == 0 {
                            end = i + 1;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            at += end;
            continue;
        }
        let word = leading_word(trimmed);
        if !word.is_empty() && DECL_MODIFIERS.contains(&word) {
            at += word.len();
            continue;
        }
        return at;
    }
}

/// The maximal identifier-like run at the start of `text` (dots included so
/// that qualified names stay whole).
pub fn leading_word(text: &str) -> &str {
    let end = text
        .char_indices()
        .find(|&(_, c)| !(is_ident_char(c) || c == '.'))
        .map_or(text.len(), |(i, _)| i);
    &text[..end]
}

/// Name declared by a `lemma`/`theorem` statement, if it has one.
pub fn declaration_name(statement: &str) -> Option<&str> {
    let masked = mask(statement);
    let at = skip_decl_prefix(&masked.text, 0);
    let keyword = leading_word(&masked.text[at..]);
    if keyword != "lemma" && keyword != "theorem" {
        return None;
    }
    let after = at + keyword.len();
    let rest = &statement[after..];
    let name_start = after + (rest.len() - rest.trim_start().len());
    let rest = &statement[name_start..];
    if let Some(guillemet) = rest.strip_prefix('«') {
        let close = guillemet.find('»')?;
        return Some(&rest[..close + '«'.len_utf8() + '»'.len_utf8()]);
    }
    let name = leading_word(rest);
    (!name.is_empty()).then_some(name)
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_line_and_nested_block_comments() {
        let src = "a -- x\n/- outer /- inner -/ still -/ b";
        let m = mask(src);
        assert_eq!(m.text.len(), src.len());
        assert!(m.text.starts_with("a "));
        assert!(m.text.ends_with(" b"));
        assert!(!m.text.contains("still"));
        assert_eq!(m.comments.len(), 2);
        assert_eq!(m.comments[1].kind, CommentKind::Block);
    }

    #[test]
    fn classifies_doc_comments() {
        let m = mask("/-- doc -/\n/-! module -/\n/- plain -/");
        let kinds: Vec<_> = m.comments.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, [CommentKind::Doc, CommentKind::ModuleDoc, CommentKind::Block]);
    }

    #[test]
    fn masks_strings_with_escapes_and_unicode() {
        let src = "notation \"η\\\"x\" => f";
        let m = mask(src);
        assert_eq!(m.text.len(), src.len());
        assert!(m.text.starts_with("notation "));
        assert!(m.text.ends_with(" => f"));
        assert!(!m.text.contains('η'));
    }

    #[test]
    fn primes_in_identifiers_are_not_char_literals() {
        let src = "h' h'' 'a' '\\n' f'";
        let m = mask(src);
        assert!(m.text.starts_with("h' h'' "));
        assert!(m.text.ends_with("f'"));
        assert!(!m.text.contains('a'));
    }

    #[test]
    fn declaration_names() {
        assert_eq!(declaration_name("@[simp]\nlemma sq : x = 1"), Some("sq"));
        assert_eq!(declaration_name("protected theorem Foo.bar (x : ℕ) : x = x"), Some("Foo.bar"));
        assert_eq!(declaration_name("theorem «odd name» : True"), Some("«odd name»"));
        assert_eq!(declaration_name("def f := 1"), None);
    }

    #[test]
    fn doc_text_strips_delimiters() {
        assert_eq!(doc_text("/-- hello world.-/"), "hello world.");
    }
}
