//! Detection of proof-closing escape hatches that would let a policy collect
//! reward without proving anything.

use serde::{Deserialize, Serialize};

use crate::lexer::{is_ident_char, mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForbiddenKeyword {
    #[serde(rename = "sorry")]
    Sorry,
    #[serde(rename = "admit")]
    Admit,
    #[serde(rename = "apply?")]
    ApplyQuery,
}

impl ForbiddenKeyword {
    pub const ALL: [ForbiddenKeyword; 3] =
        [ForbiddenKeyword::Sorry, ForbiddenKeyword::Admit, ForbiddenKeyword::ApplyQuery];

    pub fn as_str(self) -> &'static str {
        match self {
            ForbiddenKeyword::Sorry => "sorry",
            ForbiddenKeyword::Admit => "admit",
            ForbiddenKeyword::ApplyQuery => "apply?",
        }
    }
}

impl core::fmt::Display for ForbiddenKeyword {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn is_name_char(c: char) -> bool {
    is_ident_char(c) || c == '.'
}

/// Returns the earliest forbidden keyword used as a standalone token in code.
///
/// Comments and string literals are ignored, and matches must sit on
/// identifier boundaries, so `sorry_free_lemma` or `-- sorry` do not count.
pub fn scan_forbidden(proof: &str) -> Option<ForbiddenKeyword> {
    let masked = mask(proof);
    let text = masked.text.as_str();
    let mut best: Option<(usize, ForbiddenKeyword)> = None;
    for keyword in ForbiddenKeyword::ALL {
        let needle = keyword.as_str();
        let mut from = 0;
        while let Some(pos) = text[from..].find(needle) {
            let at = from + pos;
            let end = at + needle.len();
            let before_ok = !text[..at].chars().next_back().is_some_and(is_name_char);
            let after_ok = !text[end..].chars().next().is_some_and(is_ident_char);
            if before_ok && after_ok {
                if best.is_none_or(|(b, _)| at < b) {
                    best = Some((at, keyword));
                }
                break;
            }
            from = end;
        }
    }
    best.map(|(_, k)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorry_tactic_matches() {
        assert_eq!(scan_forbidden("by\n  sorry"), Some(ForbiddenKeyword::Sorry));
    }

    #[test]
    fn comments_are_stripped() {
        assert_eq!(scan_forbidden("-- sorry\nexact rfl"), None);
        assert_eq!(scan_forbidden("/- admit /- nested sorry -/ -/ rfl"), None);
        assert_eq!(scan_forbidden("exact \"sorry\""), None);
    }

    #[test]
    fn apply_query_matches() {
        assert_eq!(scan_forbidden("simp [h]; apply? "), Some(ForbiddenKeyword::ApplyQuery));
        assert_eq!(scan_forbidden("apply foo"), None);
    }

    #[test]
    fn identifier_boundaries() {
        assert_eq!(scan_forbidden("exact sorry_free_lemma"), None);
        assert_eq!(scan_forbidden("exact not_admitted"), None);
        assert_eq!(scan_forbidden("exact Foo.sorry"), None);
        assert_eq!(scan_forbidden("exact ⟨sorry, h⟩"), Some(ForbiddenKeyword::Sorry));
        assert_eq!(scan_forbidden("(admit)"), Some(ForbiddenKeyword::Admit));
    }

    #[test]
    fn earliest_match_wins() {
        assert_eq!(scan_forbidden("admit\nsorry"), Some(ForbiddenKeyword::Admit));
        assert_eq!(scan_forbidden("sorry_x; apply?; admit"), Some(ForbiddenKeyword::ApplyQuery));
    }
}
