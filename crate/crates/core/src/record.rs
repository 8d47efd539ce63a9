use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::hash::content_id;
use crate::lexer::{declaration_name, doc_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Classical,
    ParticleString,
    Relativity,
    #[serde(rename = "QFT")]
    Qft,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::Classical, Category::ParticleString, Category::Relativity, Category::Qft];

    /// Label used in JSONL and as the default report row label.
    pub fn label(self) -> &'static str {
        match self {
            Category::Classical => "Classical",
            Category::ParticleString => "ParticleString",
            Category::Relativity => "Relativity",
            Category::Qft => "QFT",
        }
    }

    /// Long-form name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::Classical => "Classical",
            Category::ParticleString => "Particle & String",
            Category::Relativity => "Relativity",
            Category::Qft => "Quantum Field Theory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

/// One header / statement / proof triple mined from a Lean file or promoted
/// from a verified conjecture.
///
/// `statement` stops just before the top-level `:=`; `proof` starts with it.
/// Field order is the JSONL field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub id: String,
    pub source_path: String,
    pub header: String,
    pub statement: String,
    pub proof: String,
    pub doc_comment: Option<String>,
    pub category: Category,
    pub split: Split,
    pub token_len: usize,
}

impl TheoremRecord {
    pub fn new(
        source_path: impl Into<String>,
        header: impl Into<String>,
        statement: impl Into<String>,
        proof: impl Into<String>,
        doc_comment: Option<String>,
        token_len: usize,
    ) -> Self {
        let header = header.into();
        let statement = statement.into();
        let proof = proof.into();
        TheoremRecord {
            id: Self::compute_id(&header, &statement, &proof),
            source_path: source_path.into(),
            header,
            statement,
            proof,
            doc_comment,
            category: Category::Classical,
            split: Split::Unassigned,
            token_len,
        }
    }

    pub fn compute_id(header: &str, statement: &str, proof: &str) -> String {
        content_id(&[header, statement, proof])
    }

    pub fn name(&self) -> Option<&str> {
        declaration_name(&self.statement)
    }

    /// Natural-language problem description: the doc comment text, or the
    /// declaration name when there is none.
    pub fn problem_text(&self) -> String {
        match self.doc_comment.as_deref().map(doc_text) {
            Some(text) if !text.is_empty() => String::from(text),
            _ => String::from(self.name().unwrap_or(self.statement.trim())),
        }
    }

    /// Character count of the ground-truth proof, the curriculum difficulty.
    pub fn proof_len(&self) -> usize {
        self.proof.chars().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn id_is_content_derived() {
        let a = TheoremRecord::new("A.lean", "import X\n", "lemma a : True", ":= trivial", None, 3);
        let b = TheoremRecord::new("B.lean", "import X\n", "lemma a : True", ":= trivial", None, 9);
        assert_eq!(a.id, b.id);
        assert_eq!(a.id.len(), 64);
    }

    #[test]
    fn problem_text_falls_back_to_name() {
        let mut r = TheoremRecord::new("A.lean", "", "@[simp]\nlemma sq : x = 1", ":= rfl", None, 0);
        assert_eq!(r.problem_text(), "sq");
        r.doc_comment = Some("/-- Squares to one. -/".to_string());
        assert_eq!(r.problem_text(), "Squares to one.");
    }

    #[test]
    fn json_field_order_is_fixed() {
        let r = TheoremRecord::new("A.lean", "h", "lemma a : True", ":= trivial", None, 1);
        let json = serde_json::to_string(&r).unwrap();
        let keys = [
            "\"id\"", "\"source_path\"", "\"header\"", "\"statement\"", "\"proof\"",
            "\"doc_comment\"", "\"category\"", "\"split\"", "\"token_len\"",
        ];
        let positions: alloc::vec::Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains("\"category\":\"Classical\""));
        assert!(json.contains("\"split\":\"unassigned\""));
        assert!(json.contains("\"doc_comment\":null"));
    }
}
