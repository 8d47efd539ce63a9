//! Easy-to-hard ordering by ground-truth proof length.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::record::TheoremRecord;

/// Ascending by proof character count, ties by id; records that compare
/// equal on both keep their input order.
pub fn curriculum_order(records: Vec<TheoremRecord>) -> Result<Vec<TheoremRecord>> {
    if let Some(r) = records.iter().find(|r| r.proof.trim().is_empty()) {
        return Err(Error::input(format!("record {} has no proof to rank by", r.id)));
    }
    let mut keyed: Vec<(usize, TheoremRecord)> = records.into_iter().map(|r| (r.proof_len(), r)).collect();
    keyed.sort_by(|(la, a), (lb, b)| la.cmp(lb).then_with(|| a.id.cmp(&b.id)));
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::{String, ToString};

    fn rec(id: &str, proof_len: usize) -> TheoremRecord {
        let mut r = TheoremRecord::new("A.lean", "", "lemma x : True", ":=".to_string() + &"a".repeat(proof_len - 2), None, 0);
        r.id = id.to_string();
        r
    }

    #[test]
    fn ties_break_by_id() {
        let input = alloc::vec![rec("d", 40), rec("b", 12), rec("a", 12), rec("c", 300)];
        let ids: Vec<String> = curriculum_order(input).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["a", "b", "d", "c"]);
    }

    #[test]
    fn sorted_input_is_unchanged() {
        let input = alloc::vec![rec("a", 3), rec("b", 3), rec("c", 9)];
        assert_eq!(curriculum_order(input.clone()).unwrap(), input);
    }

    #[test]
    fn empty_proof_is_rejected() {
        let mut r = rec("a", 5);
        r.proof.clear();
        assert!(curriculum_order(alloc::vec![r]).is_err());
    }

    #[test]
    fn length_is_in_characters() {
        let mut unicode = rec("a", 5);
        unicode.proof = ":= ⟨h₁, h₂⟩".into();
        let ascii = rec("b", 11);
        let out = curriculum_order(alloc::vec![ascii, unicode]).unwrap();
        assert_eq!(out[0].id, "a");
    }
}
