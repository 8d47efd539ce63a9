/// Pluggable length estimate used to gate records by context size.
pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// Counts maximal runs of non-whitespace characters.
#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespaceEstimator;

impl TokenEstimator for WhitespaceEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

impl<F: Fn(&str) -> usize> TokenEstimator for F {
    fn estimate(&self, text: &str) -> usize {
        self(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    WhitespaceEstimator.estimate(text)
}
