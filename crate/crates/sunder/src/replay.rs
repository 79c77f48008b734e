//! A replay model: a [`LanguageModel`] that deterministically reproduces a
//! set of recorded token sequences.
//!
//! Given a prefix, the model finds the first recorded sequence starting with
//! that prefix and predicts its next token with probability mass ~1. Prefixes
//! that match no recording fall back to a uniform distribution (argmax ties
//! resolve to token 0). Evaluating a trace file against itself therefore
//! scores as a perfect memorizer, which makes the replay model both the
//! extraction upper bound for recorded data and a convenient known-answer
//! source for the metric pipeline.

use crate::metrics::LanguageModel;
use crate::seq::Corpus;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ReplayModel {
    sequences: Vec<Vec<u32>>,
    vocab_size: usize,
}

impl ReplayModel {
    pub fn new(sequences: Vec<Vec<u32>>, vocab_size: usize) -> Self {
        let max_token = sequences
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |t| t as usize + 1);
        ReplayModel { sequences, vocab_size: vocab_size.max(max_token).max(2) }
    }

    pub fn from_corpus(corpus: &Corpus, vocab_size: usize) -> Self {
        Self::new(
            corpus
                .instances()
                .iter()
                .map(|i| i.seq.tokens().to_vec())
                .collect(),
            vocab_size,
        )
    }

    /// Next token of the first recorded sequence extending `prefix`.
    fn lookup(&self, prefix: &[u32]) -> Option<u32> {
        self.sequences
            .iter()
            .find(|s| s.len() > prefix.len() && s[..prefix.len()] == *prefix)
            .map(|s| s[prefix.len()])
    }
}

impl LanguageModel for ReplayModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        let v = self.vocab_size;
        match self.lookup(prefix) {
            Some(next) => {
                let p_top = 1.0 - (v - 1) as f64 * EPS;
                (0..v)
                    .map(|i| if i as u32 == next { p_top.ln() } else { EPS.ln() })
                    .collect()
            }
            None => vec![(1.0 / v as f64).ln(); v],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{el_n, ma};
    use crate::seq::TokenSequence;

    #[test]
    fn replays_recorded_sequence() {
        let model = ReplayModel::new(vec![vec![3, 1, 4, 1, 5]], 8);
        assert_eq!(model.generate_greedy(&[3, 1], 3), vec![4, 1, 5]);
        assert_eq!(model.argmax_next(&[]), 3);
    }

    #[test]
    fn scores_own_traces_as_perfect_memorizer() {
        let x = TokenSequence::new("x", vec![3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let model = ReplayModel::new(vec![x.tokens().to_vec()], 16);
        assert_eq!(ma(&model, &x, false).unwrap(), 1.0);
        assert_eq!(el_n(&model, &x, 3, None).unwrap(), Some(1.0));
    }

    #[test]
    fn unknown_prefix_is_uniform() {
        let model = ReplayModel::new(vec![vec![3, 1, 4]], 8);
        let lp = model.next_logprobs(&[7, 7]);
        assert_eq!(lp.len(), 8);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(model.argmax_next(&[7, 7]), 0);
    }

    #[test]
    fn logprobs_normalize() {
        let model = ReplayModel::new(vec![vec![1, 2]], 4);
        let lp = model.next_logprobs(&[1]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(lp.iter().all(|v| *v <= 0.0));
    }
}
