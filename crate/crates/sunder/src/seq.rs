//! Token sequences, sensitive spans, and corpora.
//!
//! Token ids are opaque non-negative integers; two tokens are equal iff their
//! ids are equal. Surface strings, when present, are carried only for
//! reporting and annotation alignment. All types here are immutable after
//! construction and safe to share across threads.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A tokenized text instance: an id, the token ids, and optional surface
/// strings aligned one-to-one with the tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    id: String,
    tokens: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    surfaces: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::input(format!("sequence '{id}' has no tokens")));
        }
        Ok(TokenSequence { id, tokens, surfaces: None })
    }

    pub fn with_surfaces(
        id: impl Into<String>,
        tokens: Vec<u32>,
        surfaces: Vec<String>,
    ) -> Result<Self> {
        let mut seq = Self::new(id, tokens)?;
        if surfaces.len() != seq.tokens.len() {
            return Err(Error::input(format!(
                "sequence '{}': {} surfaces for {} tokens",
                seq.id,
                surfaces.len(),
                seq.tokens.len()
            )));
        }
        seq.surfaces = Some(surfaces);
        Ok(seq)
    }

    /// Byte-level convenience: one token per byte, surfaces are the
    /// single-byte strings.
    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self> {
        let tokens: Vec<u32> = text.bytes().map(u32::from).collect();
        let surfaces = text
            .bytes()
            .map(|b| String::from_utf8_lossy(&[b]).into_owned())
            .collect();
        Self::with_surfaces(id, tokens, surfaces)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn surfaces(&self) -> Option<&[String]> {
        self.surfaces.as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    /// Surface text of the token range `[start, start+len)`, if surfaces are
    /// present.
    pub fn surface_text(&self, start: usize, len: usize) -> Option<String> {
        let surfaces = self.surfaces.as_ref()?;
        surfaces.get(start..start + len).map(|s| s.concat())
    }
}

/// A contiguous run of token positions: `[start, start+len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    start: usize,
    len: usize,
}

impl Span {
    pub fn new(start: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::input(format!("span at {start} has length 0")));
        }
        Ok(Span { start, len })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One past the last covered position.
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, pos: usize) -> bool {
        pos >= self.start && pos < self.end()
    }
}

/// A canonical set of sensitive spans: sorted by start, pairwise disjoint and
/// non-adjacent. Overlapping or adjacent inputs are merged on construction,
/// so downstream set operations can assume disjoint sorted runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSet {
    spans: Vec<Span>,
}

impl SpanSet {
    pub fn empty() -> Self {
        SpanSet { spans: Vec::new() }
    }

    /// Canonicalizes: sorts by start and merges overlapping or adjacent
    /// spans. The covered positions of the result equal the union of the
    /// inputs' positions.
    pub fn new(mut spans: Vec<Span>) -> Self {
        spans.sort_by_key(|s| (s.start, s.len));
        let mut merged: Vec<Span> = Vec::with_capacity(spans.len());
        for span in spans {
            match merged.last_mut() {
                Some(last) if span.start <= last.end() => {
                    let end = last.end().max(span.end());
                    last.len = end - last.start;
                }
                _ => merged.push(span),
            }
        }
        SpanSet { spans: merged }
    }

    /// The unique span set whose covered positions equal `indices`, maximal
    /// runs merged. Errors if any index falls outside `[0, seq_len)`.
    pub fn from_positions(
        indices: impl IntoIterator<Item = usize>,
        seq_len: usize,
    ) -> Result<Self> {
        let positions: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&max) = positions.iter().next_back() {
            if max >= seq_len {
                return Err(Error::input(format!(
                    "position {max} out of range for sequence of length {seq_len}"
                )));
            }
        }
        let mut spans = Vec::new();
        let mut run: Option<(usize, usize)> = None; // (start, end exclusive)
        for pos in positions {
            match run {
                Some((start, end)) if pos == end => run = Some((start, end + 1)),
                Some((start, end)) => {
                    spans.push(Span { start, len: end - start });
                    run = Some((pos, pos + 1));
                }
                None => run = Some((pos, pos + 1)),
            }
        }
        if let Some((start, end)) = run {
            spans.push(Span { start, len: end - start });
        }
        Ok(SpanSet { spans })
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Union of `[start, end)` over all spans.
    pub fn covered_positions(&self) -> BTreeSet<usize> {
        self.spans
            .iter()
            .flat_map(|s| s.start..s.end())
            .collect()
    }

    /// Number of covered positions.
    pub fn covered_count(&self) -> usize {
        self.spans.iter().map(|s| s.len).sum()
    }

    pub fn contains(&self, pos: usize) -> bool {
        // spans are sorted and disjoint
        self.spans
            .binary_search_by(|s| {
                if s.end() <= pos {
                    std::cmp::Ordering::Less
                } else if s.start > pos {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    /// Does any span overlap the half-open range `[start, end)`?
    pub fn intersects_range(&self, start: usize, end: usize) -> bool {
        if start >= end {
            return false;
        }
        // first span ending after `start`
        let idx = self.spans.partition_point(|s| s.end() <= start);
        self.spans.get(idx).is_some_and(|s| s.start < end)
    }

    /// Highest covered position + 1, or 0 for the empty set.
    pub fn max_end(&self) -> usize {
        self.spans.last().map(Span::end).unwrap_or(0)
    }

    /// Checks every span fits a sequence of length `seq_len`.
    pub fn validate_for(&self, seq_len: usize, id: &str) -> Result<()> {
        if self.max_end() > seq_len {
            return Err(Error::input(format!(
                "span set for '{id}' extends to {} but sequence length is {seq_len}",
                self.max_end()
            )));
        }
        Ok(())
    }

    /// Restricts coverage to `[from, to)` and shifts positions down by
    /// `from`, e.g. to re-express spans of a sequence in the frame of one of
    /// its suffixes.
    pub fn restrict_shift(&self, from: usize, to: usize) -> SpanSet {
        let mut spans = Vec::new();
        for s in &self.spans {
            let start = s.start.max(from);
            let end = s.end().min(to);
            if start < end {
                spans.push(Span { start: start - from, len: end - start });
            }
        }
        SpanSet { spans }
    }

    /// Shifts every span up by `offset`.
    pub fn shifted(&self, offset: usize) -> SpanSet {
        SpanSet {
            spans: self
                .spans
                .iter()
                .map(|s| Span { start: s.start + offset, len: s.len })
                .collect(),
        }
    }
}

/// A token sequence together with per-token natural-log probabilities under
/// a reference model: entry `t` is `log p(x_t | x_<t)` and entry 0 is the
/// unconditional first-token log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    seq: TokenSequence,
    logprobs: Vec<f64>,
}

impl ScoredSequence {
    pub fn new(seq: TokenSequence, logprobs: Vec<f64>) -> Result<Self> {
        if logprobs.len() != seq.len() {
            return Err(Error::input(format!(
                "sequence '{}': {} logprobs for {} tokens",
                seq.id(),
                logprobs.len(),
                seq.len()
            )));
        }
        if let Some(bad) = logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(Error::input(format!(
                "sequence '{}': log-probability {bad} is not a finite value <= 0",
                seq.id()
            )));
        }
        Ok(ScoredSequence { seq, logprobs })
    }

    pub fn seq(&self) -> &TokenSequence {
        &self.seq
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_parts(self) -> (TokenSequence, Vec<f64>) {
        (self.seq, self.logprobs)
    }
}

/// Which split a corpus plays in an unlearning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    Forget,
    Heldout,
    Train,
}

/// One corpus entry: the sequence, optional sensitive spans, optional
/// reference-model log-probabilities.
#[derive(Debug, Clone)]
pub struct CorpusInstance {
    pub seq: TokenSequence,
    pub spans: Option<SpanSet>,
    pub logprobs: Option<Vec<f64>>,
}

impl CorpusInstance {
    pub fn new(seq: TokenSequence) -> Self {
        CorpusInstance { seq, spans: None, logprobs: None }
    }

    pub fn with_spans(mut self, spans: SpanSet) -> Self {
        self.spans = Some(spans);
        self
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }

    pub fn scored(&self) -> Result<ScoredSequence> {
        let logprobs = self.logprobs.clone().ok_or_else(|| {
            Error::input(format!("instance '{}' carries no logprobs", self.seq.id()))
        })?;
        ScoredSequence::new(self.seq.clone(), logprobs)
    }
}

/// A list of instances with unique ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    role: CorpusRole,
    instances: Vec<CorpusInstance>,
}

impl Corpus {
    pub fn new(role: CorpusRole, instances: Vec<CorpusInstance>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for inst in &instances {
            if !seen.insert(inst.seq.id().to_owned()) {
                return Err(Error::input(format!(
                    "duplicate instance id '{}' in corpus",
                    inst.seq.id()
                )));
            }
            if let Some(spans) = &inst.spans {
                spans.validate_for(inst.seq.len(), inst.seq.id())?;
            }
            if let Some(lp) = &inst.logprobs {
                if lp.len() != inst.seq.len() {
                    return Err(Error::input(format!(
                        "instance '{}': {} logprobs for {} tokens",
                        inst.seq.id(),
                        lp.len(),
                        inst.seq.len()
                    )));
                }
            }
        }
        Ok(Corpus { role, instances })
    }

    pub fn role(&self) -> CorpusRole {
        self.role
    }

    pub fn instances(&self) -> &[CorpusInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusInstance> {
        self.instances.iter().find(|i| i.seq.id() == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(start: usize, len: usize) -> Span {
        Span::new(start, len).unwrap()
    }

    #[test]
    fn from_positions_singleton() {
        let set = SpanSet::from_positions([1], 7).unwrap();
        assert_eq!(set.spans(), &[span(1, 1)]);
    }

    #[test]
    fn from_positions_single_run() {
        let set = SpanSet::from_positions([4, 5], 7).unwrap();
        assert_eq!(set.spans(), &[span(4, 2)]);
    }

    #[test]
    fn from_positions_two_runs() {
        let set = SpanSet::from_positions([0, 1, 3, 4, 5], 6).unwrap();
        assert_eq!(set.spans(), &[span(0, 2), span(3, 3)]);
    }

    #[test]
    fn from_positions_out_of_range() {
        assert!(SpanSet::from_positions([7], 7).is_err());
    }

    #[test]
    fn covered_positions_empty() {
        assert!(SpanSet::empty().covered_positions().is_empty());
    }

    #[test]
    fn covered_positions_single() {
        let set = SpanSet::new(vec![span(2, 3)]);
        let covered: Vec<usize> = set.covered_positions().into_iter().collect();
        assert_eq!(covered, vec![2, 3, 4]);
    }

    #[test]
    fn covered_positions_two_spans() {
        let set = SpanSet::new(vec![span(0, 1), span(4, 2)]);
        let covered: Vec<usize> = set.covered_positions().into_iter().collect();
        assert_eq!(covered, vec![0, 4, 5]);
    }

    #[test]
    fn canonicalization_merges_overlap_and_adjacency() {
        // overlapping
        let set = SpanSet::new(vec![span(0, 3), span(2, 2)]);
        assert_eq!(set.spans(), &[span(0, 4)]);
        // adjacent
        let set = SpanSet::new(vec![span(0, 2), span(2, 2)]);
        assert_eq!(set.spans(), &[span(0, 4)]);
        // disjoint left alone
        let set = SpanSet::new(vec![span(5, 1), span(0, 2)]);
        assert_eq!(set.spans(), &[span(0, 2), span(5, 1)]);
    }

    #[test]
    fn canonical_union_of_positions() {
        let raw = vec![span(1, 3), span(2, 4), span(8, 1)];
        let expect: BTreeSet<usize> =
            raw.iter().flat_map(|s| s.start()..s.end()).collect();
        assert_eq!(SpanSet::new(raw).covered_positions(), expect);
    }

    #[test]
    fn contains_matches_covered() {
        let set = SpanSet::new(vec![span(1, 2), span(6, 3)]);
        let covered = set.covered_positions();
        for pos in 0..12 {
            assert_eq!(set.contains(pos), covered.contains(&pos), "pos {pos}");
        }
    }

    #[test]
    fn intersects_range_matches_covered() {
        let set = SpanSet::new(vec![span(1, 2), span(6, 3)]);
        let covered = set.covered_positions();
        for start in 0..12 {
            for end in start..13 {
                let expect = (start..end).any(|p| covered.contains(&p));
                assert_eq!(set.intersects_range(start, end), expect, "[{start},{end})");
            }
        }
    }

    #[test]
    fn restrict_shift_clips_partial_overlap() {
        let set = SpanSet::new(vec![span(2, 4)]); // covers 2..6
        let shifted = set.restrict_shift(4, 10);
        assert_eq!(shifted.spans(), &[span(0, 2)]); // 4,5 -> 0,1
        assert!(set.restrict_shift(6, 10).is_empty());
    }

    #[test]
    fn sequence_invariants() {
        assert!(TokenSequence::new("x", vec![]).is_err());
        assert!(TokenSequence::with_surfaces("x", vec![1, 2], vec!["a".into()]).is_err());
        let seq = TokenSequence::from_text("x", "ab").unwrap();
        assert_eq!(seq.tokens(), &[97, 98]);
        assert_eq!(seq.surface_text(0, 2).unwrap(), "ab");
    }

    #[test]
    fn scored_sequence_invariants() {
        let seq = TokenSequence::new("x", vec![1, 2]).unwrap();
        assert!(ScoredSequence::new(seq.clone(), vec![-1.0]).is_err());
        assert!(ScoredSequence::new(seq.clone(), vec![-1.0, 0.5]).is_err());
        assert!(ScoredSequence::new(seq.clone(), vec![-1.0, f64::NAN]).is_err());
        assert!(ScoredSequence::new(seq, vec![-1.0, 0.0]).is_ok());
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let a = CorpusInstance::new(TokenSequence::new("a", vec![1]).unwrap());
        let a2 = CorpusInstance::new(TokenSequence::new("a", vec![2]).unwrap());
        assert!(Corpus::new(CorpusRole::Train, vec![a, a2]).is_err());
    }

    #[test]
    fn corpus_rejects_out_of_range_spans() {
        let seq = TokenSequence::new("a", vec![1, 2, 3]).unwrap();
        let inst = CorpusInstance::new(seq).with_spans(SpanSet::new(vec![span(2, 2)]));
        assert!(Corpus::new(CorpusRole::Forget, vec![inst]).is_err());
    }

    proptest! {
        /// positions -> spans -> positions is the identity.
        #[test]
        fn positions_roundtrip(positions in proptest::collection::btree_set(0usize..64, 0..32)) {
            let set = SpanSet::from_positions(positions.clone(), 64).unwrap();
            prop_assert_eq!(set.covered_positions(), positions);
        }

        /// spans -> positions -> spans is the identity on canonical sets.
        #[test]
        fn spans_roundtrip(raw in proptest::collection::vec((0usize..50, 1usize..8), 0..10)) {
            let canonical = SpanSet::new(
                raw.into_iter().map(|(s, l)| Span::new(s, l).unwrap()).collect(),
            );
            let rebuilt = SpanSet::from_positions(canonical.covered_positions(), 64).unwrap();
            prop_assert_eq!(rebuilt, canonical);
        }
    }
}
