//! Online sensitive-span selection from per-token log-probabilities,
//! and statistics for comparing annotation sets.
//!
//! The working assumption: content with privacy-leakage risk is not common
//! knowledge, so it sits at low probability under the pre-unlearning model.
//! Selection therefore picks tokens scored strictly below a threshold, then
//! fills the short gaps between nearby picks (the middle tokens of a phrase
//! often score higher than its edges).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::seq::{ScoredSequence, SpanSet};
use crate::{Error, Result};

/// Configuration for [`select_online`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineSelectConfig {
    /// Log-probability threshold (natural log). When absent, the threshold
    /// is the mean per-token log-probability of the sequence itself.
    pub alpha: Option<f64>,
    /// Two picked positions `i < j` are close when `j - i <= gap`; positions
    /// strictly between close picks are also selected.
    pub gap: usize,
    /// Iterate gap closure until no position is added, instead of a single
    /// pass over the originally picked positions. Both produce the same
    /// result (filled positions are interior to runs whose endpoints were
    /// already picked, so they never create new close pairs); the flag is
    /// kept for experimentation.
    pub fixed_point: bool,
}

impl Default for OnlineSelectConfig {
    fn default() -> Self {
        OnlineSelectConfig { alpha: None, gap: 2, fixed_point: false }
    }
}

impl OnlineSelectConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(alpha) = self.alpha {
            if !alpha.is_finite() && alpha != f64::NEG_INFINITY || alpha > 0.0 {
                return Err(Error::input(format!(
                    "alpha must be a log-probability <= 0, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

fn close_gaps(picked: &BTreeSet<usize>, gap: usize) -> BTreeSet<usize> {
    let mut out = picked.clone();
    let mut prev: Option<usize> = None;
    for &pos in picked {
        if let Some(p) = prev {
            if pos - p <= gap {
                out.extend(p + 1..pos);
            }
        }
        prev = Some(pos);
    }
    out
}

/// Selects candidate sensitive positions of a scored sequence: every token
/// with log-probability strictly below the threshold, plus every token lying
/// strictly between two picked tokens at index distance `<= gap`. The result
/// is returned as a canonical span set.
pub fn select_online(scored: &ScoredSequence, cfg: &OnlineSelectConfig) -> Result<SpanSet> {
    cfg.validate()?;
    let logprobs = scored.logprobs();
    if logprobs.is_empty() {
        return Err(Error::input(format!(
            "sequence '{}' has no tokens to select from",
            scored.seq().id()
        )));
    }
    let alpha = match cfg.alpha {
        Some(a) => a,
        None => logprobs.iter().sum::<f64>() / logprobs.len() as f64,
    };

    let picked: BTreeSet<usize> = logprobs
        .iter()
        .enumerate()
        .filter(|(_, lp)| **lp < alpha)
        .map(|(t, _)| t)
        .collect();

    let filled = if cfg.fixed_point {
        let mut current = picked;
        loop {
            let next = close_gaps(&current, cfg.gap);
            if next.len() == current.len() {
                break current;
            }
            current = next;
        }
    } else {
        close_gaps(&picked, cfg.gap)
    };

    SpanSet::from_positions(filled, logprobs.len())
}

/// Summary statistics over a list of per-instance annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStats {
    /// Mean number of spans per instance.
    pub avg_span_count: f64,
    /// Mean fraction of tokens covered by spans.
    pub avg_proportion: f64,
    /// Token-level coverage of the reference annotation by the candidate:
    /// sum over instances of |covered(ref) ∩ covered(cand)| divided by the
    /// total reference-covered tokens. Absent without a reference or when
    /// the reference covers nothing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cover_vs_reference: Option<f64>,
}

/// Computes [`AnnotationStats`] for `candidate` annotations over sequences of
/// the given lengths, optionally scored against a `reference` annotation of
/// the same instances.
pub fn annotation_stats(
    candidate: &[SpanSet],
    reference: Option<&[SpanSet]>,
    lengths: &[usize],
) -> Result<AnnotationStats> {
    if candidate.len() != lengths.len() {
        return Err(Error::input(format!(
            "{} candidate annotations for {} instances",
            candidate.len(),
            lengths.len()
        )));
    }
    if let Some(reference) = reference {
        if reference.len() != lengths.len() {
            return Err(Error::input(format!(
                "{} reference annotations for {} instances",
                reference.len(),
                lengths.len()
            )));
        }
    }
    if lengths.is_empty() {
        return Err(Error::input("no instances to compute statistics over"));
    }
    for (i, (set, len)) in candidate.iter().zip(lengths).enumerate() {
        if set.max_end() > *len {
            return Err(Error::input(format!(
                "candidate annotation {i} exceeds its sequence length {len}"
            )));
        }
    }

    let n = lengths.len() as f64;
    let avg_span_count = candidate.iter().map(|s| s.len() as f64).sum::<f64>() / n;
    let avg_proportion = candidate
        .iter()
        .zip(lengths)
        .map(|(s, len)| s.covered_count() as f64 / *len as f64)
        .sum::<f64>()
        / n;

    let cover_vs_reference = reference.and_then(|reference| {
        let mut hit = 0usize;
        let mut total = 0usize;
        for (cand, rf) in candidate.iter().zip(reference) {
            let ref_cov = rf.covered_positions();
            total += ref_cov.len();
            hit += ref_cov.iter().filter(|p| cand.contains(**p)).count();
        }
        (total > 0).then(|| hit as f64 / total as f64)
    });

    Ok(AnnotationStats { avg_span_count, avg_proportion, cover_vs_reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{Span, TokenSequence};
    use proptest::prelude::*;

    fn scored(logprobs: Vec<f64>) -> ScoredSequence {
        let tokens = (0..logprobs.len() as u32).collect();
        ScoredSequence::new(TokenSequence::new("t", tokens).unwrap(), logprobs).unwrap()
    }

    fn span(start: usize, len: usize) -> Span {
        Span::new(start, len).unwrap()
    }

    #[test]
    fn mean_alpha_example() {
        // mean = -19/7 ~ -2.714; picked {1,4,5}; 4-1 = 3 > 2 so no fill
        let s = scored(vec![-1.0, -5.0, -1.0, -1.0, -6.0, -4.0, -1.0]);
        let set = select_online(&s, &OnlineSelectConfig::default()).unwrap();
        assert_eq!(set.spans(), &[span(1, 1), span(4, 2)]);
    }

    #[test]
    fn ties_at_mean_are_excluded() {
        let s = scored(vec![-2.0; 5]);
        let set = select_online(&s, &OnlineSelectConfig::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn gap_closure_fills_between() {
        // picked {2,4} with gap 2 -> 3 added -> one span (2,3)
        let s = scored(vec![-1.0, -1.0, -9.0, -1.0, -9.0, -1.0]);
        let cfg = OnlineSelectConfig { alpha: Some(-5.0), ..Default::default() };
        let set = select_online(&s, &cfg).unwrap();
        assert_eq!(set.spans(), &[span(2, 3)]);
    }

    #[test]
    fn alpha_neg_infinity_selects_nothing() {
        let s = scored(vec![-3.0, -8.0, -1.0]);
        let cfg = OnlineSelectConfig { alpha: Some(f64::NEG_INFINITY), ..Default::default() };
        assert!(select_online(&s, &cfg).unwrap().is_empty());
    }

    #[test]
    fn alpha_zero_selects_everything_negative() {
        let s = scored(vec![-3.0, -8.0, -1.0]);
        let cfg = OnlineSelectConfig { alpha: Some(0.0), ..Default::default() };
        let set = select_online(&s, &cfg).unwrap();
        assert_eq!(set.spans(), &[span(0, 3)]);
    }

    #[test]
    fn rejects_positive_alpha() {
        let cfg = OnlineSelectConfig { alpha: Some(0.5), ..Default::default() };
        assert!(select_online(&scored(vec![-1.0]), &cfg).is_err());
    }

    #[test]
    fn stats_identity_cover() {
        let ann = vec![SpanSet::new(vec![span(0, 2)]), SpanSet::new(vec![span(3, 1)])];
        let stats = annotation_stats(&ann, Some(&ann), &[5, 5]).unwrap();
        assert_eq!(stats.cover_vs_reference, Some(1.0));
    }

    #[test]
    fn stats_empty_candidate() {
        let cand = vec![SpanSet::empty(), SpanSet::empty()];
        let rf = vec![SpanSet::new(vec![span(0, 2)]), SpanSet::new(vec![span(3, 1)])];
        let stats = annotation_stats(&cand, Some(&rf), &[5, 5]).unwrap();
        assert_eq!(stats.avg_span_count, 0.0);
        assert_eq!(stats.cover_vs_reference, Some(0.0));
    }

    #[test]
    fn stats_hand_example() {
        // lengths 10; candidate {(0,2)} and {(5,5)}; reference {(1,2)} and {(5,2)}
        let cand = vec![SpanSet::new(vec![span(0, 2)]), SpanSet::new(vec![span(5, 5)])];
        let rf = vec![SpanSet::new(vec![span(1, 2)]), SpanSet::new(vec![span(5, 2)])];
        let stats = annotation_stats(&cand, Some(&rf), &[10, 10]).unwrap();
        assert!((stats.avg_span_count - 1.0).abs() < 1e-12);
        assert!((stats.avg_proportion - 0.35).abs() < 1e-12);
        assert!((stats.cover_vs_reference.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn stats_errors_and_undefined_cover() {
        let cand = vec![SpanSet::empty()];
        assert!(annotation_stats(&cand, None, &[3, 4]).is_err());
        let rf = vec![SpanSet::empty()];
        let stats = annotation_stats(&cand, Some(&rf), &[3]).unwrap();
        assert_eq!(stats.cover_vs_reference, None);
    }

    proptest! {
        /// Every covered token either scored below alpha or lies between two
        /// such tokens at distance <= gap.
        #[test]
        fn output_positions_are_justified(
            logprobs in proptest::collection::vec(-10.0f64..0.0, 1..40),
            alpha in -8.0f64..0.0,
            gap in 0usize..4,
        ) {
            let s = scored(logprobs.clone());
            let cfg = OnlineSelectConfig { alpha: Some(alpha), gap, fixed_point: false };
            let set = select_online(&s, &cfg).unwrap();
            let picked: Vec<usize> = (0..logprobs.len())
                .filter(|t| logprobs[*t] < alpha)
                .collect();
            for pos in set.covered_positions() {
                let direct = logprobs[pos] < alpha;
                let between = picked.iter().any(|&i| {
                    picked.iter().any(|&j| i < pos && pos < j && j - i <= gap)
                });
                prop_assert!(direct || between, "position {} unjustified", pos);
            }
        }

        /// With a fixed threshold, lowering one token's log-probability never
        /// shrinks the covered set.
        #[test]
        fn monotone_under_lowering(
            logprobs in proptest::collection::vec(-6.0f64..0.0, 2..24),
            idx in 0usize..24,
            drop in 0.5f64..6.0,
        ) {
            let idx = idx % logprobs.len();
            let cfg = OnlineSelectConfig { alpha: Some(-3.0), ..Default::default() };
            let before = select_online(&scored(logprobs.clone()), &cfg).unwrap();
            let mut lowered = logprobs;
            lowered[idx] -= drop;
            let after = select_online(&scored(lowered), &cfg).unwrap();
            for pos in before.covered_positions() {
                prop_assert!(after.contains(pos));
            }
        }

        /// Single-pass closure already reaches the fixed point.
        #[test]
        fn single_pass_is_fixed_point(
            logprobs in proptest::collection::vec(-10.0f64..0.0, 1..40),
            alpha in -8.0f64..0.0,
            gap in 0usize..5,
        ) {
            let s = scored(logprobs);
            let single = select_online(
                &s,
                &OnlineSelectConfig { alpha: Some(alpha), gap, fixed_point: false },
            ).unwrap();
            let fixed = select_online(
                &s,
                &OnlineSelectConfig { alpha: Some(alpha), gap, fixed_point: true },
            ).unwrap();
            prop_assert_eq!(single, fixed);
        }
    }
}
