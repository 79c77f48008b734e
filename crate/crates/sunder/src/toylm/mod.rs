//! The trainable testbed: next-token training, selective and fully-negated
//! unlearning, threshold-based stopping, and the knowledge-injection attack.
//!
//! Unlearning minimizes the summed log-probability of the targeted positions
//! (pushing their probabilities down). In selective mode the targets are the
//! span-covered positions; in full mode every position of each instance is a
//! target. Position 0 is excluded from both modes so that selective
//! unlearning with full-coverage spans takes exactly the step full mode
//! takes.

mod model;

pub use model::{Gradients, ToyLm, ToyLmConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, EvalConfig, MetricReport, MetricSelection};
use crate::seq::{Corpus, CorpusInstance, CorpusRole, SpanSet, TokenSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlearnMode {
    /// Push down only span-covered tokens.
    Selective,
    /// Negate the training objective on every position.
    Full,
}

impl std::str::FromStr for UnlearnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selective" => Ok(UnlearnMode::Selective),
            "full" => Ok(UnlearnMode::Full),
            other => Err(Error::input(format!(
                "unknown unlearning mode '{other}' (expected selective or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // toy-scale step size; full-size language models train around 5e-5
        TrainConfig { epochs: 200, lr: 1e-2, seed: 0 }
    }
}

/// Trains next-token prediction over every position of every instance,
/// one averaged gradient step per instance, instance order reshuffled each
/// epoch from the config seed.
pub fn train(model: &mut ToyLm, corpus: &Corpus, cfg: &TrainConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::input("cannot train on an empty corpus"));
    }
    if cfg.lr <= 0.0 {
        return Err(Error::input("learning rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let seq = &corpus.instances()[idx].seq;
            let (_, mut grads) = model.nll_loss_and_grads(seq);
            grads.scale_by(1.0 / seq.len() as f64);
            model.apply_step(&grads, cfg.lr);
        }
    }
    Ok(())
}

/// Outcome of a single unlearning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnStep {
    /// Summed log-probability of the targeted positions before the step
    /// (the quantity being minimized).
    pub loss: f64,
    /// Number of positions that contributed gradient.
    pub active_positions: usize,
}

impl UnlearnStep {
    /// True when no position contributed and the step was a no-op.
    pub fn noop(&self) -> bool {
        self.active_positions == 0
    }
}

/// Loss and gradient of the unlearning objective over a batch: the summed
/// log-probability of every targeted position. Selective mode targets
/// span-covered positions (excluding position 0); full mode targets every
/// position in `[1, T)`.
pub fn unlearn_loss_and_grads(
    model: &ToyLm,
    batch: &[(&TokenSequence, &SpanSet)],
    mode: UnlearnMode,
) -> (f64, Gradients, usize) {
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    let mut active = 0usize;
    let context = model.config().context;
    for (seq, spans) in batch {
        let tokens = seq.tokens();
        for t in 1..tokens.len() {
            let targeted = match mode {
                UnlearnMode::Selective => spans.contains(t),
                UnlearnMode::Full => true,
            };
            if !targeted {
                continue;
            }
            let window_start = t.saturating_sub(context);
            // weight -1: descend on +log p, i.e. suppress the target
            loss += model.accumulate_position(&tokens[window_start..t], tokens[t], -1.0, &mut grads);
            active += 1;
        }
    }
    (loss, grads, active)
}

/// One unlearning step over a batch: per-instance losses are summed over
/// their targeted positions and averaged over the batch, so each targeted
/// position is suppressed at the same rate in both modes. With no targeted
/// position the model is left untouched and a no-op step (loss 0) is
/// reported.
pub fn unlearn_step(
    model: &mut ToyLm,
    batch: &[(&TokenSequence, &SpanSet)],
    mode: UnlearnMode,
    lr: f64,
) -> UnlearnStep {
    let (loss, mut grads, active) = unlearn_loss_and_grads(model, batch, mode);
    if active == 0 {
        log::warn!("unlearn step: no targeted positions in batch, skipping");
        return UnlearnStep { loss: 0.0, active_positions: 0 };
    }
    grads.scale_by(1.0 / batch.len() as f64);
    model.apply_step(&grads, lr);
    UnlearnStep { loss, active_positions: active }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    HeldoutAverage,
    Explicit,
}

/// Stop levels for unlearning: the extraction likelihood and memorization
/// accuracy of regular data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingThreshold {
    pub tau_el: f64,
    pub tau_ma: f64,
    pub source: ThresholdSource,
}

impl ForgettingThreshold {
    pub fn explicit(tau_el: f64, tau_ma: f64) -> Result<Self> {
        for v in [tau_el, tau_ma] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("threshold {v} outside [0,1]")));
            }
        }
        Ok(ForgettingThreshold { tau_el, tau_ma, source: ThresholdSource::Explicit })
    }
}

/// Derives forgetting thresholds as the held-out averages of EL_n and MA.
pub fn derive_threshold(
    model: &ToyLm,
    heldout: &Corpus,
    n: usize,
    gen_cap: Option<usize>,
) -> Result<ForgettingThreshold> {
    if heldout.is_empty() {
        return Err(Error::input("cannot derive thresholds from an empty corpus"));
    }
    let cfg = EvalConfig {
        n,
        gen_cap,
        include_first_token: false,
        metrics: MetricSelection { el: true, ma: true, s_el: false, s_ma: false },
    };
    let report = metrics::evaluate_corpus(model, heldout, &cfg)?;
    let tau_el = report.corpus_avg.el.ok_or_else(|| {
        Error::input("EL undefined on every held-out instance; raise gen_cap to at least n")
    })?;
    let tau_ma = report
        .corpus_avg
        .ma
        .expect("ma requested and defined for every instance");
    if tau_ma > 0.95 {
        log::warn!(
            "held-out MA is {tau_ma:.3}: thresholds derived from data the model memorized \
             are unlikely to be reachable"
        );
    }
    Ok(ForgettingThreshold { tau_el, tau_ma, source: ThresholdSource::HeldoutAverage })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub mode: UnlearnMode,
    /// Unlearning step size (toy-scale; the full-size counterpart is 5e-5).
    pub lr: f64,
    /// Forgetting instances per step; the batch size equals this.
    pub d: usize,
    pub max_epochs: usize,
    /// n-gram order for the threshold metrics.
    pub n: usize,
    pub gen_cap: Option<usize>,
    pub seed: u64,
    /// Stop on S-EL/S-MA instead of EL/MA.
    pub stop_on_sensitive: bool,
    /// Adagrad-normalize the loop's steps. Plain descent suppresses a token
    /// at a rate proportional to `1 - p`, which at toy scale all but freezes
    /// the best-memorized positions under full negation; the accumulator
    /// normalization keeps their suppression rate meaningful, as an adaptive
    /// optimizer would at full scale.
    pub adagrad: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            mode: UnlearnMode::Selective,
            lr: 5e-3,
            d: 8,
            max_epochs: 200,
            n: 10,
            gen_cap: Some(64),
            seed: 0,
            stop_on_sensitive: false,
            adagrad: false,
        }
    }
}

/// Forget-set metrics after a given number of unlearning epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed unlearning loss over the epoch's steps; absent for the
    /// pre-unlearning evaluation at epoch 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnOutcome {
    pub epochs_used: usize,
    pub converged: bool,
    /// Per-epoch metric trajectory, starting with the epoch-0 evaluation.
    pub trajectory: Vec<EpochRecord>,
}

fn thresholds_met(
    report: &MetricReport,
    threshold: &ForgettingThreshold,
    sensitive: bool,
) -> bool {
    let (el, ma) = if sensitive {
        (report.corpus_avg.s_el, report.corpus_avg.s_ma)
    } else {
        (report.corpus_avg.el, report.corpus_avg.ma)
    };
    match (el, ma) {
        (Some(el), Some(ma)) => el <= threshold.tau_el && ma <= threshold.tau_ma,
        _ => false,
    }
}

/// Runs unlearning epochs over the forget set until the forget-set metrics
/// drop to the threshold or `max_epochs` is reached. Metrics are evaluated
/// at every epoch end (and once before any step); batches of `d` instances
/// are drawn in an order reshuffled per epoch from the config seed.
pub fn unlearn_until_threshold(
    model: &mut ToyLm,
    forget: &Corpus,
    cfg: &UnlearnConfig,
    threshold: &ForgettingThreshold,
) -> Result<UnlearnOutcome> {
    if cfg.d == 0 {
        return Err(Error::input("d must be >= 1"));
    }
    if forget.len() < cfg.d {
        return Err(Error::input(format!(
            "forget set has {} instances, need at least d = {}",
            forget.len(),
            cfg.d
        )));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::input("max_epochs must be >= 1"));
    }
    for inst in forget.instances() {
        if inst.spans.is_none() {
            return Err(Error::input(format!(
                "forget instance '{}' has no span annotation",
                inst.seq.id()
            )));
        }
    }
    if cfg.gen_cap.is_some_and(|cap| cap < cfg.n) {
        return Err(Error::input(format!(
            "gen_cap {} is below n = {}, threshold metrics would be undefined",
            cfg.gen_cap.unwrap(),
            cfg.n
        )));
    }

    let eval_cfg = EvalConfig {
        n: cfg.n,
        gen_cap: cfg.gen_cap,
        include_first_token: false,
        metrics: MetricSelection::default(),
    };
    let mut trajectory = Vec::new();
    let initial = metrics::evaluate_corpus(model, forget, &eval_cfg)?;
    let mut converged = thresholds_met(&initial, threshold, cfg.stop_on_sensitive);
    trajectory.push(EpochRecord { epoch: 0, loss: None, report: initial });
    let mut epochs_used = 0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..forget.len()).collect();
    let mut accum = cfg.adagrad.then(|| model.zero_grads());
    while !converged && epochs_used < cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.d) {
            let batch: Vec<(&TokenSequence, &SpanSet)> = chunk
                .iter()
                .map(|&i| {
                    let inst = &forget.instances()[i];
                    (&inst.seq, inst.spans.as_ref().expect("checked above"))
                })
                .collect();
            match accum.as_mut() {
                Some(accum) => {
                    let (loss, mut grads, active) =
                        unlearn_loss_and_grads(model, &batch, cfg.mode);
                    if active > 0 {
                        grads.scale_by(1.0 / batch.len() as f64);
                        model.apply_step_adagrad(&grads, accum, cfg.lr);
                        epoch_loss += loss;
                    }
                }
                None => epoch_loss += unlearn_step(model, &batch, cfg.mode, cfg.lr).loss,
            }
        }
        epochs_used += 1;
        let report = metrics::evaluate_corpus(model, forget, &eval_cfg)?;
        converged = thresholds_met(&report, threshold, cfg.stop_on_sensitive);
        trajectory.push(EpochRecord { epoch: epochs_used, loss: Some(epoch_loss), report });
    }

    Ok(UnlearnOutcome { epochs_used, converged, trajectory })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectPlacement {
    Append,
    Prepend,
}

/// Splices `fact` into every instance of a forget set, simulating an
/// adversary that hides common knowledge inside deletion requests. The
/// injected region is excluded from every instance's span set (for prepends
/// the existing spans shift up); stale reference log-probabilities are
/// dropped. An empty fact returns the corpus unchanged.
pub fn inject_knowledge(
    forget: &Corpus,
    fact: &[u32],
    fact_surfaces: Option<&[String]>,
    placement: InjectPlacement,
) -> Result<Corpus> {
    if fact.is_empty() {
        return Corpus::new(forget.role(), forget.instances().to_vec());
    }
    if let Some(surfaces) = fact_surfaces {
        if surfaces.len() != fact.len() {
            return Err(Error::input(format!(
                "{} fact surfaces for {} fact tokens",
                surfaces.len(),
                fact.len()
            )));
        }
    }
    let mut instances = Vec::with_capacity(forget.len());
    for inst in forget.instances() {
        let mut tokens = Vec::with_capacity(inst.seq.len() + fact.len());
        match placement {
            InjectPlacement::Append => {
                tokens.extend_from_slice(inst.seq.tokens());
                tokens.extend_from_slice(fact);
            }
            InjectPlacement::Prepend => {
                tokens.extend_from_slice(fact);
                tokens.extend_from_slice(inst.seq.tokens());
            }
        }
        let seq = match (inst.seq.surfaces(), fact_surfaces) {
            (Some(orig), Some(extra)) => {
                let mut surfaces = Vec::with_capacity(tokens.len());
                match placement {
                    InjectPlacement::Append => {
                        surfaces.extend_from_slice(orig);
                        surfaces.extend_from_slice(extra);
                    }
                    InjectPlacement::Prepend => {
                        surfaces.extend_from_slice(extra);
                        surfaces.extend_from_slice(orig);
                    }
                }
                TokenSequence::with_surfaces(inst.seq.id(), tokens, surfaces)?
            }
            _ => TokenSequence::new(inst.seq.id(), tokens)?,
        };
        let spans = inst.spans.as_ref().map(|spans| match placement {
            InjectPlacement::Append => spans.clone(),
            InjectPlacement::Prepend => spans.shifted(fact.len()),
        });
        instances.push(CorpusInstance { seq, spans, logprobs: None });
    }
    Corpus::new(forget.role(), instances)
}

/// Convenience for tests and the attack harness: a forget corpus from plain
/// sequences with span sets.
pub fn forget_corpus(items: Vec<(TokenSequence, SpanSet)>) -> Result<Corpus> {
    Corpus::new(
        CorpusRole::Forget,
        items
            .into_iter()
            .map(|(seq, spans)| CorpusInstance::new(seq).with_spans(spans))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ma, LanguageModel};
    use crate::seq::Span;

    fn small_cfg() -> ToyLmConfig {
        ToyLmConfig { vocab_size: 12, context: 4, d_emb: 6, d_hid: 10 }
    }

    fn seq(id: &str, tokens: Vec<u32>) -> TokenSequence {
        TokenSequence::new(id, tokens).unwrap()
    }

    fn spanset(spans: &[(usize, usize)]) -> SpanSet {
        SpanSet::new(spans.iter().map(|&(s, l)| Span::new(s, l).unwrap()).collect())
    }

    fn one_seq_corpus(tokens: Vec<u32>) -> Corpus {
        Corpus::new(CorpusRole::Train, vec![CorpusInstance::new(seq("s0", tokens))]).unwrap()
    }

    #[test]
    fn zero_epochs_leaves_init_untouched() {
        let mut model = ToyLm::new(small_cfg(), 1);
        let before = model.params_flat();
        let corpus = one_seq_corpus(vec![1, 2, 3, 4]);
        train(&mut model, &corpus, &TrainConfig { epochs: 0, lr: 0.1, seed: 0 }).unwrap();
        assert_eq!(model.params_flat(), before);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let corpus = one_seq_corpus(vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let cfg = TrainConfig { epochs: 30, lr: 0.1, seed: 9 };
        let mut a = ToyLm::new(small_cfg(), 1);
        let mut b = ToyLm::new(small_cfg(), 1);
        train(&mut a, &corpus, &cfg).unwrap();
        train(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn training_memorizes_a_single_sequence() {
        let tokens = vec![3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8];
        let corpus = one_seq_corpus(tokens.clone());
        let mut model = ToyLm::new(small_cfg(), 2);
        train(&mut model, &corpus, &TrainConfig { epochs: 400, lr: 0.3, seed: 0 }).unwrap();
        let x = seq("x", tokens);
        assert!(ma(&model, &x, false).unwrap() > 0.95);
    }

    #[test]
    fn empty_corpus_is_error() {
        let mut model = ToyLm::new(small_cfg(), 1);
        let corpus = Corpus::new(CorpusRole::Train, vec![]).unwrap();
        assert!(train(&mut model, &corpus, &TrainConfig::default()).is_err());
    }

    #[test]
    fn memorized_prefix_reproduces_suffix() {
        let tokens = vec![3, 1, 4, 1, 5, 9, 2, 6];
        let corpus = one_seq_corpus(tokens.clone());
        let mut model = ToyLm::new(small_cfg(), 2);
        train(&mut model, &corpus, &TrainConfig { epochs: 400, lr: 0.3, seed: 0 }).unwrap();
        let generated = model.generate_greedy(&tokens[..3], 5);
        assert_eq!(generated, tokens[3..].to_vec());
    }

    #[test]
    fn selective_with_empty_spans_is_noop() {
        let mut model = ToyLm::new(small_cfg(), 3);
        let before = model.params_flat();
        let s = seq("s", vec![1, 2, 3, 4]);
        let empty = SpanSet::empty();
        let step = unlearn_step(&mut model, &[(&s, &empty)], UnlearnMode::Selective, 0.1);
        assert!(step.noop());
        assert_eq!(step.loss, 0.0);
        assert_eq!(model.params_flat(), before);
    }

    #[test]
    fn full_coverage_spans_match_full_mode() {
        let s = seq("s", vec![1, 2, 3, 4, 5]);
        let full_cover = spanset(&[(0, 5)]);
        let empty = SpanSet::empty();

        let mut a = ToyLm::new(small_cfg(), 4);
        let mut b = a.clone();
        unlearn_step(&mut a, &[(&s, &full_cover)], UnlearnMode::Selective, 0.05);
        unlearn_step(&mut b, &[(&s, &empty)], UnlearnMode::Full, 0.05);
        for (pa, pb) in a.params_flat().iter().zip(b.params_flat()) {
            assert!((pa - pb).abs() < 1e-9);
        }
    }

    #[test]
    fn unlearn_step_suppresses_span_logprob() {
        let tokens = vec![1, 2, 3, 4, 5, 6];
        let corpus = one_seq_corpus(tokens.clone());
        let mut model = ToyLm::new(small_cfg(), 5);
        train(&mut model, &corpus, &TrainConfig { epochs: 100, lr: 0.2, seed: 0 }).unwrap();
        let s = seq("s", tokens);
        let spans = spanset(&[(2, 2)]);
        let batch = [(&s, &spans)];
        let (before, _, _) = unlearn_loss_and_grads(&model, &batch, UnlearnMode::Selective);
        unlearn_step(&mut model, &batch, UnlearnMode::Selective, 0.01);
        let (after, _, _) = unlearn_loss_and_grads(&model, &batch, UnlearnMode::Selective);
        assert!(
            after < before,
            "summed span log-prob should drop: {before} -> {after}"
        );
    }

    #[test]
    fn derive_threshold_untrained_model_is_near_chance() {
        let model = ToyLm::new(ToyLmConfig::default(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let instances = (0..4)
            .map(|i| {
                let tokens = (0..40).map(|_| rand::Rng::gen_range(&mut rng, 0..256u32)).collect();
                CorpusInstance::new(seq(&format!("h{i}"), tokens))
            })
            .collect();
        let heldout = Corpus::new(CorpusRole::Heldout, instances).unwrap();
        let thr = derive_threshold(&model, &heldout, 4, Some(16)).unwrap();
        assert!(thr.tau_el < 0.05, "el {}", thr.tau_el);
        assert!(thr.tau_ma < 0.05, "ma {}", thr.tau_ma);
        assert_eq!(thr.source, ThresholdSource::HeldoutAverage);
    }

    #[test]
    fn explicit_threshold_validates_range() {
        assert!(ForgettingThreshold::explicit(0.2, 0.4).is_ok());
        assert!(ForgettingThreshold::explicit(-0.1, 0.4).is_err());
        assert!(ForgettingThreshold::explicit(0.2, 1.5).is_err());
    }

    #[test]
    fn already_below_threshold_stops_at_zero_epochs() {
        let mut model = ToyLm::new(small_cfg(), 6);
        let before = model.params_flat();
        let forget = forget_corpus(vec![(
            seq("f0", vec![1, 2, 3, 4, 5, 6, 7, 8]),
            spanset(&[(2, 2)]),
        )])
        .unwrap();
        let threshold = ForgettingThreshold::explicit(1.0, 1.0).unwrap();
        let cfg = UnlearnConfig { d: 1, n: 2, gen_cap: Some(8), ..Default::default() };
        let outcome = unlearn_until_threshold(&mut model, &forget, &cfg, &threshold).unwrap();
        assert_eq!(outcome.epochs_used, 0);
        assert!(outcome.converged);
        assert_eq!(outcome.trajectory.len(), 1);
        assert_eq!(model.params_flat(), before);
    }

    #[test]
    fn unreachable_threshold_reports_not_converged() {
        let tokens: Vec<u32> = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let corpus = one_seq_corpus(tokens.clone());
        let mut model = ToyLm::new(small_cfg(), 7);
        train(&mut model, &corpus, &TrainConfig { epochs: 300, lr: 0.3, seed: 0 }).unwrap();
        let forget = forget_corpus(vec![(seq("f0", tokens), spanset(&[(2, 2)]))]).unwrap();
        let threshold = ForgettingThreshold::explicit(0.0, 0.0).unwrap();
        let cfg = UnlearnConfig {
            d: 1,
            n: 2,
            gen_cap: Some(8),
            max_epochs: 2,
            lr: 1e-9,
            ..Default::default()
        };
        let outcome = unlearn_until_threshold(&mut model, &forget, &cfg, &threshold).unwrap();
        assert!(!outcome.converged);
        assert_eq!(outcome.epochs_used, 2);
        assert_eq!(outcome.trajectory.len(), 3);
    }

    #[test]
    fn inject_appends_and_keeps_spans() {
        let forget = forget_corpus(vec![(seq("f0", vec![1, 2, 3]), spanset(&[(1, 2)]))]).unwrap();
        let attacked = inject_knowledge(&forget, &[8, 9], None, InjectPlacement::Append).unwrap();
        let inst = &attacked.instances()[0];
        assert_eq!(inst.seq.tokens(), &[1, 2, 3, 8, 9]);
        assert_eq!(inst.spans.as_ref().unwrap(), &spanset(&[(1, 2)]));
    }

    #[test]
    fn inject_prepend_shifts_spans() {
        let forget = forget_corpus(vec![(seq("f0", vec![1, 2, 3]), spanset(&[(1, 2)]))]).unwrap();
        let attacked = inject_knowledge(&forget, &[8, 9], None, InjectPlacement::Prepend).unwrap();
        let inst = &attacked.instances()[0];
        assert_eq!(inst.seq.tokens(), &[8, 9, 1, 2, 3]);
        assert_eq!(inst.spans.as_ref().unwrap(), &spanset(&[(3, 2)]));
    }

    #[test]
    fn inject_empty_fact_is_identity() {
        let forget = forget_corpus(vec![(seq("f0", vec![1, 2, 3]), spanset(&[(1, 1)]))]).unwrap();
        let attacked = inject_knowledge(&forget, &[], None, InjectPlacement::Append).unwrap();
        assert_eq!(attacked.instances()[0].seq.tokens(), &[1, 2, 3]);
    }

    #[test]
    fn inject_lengthens_every_instance_by_fact_len() {
        let forget = forget_corpus(vec![
            (seq("f0", vec![1, 2, 3]), spanset(&[(1, 1)])),
            (seq("f1", vec![4, 5]), SpanSet::empty()),
        ])
        .unwrap();
        let attacked = inject_knowledge(&forget, &[7, 7, 7], None, InjectPlacement::Append).unwrap();
        for (orig, new) in forget.instances().iter().zip(attacked.instances()) {
            assert_eq!(new.seq.len(), orig.seq.len() + 3);
        }
    }
}
