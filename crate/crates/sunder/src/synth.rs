//! Synthetic byte-level corpora with planted sensitive strings.
//!
//! Instances are built from a per-corpus pool of short sentences over a
//! small word list, so the common text repeats heavily across instances and
//! a trained model generalizes to held-out recombinations. Forget instances
//! additionally get digit strings (optionally email-shaped) planted between
//! sentences; their exact byte ranges are recorded as ground-truth spans.
//! Sensitive strings draw only on digits and `@ . -`, characters the common
//! sentences never use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::seq::{Corpus, CorpusInstance, CorpusRole, Span, SpanSet, TokenSequence};
use crate::Result;

const WORDS: &[&str] = &[
    "the", "a", "my", "old", "new", "small", "grey", "quiet", "bright", "cat", "dog", "bird",
    "boat", "tree", "house", "river", "cloud", "stone", "sat", "ran", "flew", "slept", "sang",
    "moved", "stood", "fell", "over", "under", "near", "behind", "beside", "was", "is", "and",
    "then", "while", "again", "slowly",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_heldout: usize,
    pub n_forget: usize,
    /// Instance length in tokens (bytes).
    pub seq_len: usize,
    /// Distinct sentences shared by every instance of the corpus.
    pub sentence_pool: usize,
    /// Planted sensitive strings per forget instance (inclusive range).
    pub spans_per_instance: (usize, usize),
    /// Length of each planted digit string (inclusive range).
    pub span_len: (usize, usize),
    /// Also plant email-shaped strings (user digits + host), not just bare
    /// digit runs.
    pub emails: bool,
    /// Fraction of held-out sentences drawn fresh instead of from the shared
    /// pool. At desk scale a model trained on the pool predicts pure pool
    /// recombinations almost as well as training data; mixing in novel
    /// sentences keeps the held-out metrics meaningfully below those of the
    /// memorized forget set.
    pub heldout_novel_frac: f64,
    /// Extra sampling weight for the first pool sentence, mimicking the
    /// frequency skew of genuinely common knowledge. With weight `w`, the
    /// anchor sentence fills a `w` fraction of sentence slots and the rest
    /// of the pool shares the remainder uniformly.
    pub anchor_weight: f64,
    /// The anchor sentence itself (pool entry 0). Distinctive words keep its
    /// continuations uncontested by the rest of the pool, the way real
    /// common knowledge is distinctive against ordinary prose.
    pub anchor_text: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 24,
            n_heldout: 8,
            n_forget: 8,
            seq_len: 200,
            sentence_pool: 10,
            spans_per_instance: (2, 4),
            span_len: (4, 9),
            emails: true,
            heldout_novel_frac: 0.5,
            anchor_weight: 0.25,
            anchor_text: "NORWAY IS OSLO".to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub heldout: Corpus,
    pub forget: Corpus,
    /// The shared sentence pool (handy as a source of "common knowledge"
    /// strings for injection experiments).
    pub pool: Vec<String>,
}

/// Derives a child seed from a root seed and a purpose label, so one run
/// seed deterministically fans out to every randomized stage.
pub fn subseed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(4..=7);
    let mut out = String::new();
    for _ in 0..words {
        out.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
        out.push(' ');
    }
    out
}

fn sensitive_string(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let digits = |rng: &mut ChaCha8Rng, len: usize| -> String {
        (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10))).collect()
    };
    let len = rng.gen_range(cfg.span_len.0..=cfg.span_len.1);
    if cfg.emails && len >= 7 && rng.gen_bool(0.3) {
        // numeric address shape, e.g. 4821@93.70
        let user_len = len - 6;
        format!("{}@{}.{}", digits(rng, user_len), digits(rng, 2), digits(rng, 2))
    } else {
        digits(rng, len)
    }
}

/// Builds one instance of exactly `seq_len` bytes from the sentence pool,
/// planting `plants` sensitive strings at sentence boundaries near
/// pre-chosen offsets. Returns the text and the byte spans of the planted
/// strings that survive truncation.
fn build_instance(
    pool: &[String],
    plants: usize,
    novel_frac: f64,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (String, Vec<Span>) {
    let mut targets: Vec<usize> = (0..plants)
        .map(|_| rng.gen_range(cfg.seq_len / 10..cfg.seq_len * 8 / 10))
        .collect();
    targets.sort_unstable();

    let mut text = String::new();
    let mut spans = Vec::new();
    let mut next_target = 0;
    // accumulate the novel fraction instead of coin-flipping it, so every
    // instance realizes the same mix and the held-out thresholds stay
    // stable across corpus seeds
    let mut novel_budget = 0.0f64;
    while text.len() < cfg.seq_len {
        if next_target < targets.len() && text.len() >= targets[next_target] {
            next_target += 1;
            let s = sensitive_string(cfg, rng);
            let start = text.len();
            // skip the plant entirely when it would be clipped
            if start + s.len() <= cfg.seq_len {
                text.push_str(&s);
                text.push(' ');
                spans.push(Span::new(start, s.len()).expect("planted strings are non-empty"));
            }
            continue;
        }
        novel_budget += novel_frac;
        if novel_budget >= 1.0 {
            novel_budget -= 1.0;
            let fresh = sentence(rng);
            text.push_str(&fresh);
        } else if cfg.anchor_weight > 0.0 && rng.gen_bool(cfg.anchor_weight) {
            text.push_str(&pool[0]);
        } else {
            text.push_str(&pool[rng.gen_range(0..pool.len())]);
        }
    }
    text.truncate(cfg.seq_len);
    (text, spans)
}

/// Generates train/heldout/forget corpora from one seed. Same seed, same
/// corpora, byte for byte.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    assert!(cfg.seq_len >= 32, "instances need room for a sentence and a plant");
    let mut pool_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "sentence-pool"));
    let mut pool: Vec<String> = (0..cfg.sentence_pool.max(1))
        .map(|_| sentence(&mut pool_rng))
        .collect();
    if cfg.anchor_weight > 0.0 && !cfg.anchor_text.is_empty() {
        let mut anchor = cfg.anchor_text.clone();
        if !anchor.ends_with(' ') {
            anchor.push(' ');
        }
        pool[0] = anchor;
    }

    let make = |role: CorpusRole,
                count: usize,
                prefix: &str,
                with_spans: bool,
                novel_frac: f64,
                rng: &mut ChaCha8Rng|
     -> Result<Corpus> {
        let mut instances = Vec::with_capacity(count);
        for i in 0..count {
            let plants = if with_spans {
                rng.gen_range(cfg.spans_per_instance.0..=cfg.spans_per_instance.1)
            } else {
                0
            };
            let (text, spans) = build_instance(&pool, plants, novel_frac, cfg, rng);
            let seq = TokenSequence::from_text(format!("{prefix}{i:03}"), &text)?;
            let mut inst = CorpusInstance::new(seq);
            if with_spans {
                inst = inst.with_spans(SpanSet::new(spans));
            }
            instances.push(inst);
        }
        Corpus::new(role, instances)
    };

    let mut train_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "train"));
    let mut heldout_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "heldout"));
    let mut forget_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "forget"));
    Ok(SynthCorpus {
        train: make(CorpusRole::Train, cfg.n_train, "train", false, 0.0, &mut train_rng)?,
        heldout: make(
            CorpusRole::Heldout,
            cfg.n_heldout,
            "heldout",
            false,
            cfg.heldout_novel_frac,
            &mut heldout_rng,
        )?,
        forget: make(CorpusRole::Forget, cfg.n_forget, "forget", true, 0.0, &mut forget_rng)?,
        pool,
    })
}

/// Train corpus plus forget corpus: what the model is trained on before
/// unlearning (a model can only forget data it has seen).
pub fn training_mix(synth: &SynthCorpus) -> Result<Corpus> {
    let mut instances = synth.train.instances().to_vec();
    instances.extend(synth.forget.instances().iter().cloned());
    Corpus::new(CorpusRole::Train, instances)
}
