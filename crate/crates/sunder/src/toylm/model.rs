//! A small byte-level MLP language model with hand-written gradients.
//!
//! The model scores the next token from a fixed window of the last `context`
//! tokens: each window slot is embedded, the concatenated embeddings pass
//! through one tanh hidden layer, and a softmax over the vocabulary gives
//! next-token log-probabilities. Slots before the start of a sequence use a
//! zero input vector, so the empty prefix yields a well-defined unconditional
//! first-token distribution.
//!
//! Everything is deterministic: parameter init draws from a ChaCha stream
//! seeded by the caller, and forward/backward touch no other randomness.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::LanguageModel;
use crate::seq::{ScoredSequence, TokenSequence};
use crate::{Error, Result};

const PARAMS_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    /// Context window length in tokens.
    pub context: usize,
    pub d_emb: usize,
    pub d_hid: usize,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig { vocab_size: 256, context: 8, d_emb: 16, d_hid: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLm {
    cfg: ToyLmConfig,
    seed: u64,
    emb: Array2<f64>, // vocab x d_emb
    w1: Array2<f64>,  // (context*d_emb) x d_hid
    b1: Array1<f64>,
    w2: Array2<f64>, // d_hid x vocab
    b2: Array1<f64>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    emb: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Gradients {
    fn zeros(cfg: &ToyLmConfig) -> Self {
        Gradients {
            emb: Array2::zeros((cfg.vocab_size, cfg.d_emb)),
            w1: Array2::zeros((cfg.context * cfg.d_emb, cfg.d_hid)),
            b1: Array1::zeros(cfg.d_hid),
            w2: Array2::zeros((cfg.d_hid, cfg.vocab_size)),
            b2: Array1::zeros(cfg.vocab_size),
        }
    }

    /// Flattened view in the same order as [`ToyLm::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.emb.iter());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn scale_by(&mut self, factor: f64) {
        self.emb *= factor;
        self.w1 *= factor;
        self.b1 *= factor;
        self.w2 *= factor;
        self.b2 *= factor;
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    config: ToyLmConfig,
    seed: u64,
    params: Vec<f64>,
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

impl ToyLm {
    pub fn new(cfg: ToyLmConfig, seed: u64) -> Self {
        assert!(cfg.vocab_size >= 2 && cfg.context >= 1 && cfg.d_emb >= 1 && cfg.d_hid >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
        };
        let d_in = cfg.context * cfg.d_emb;
        let emb = uniform(cfg.vocab_size, cfg.d_emb, 0.5);
        let w1 = uniform(d_in, cfg.d_hid, 1.0 / (d_in as f64).sqrt());
        let w2 = uniform(cfg.d_hid, cfg.vocab_size, 1.0 / (cfg.d_hid as f64).sqrt());
        ToyLm {
            cfg,
            seed,
            emb,
            w1,
            b1: Array1::zeros(cfg.d_hid),
            w2,
            b2: Array1::zeros(cfg.vocab_size),
        }
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients::zeros(&self.cfg)
    }

    /// Window input vector for a prefix: the last `context` tokens embedded
    /// into their slots, missing slots left at zero. Also returns the token
    /// occupying each slot (for the embedding gradient).
    fn window_input(&self, prefix: &[u32]) -> (Array1<f64>, Vec<Option<u32>>) {
        let k = self.cfg.context;
        let d = self.cfg.d_emb;
        let mut x = Array1::zeros(k * d);
        let mut slots = vec![None; k];
        let take = prefix.len().min(k);
        for (slot_back, &tok) in prefix[prefix.len() - take..].iter().rev().enumerate() {
            let slot = k - 1 - slot_back;
            debug_assert!((tok as usize) < self.cfg.vocab_size, "token {tok} out of vocab");
            slots[slot] = Some(tok);
            x.slice_mut(s![slot * d..(slot + 1) * d])
                .assign(&self.emb.row(tok as usize));
        }
        (x, slots)
    }

    fn hidden(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut h = self.w1.t().dot(x) + &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }

    fn logits(&self, h: &Array1<f64>) -> Array1<f64> {
        self.w2.t().dot(h) + &self.b2
    }

    /// Accumulates the gradient of `weight * (-log p(target | prefix))` into
    /// `grads` and returns `log p(target | prefix)`.
    pub fn accumulate_position(
        &self,
        prefix: &[u32],
        target: u32,
        weight: f64,
        grads: &mut Gradients,
    ) -> f64 {
        let (x, slots) = self.window_input(prefix);
        let h = self.hidden(&x);
        let logits = self.logits(&h);
        let logprobs = log_softmax(&logits);
        let lp_target = logprobs[target as usize];

        // d(-log p(y))/dlogits = softmax - onehot(y)
        let mut d_logits = logprobs.mapv(f64::exp);
        d_logits[target as usize] -= 1.0;
        if weight != 1.0 {
            d_logits *= weight;
        }

        grads.b2 += &d_logits;
        for i in 0..self.cfg.d_hid {
            grads.w2.row_mut(i).scaled_add(h[i], &d_logits);
        }

        let d_h = self.w2.dot(&d_logits);
        let d_hpre = &d_h * &h.mapv(|v| 1.0 - v * v);
        grads.b1 += &d_hpre;
        for j in 0..self.cfg.context * self.cfg.d_emb {
            if x[j] != 0.0 {
                grads.w1.row_mut(j).scaled_add(x[j], &d_hpre);
            }
        }

        let d_x = self.w1.dot(&d_hpre);
        let d = self.cfg.d_emb;
        for (slot, tok) in slots.iter().enumerate() {
            if let Some(tok) = tok {
                let chunk = d_x.slice(s![slot * d..(slot + 1) * d]);
                grads
                    .emb
                    .row_mut(*tok as usize)
                    .scaled_add(1.0, &chunk);
            }
        }
        lp_target
    }

    /// One gradient-descent step: `params -= lr * grads`.
    pub fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        self.emb.scaled_add(-lr, &grads.emb);
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
    }

    /// Adagrad-normalized descent step: accumulates squared gradients into
    /// `accum` and applies `params -= lr * g / sqrt(accum + eps)` per
    /// parameter.
    pub fn apply_step_adagrad(&mut self, grads: &Gradients, accum: &mut Gradients, lr: f64) {
        fn update2(
            param: &mut Array2<f64>,
            grad: &Array2<f64>,
            accum: &mut Array2<f64>,
            lr: f64,
        ) {
            ndarray::Zip::from(param)
                .and(grad)
                .and(accum)
                .for_each(|p, &g, a| {
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + 1e-8);
                });
        }
        fn update1(
            param: &mut Array1<f64>,
            grad: &Array1<f64>,
            accum: &mut Array1<f64>,
            lr: f64,
        ) {
            ndarray::Zip::from(param)
                .and(grad)
                .and(accum)
                .for_each(|p, &g, a| {
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + 1e-8);
                });
        }
        update2(&mut self.emb, &grads.emb, &mut accum.emb, lr);
        update2(&mut self.w1, &grads.w1, &mut accum.w1, lr);
        update1(&mut self.b1, &grads.b1, &mut accum.b1, lr);
        update2(&mut self.w2, &grads.w2, &mut accum.w2, lr);
        update1(&mut self.b2, &grads.b2, &mut accum.b2, lr);
    }

    /// Sum of next-token NLL over every position of the sequence (position 0
    /// scored from the empty window) plus the gradient of that sum.
    pub fn nll_loss_and_grads(&self, seq: &TokenSequence) -> (f64, Gradients) {
        let mut grads = self.zero_grads();
        let tokens = seq.tokens();
        let mut loss = 0.0;
        for t in 0..tokens.len() {
            let window_start = t.saturating_sub(self.cfg.context);
            let lp =
                self.accumulate_position(&tokens[window_start..t], tokens[t], 1.0, &mut grads);
            loss -= lp;
        }
        (loss, grads)
    }

    /// Per-token log-probabilities of a sequence under this model; entry 0
    /// is the unconditional first-token log-probability.
    pub fn score_sequence(&self, seq: &TokenSequence) -> ScoredSequence {
        let tokens = seq.tokens();
        let logprobs = (0..tokens.len())
            .map(|t| {
                let window_start = t.saturating_sub(self.cfg.context);
                let (x, _) = self.window_input(&tokens[window_start..t]);
                let h = self.hidden(&x);
                log_softmax(&self.logits(&h))[tokens[t] as usize]
            })
            .collect();
        ScoredSequence::new(seq.clone(), logprobs).expect("log-softmax output is <= 0")
    }

    /// Flat parameter vector: embeddings, hidden weights, hidden bias,
    /// output weights, output bias, each row-major.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.emb.iter());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn param_count(&self) -> usize {
        let cfg = &self.cfg;
        let d_in = cfg.context * cfg.d_emb;
        cfg.vocab_size * cfg.d_emb + d_in * cfg.d_hid + cfg.d_hid + cfg.d_hid * cfg.vocab_size
            + cfg.vocab_size
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::input(format!(
                "{} parameters for a model of {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut iter = params.iter().copied();
        for v in self.emb.iter_mut() {
            *v = iter.next().unwrap();
        }
        for v in self.w1.iter_mut() {
            *v = iter.next().unwrap();
        }
        for v in self.b1.iter_mut() {
            *v = iter.next().unwrap();
        }
        for v in self.w2.iter_mut() {
            *v = iter.next().unwrap();
        }
        for v in self.b2.iter_mut() {
            *v = iter.next().unwrap();
        }
        Ok(())
    }

    /// Adds `delta` to the parameter at flat index `idx` (finite-difference
    /// probing).
    pub fn nudge_param(&mut self, idx: usize, delta: f64) {
        let mut params = self.params_flat();
        params[idx] += delta;
        self.set_params_flat(&params).expect("same length");
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ParamsFile {
            version: PARAMS_FILE_VERSION,
            config: self.cfg,
            seed: self.seed,
            params: self.params_flat(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.version != PARAMS_FILE_VERSION {
            return Err(Error::input(format!(
                "unsupported params file version {} (expected {PARAMS_FILE_VERSION})",
                file.version
            )));
        }
        let mut model = ToyLm::new(file.config, file.seed);
        model.set_params_flat(&file.params)?;
        Ok(model)
    }
}

impl LanguageModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    /// Prefixes longer than the context window are truncated to the last
    /// `context` tokens.
    fn next_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        let window_start = prefix.len().saturating_sub(self.cfg.context);
        let (x, _) = self.window_input(&prefix[window_start..]);
        let h = self.hidden(&x);
        log_softmax(&self.logits(&h)).to_vec()
    }
}
