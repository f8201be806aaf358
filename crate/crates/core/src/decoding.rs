//! Beam search and greedy decoding with an additive length bonus.
//!
//! A hypothesis is scored by `log p + γ · (content tokens)`, where content
//! tokens exclude BOS and EOS. It finishes on EOS or when it holds
//! `max_words` content tokens.
//!
//! Each beam step ranks every one-token extension of every live hypothesis
//! by that score, ties going to the lexicographically smaller id sequence,
//! and keeps the best `beam_size`. Finished ones among them move to a pool;
//! the rest stay live. Search ends when nothing is live and returns the
//! best pooled hypothesis. With `beam_size = 1` this is exactly greedy
//! decoding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Tensor;
use crate::textproc::{truncate_to_bytes, Vocab, BOS, EOS, PAD};
use crate::transformer::{Model, ModelError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("empty source sentence")]
    EmptySource,
    #[error("beam config: {0}")]
    Config(String),
    #[error("no token has finite probability")]
    NoCandidate,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_words: usize,
    pub byte_cap: usize,
    /// Score bonus per content token.
    pub length_bonus: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 8, max_words: 14, byte_cap: 75, length_bonus: 0.1 }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 || self.max_words == 0 {
            return Err(DecodeError::Config("beam_size and max_words must be at least 1".into()));
        }
        if !(self.length_bonus >= 0.0) {
            return Err(DecodeError::Config(format!("length bonus {} must be non-negative", self.length_bonus)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, ending in EOS when the model chose to stop.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn content_len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != BOS && t != EOS).count()
    }

    /// Ids without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// `log_prob + γ · content_len`.
pub fn augmented_score(h: &Hypothesis, gamma: f64) -> f64 {
    h.log_prob + gamma * h.content_len() as f64
}

/// Next-token distributions conditioned on a source.
pub trait StepScorer {
    type State;
    fn vocab_size(&self) -> usize;
    fn start(&self, src: &[u32]) -> Result<Self::State, DecodeError>;
    /// Log-probabilities over the vocabulary after `prefix` (generated ids,
    /// BOS not included).
    fn next_log_probs(&self, state: &Self::State, prefix: &[u32]) -> Result<Vec<f64>, DecodeError>;
}

/// Scores with a trained [`Model`]: encodes once, re-runs the decoder per step.
pub struct ModelScorer<'m> {
    pub model: &'m Model,
}

impl StepScorer for ModelScorer<'_> {
    type State = Tensor;

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn start(&self, src: &[u32]) -> Result<Tensor, DecodeError> {
        Ok(self.model.encode_one(src)?)
    }

    fn next_log_probs(&self, memory: &Tensor, prefix: &[u32]) -> Result<Vec<f64>, DecodeError> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        Ok(self.model.next_log_probs(memory, &ids)?)
    }
}

fn generable(tok: u32, lp: f64) -> bool {
    tok != PAD && tok != BOS && lp.is_finite()
}

/// Higher score first, then smaller id sequence.
fn rank(a: &(f64, Hypothesis), b: &(f64, Hypothesis)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.tokens.cmp(&b.1.tokens))
}

fn extend(h: &Hypothesis, tok: u32, lp: f64, max_words: usize) -> Hypothesis {
    let mut tokens = h.tokens.clone();
    tokens.push(tok);
    let mut next = Hypothesis { tokens, log_prob: h.log_prob + lp, finished: false };
    next.finished = tok == EOS || next.content_len() >= max_words;
    next
}

pub fn beam_search<S: StepScorer>(scorer: &S, src: &[u32], cfg: &BeamConfig) -> Result<Hypothesis, DecodeError> {
    cfg.validate()?;
    if src.is_empty() {
        return Err(DecodeError::EmptySource);
    }
    let state = scorer.start(src)?;
    let gamma = cfg.length_bonus;
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut pool: Vec<(f64, Hypothesis)> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(f64, Hypothesis)> = Vec::new();
        for h in &live {
            let lp = scorer.next_log_probs(&state, &h.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                let tok = tok as u32;
                if generable(tok, l) {
                    let n = extend(h, tok, l, cfg.max_words);
                    cands.push((augmented_score(&n, gamma), n));
                }
            }
        }
        cands.sort_by(rank);
        cands.truncate(cfg.beam_size);
        live.clear();
        for (s, h) in cands {
            if h.finished {
                pool.push((s, h));
            } else {
                live.push(h);
            }
        }
    }
    pool.sort_by(rank);
    pool.into_iter().next().map(|(_, h)| h).ok_or(DecodeError::NoCandidate)
}

/// Takes the token with the best one-step augmented score until EOS or
/// `max_words` content tokens.
pub fn greedy_decode<S: StepScorer>(scorer: &S, src: &[u32], cfg: &BeamConfig) -> Result<Hypothesis, DecodeError> {
    cfg.validate()?;
    if src.is_empty() {
        return Err(DecodeError::EmptySource);
    }
    let state = scorer.start(src)?;
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    while !h.finished {
        let lp = scorer.next_log_probs(&state, &h.tokens)?;
        let bonus = |t: u32| if t == EOS { 0.0 } else { cfg.length_bonus };
        let best = lp
            .iter()
            .enumerate()
            .map(|(t, &l)| (t as u32, l))
            .filter(|&(t, l)| generable(t, l))
            .fold(None, |best: Option<(u32, f64)>, (t, l)| match best {
                Some((_, s)) if s >= l + bonus(t) => best,
                _ => Some((t, l + bonus(t))),
            });
        let (tok, _) = best.ok_or(DecodeError::NoCandidate)?;
        h = extend(&h, tok, lp[tok as usize], cfg.max_words);
    }
    Ok(h)
}

/// Tokens of a hypothesis cut to whole words within `byte_cap` bytes.
pub fn render(h: &Hypothesis, vocab: &Vocab, byte_cap: usize) -> Vec<String> {
    truncate_to_bytes(&vocab.decode(h.content()), byte_cap)
}

/// Beam-decodes a tokenized source sentence to summary tokens.
pub fn summarize<S: AsRef<str>>(
    model: &Model,
    vocab: &Vocab,
    src: &[S],
    cfg: &BeamConfig,
) -> Result<Vec<String>, DecodeError> {
    let mut ids = vocab.encode(src);
    ids.truncate(model.config.max_len);
    let h = beam_search(&ModelScorer { model }, &ids, cfg)?;
    Ok(render(&h, vocab, cfg.byte_cap))
}
