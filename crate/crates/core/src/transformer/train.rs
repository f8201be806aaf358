use serde::{Deserialize, Serialize};

use super::{Dropout, Model, ModelError};
use crate::numeric::{lr_schedule, AdamConfig, AdamState, NumericError, Rng};
use crate::textproc::{BOS, EOS, PAD};

/// Padded id matrices for teacher forcing: `tgt_in` is BOS + target and
/// `tgt_out` is target + EOS, sharing `tgt_pad`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub src_pad: Vec<Vec<bool>>,
    pub tgt_in: Vec<Vec<u32>>,
    pub tgt_out: Vec<Vec<u32>>,
    pub tgt_pad: Vec<Vec<bool>>,
}

fn pad_rows(rows: Vec<Vec<u32>>) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let masks = rows.iter().map(|r| (0..n).map(|i| i >= r.len()).collect()).collect();
    let rows = rows
        .into_iter()
        .map(|mut r| {
            r.resize(n, PAD);
            r
        })
        .collect();
    (rows, masks)
}

impl Batch {
    pub fn from_pairs<S: AsRef<[u32]>, T: AsRef<[u32]>>(pairs: &[(S, T)]) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        if pairs.iter().any(|(s, _)| s.as_ref().is_empty()) {
            return Err(ModelError::Input("empty source in batch".into()));
        }
        let (src, src_pad) = pad_rows(pairs.iter().map(|(s, _)| s.as_ref().to_vec()).collect());
        let with_bos = pairs.iter().map(|(_, t)| std::iter::once(BOS).chain(t.as_ref().iter().copied()).collect());
        let with_eos = pairs.iter().map(|(_, t)| t.as_ref().iter().copied().chain(std::iter::once(EOS)).collect());
        let (tgt_in, tgt_pad) = pad_rows(with_bos.collect());
        let (tgt_out, _) = pad_rows(with_eos.collect());
        Ok(Self { src, src_pad, tgt_in, tgt_out, tgt_pad })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Non-pad target positions, i.e. the loss denominator.
    pub fn target_tokens(&self) -> usize {
        self.tgt_pad.iter().flatten().filter(|&&p| !p).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs are packed until source plus target tokens reach this count.
    pub batch_tokens: usize,
    pub warmup: u64,
    /// Multiplies the inverse square root schedule.
    pub lr_scale: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_tokens: 8192,
            warmup: 4000,
            lr_scale: 1.0,
            seed: 0,
            adam: AdamConfig::default(),
            max_steps: None,
        }
    }
}

/// Groups pair indices into batches of about `batch_tokens` tokens. Pairs
/// are bucketed by source length, then batch order is shuffled.
pub fn make_batches(lengths: &[(usize, usize)], batch_tokens: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i].0, i));
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for i in order {
        cur.push(i);
        tokens += lengths[i].0 + lengths[i].1 + 1;
        if tokens >= batch_tokens.max(1) {
            batches.push(std::mem::take(&mut cur));
            tokens = 0;
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    rng.shuffle(&mut batches);
    batches
}

/// One teacher-forced update; returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let lr = cfg.lr_scale * lr_schedule(adam.steps() + 1, cfg.warmup, model.config.d_model);
    adam.set_lr(lr);
    let mut drop = Dropout { rate: model.config.dropout, rng: Some(rng) };
    let (loss, grads) = model.loss_and_grads(batch, &mut drop)?;
    if !loss.is_finite() {
        return Err(NumericError::InvalidArgument(format!("non-finite loss {loss}")).into());
    }
    adam.step(model.params.tensors_mut(), &grads)?;
    Ok(loss)
}

/// Model, optimizer state and RNG of a training run.
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub rng: Rng,
    /// Pre-step loss of every update so far.
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let adam = AdamState::new(config.adam, model.params.tensors());
        let rng = Rng::new(config.seed);
        Self { model, adam, config, rng, losses: Vec::new() }
    }

    pub fn step(&mut self, batch: &Batch) -> Result<f64, ModelError> {
        let loss = train_step(&mut self.model, &mut self.adam, batch, &self.config, &mut self.rng)?;
        self.losses.push(loss);
        Ok(loss)
    }

    fn done(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.adam.steps() >= m)
    }

    /// One pass over `pairs`; returns the mean pre-step loss.
    pub fn epoch<S: AsRef<[u32]>, T: AsRef<[u32]>>(&mut self, pairs: &[(S, T)]) -> Result<f64, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::Input("no training pairs".into()));
        }
        let lengths: Vec<(usize, usize)> = pairs.iter().map(|(s, t)| (s.as_ref().len(), t.as_ref().len())).collect();
        let mut order_rng = self.rng.fork();
        let batches = make_batches(&lengths, self.config.batch_tokens, &mut order_rng);
        let (mut sum, mut n) = (0.0, 0);
        for idx in batches {
            if self.done() {
                break;
            }
            let chunk: Vec<(&[u32], &[u32])> = idx.iter().map(|&i| (pairs[i].0.as_ref(), pairs[i].1.as_ref())).collect();
            sum += self.step(&Batch::from_pairs(&chunk)?)?;
            n += 1;
        }
        Ok(if n > 0 { sum / n as f64 } else { f64::NAN })
    }

    /// Runs the configured number of epochs, calling `report(epoch, mean_loss)`.
    pub fn fit<S: AsRef<[u32]>, T: AsRef<[u32]>>(
        &mut self,
        pairs: &[(S, T)],
        mut report: impl FnMut(usize, f64),
    ) -> Result<(), ModelError> {
        for e in 0..self.config.epochs {
            if self.done() {
                break;
            }
            let l = self.epoch(pairs)?;
            report(e + 1, l);
        }
        Ok(())
    }
}
