//! Encoder-decoder transformer over the autodiff graph.
//!
//! Post-norm layers: every sublayer output is added to its input and layer
//! normalized. The embedding matrix is shared by source and target and
//! scaled by `√d_model`; the output projection is separate.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{make_batches, train_step, Batch, TrainConfig, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{
    build_mask, multi_head_var, sinusoid_positions, AttentionConfig, AttentionError, AttentionVariant, AttentionVars,
    RelVar,
};
use crate::numeric::{log_softmax, AttendMask, Graph, NumericError, Rng, Tensor, Var};
use crate::textproc::RESERVED;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub variant: AttentionVariant,
    pub use_absolute_positions: bool,
    pub block_len: usize,
    pub gap: usize,
    pub window: usize,
    pub clip_dist: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 256,
            d_ff: 2048,
            heads: 8,
            vocab_size: 0,
            max_len: 256,
            dropout: 0.1,
            variant: AttentionVariant::SDotProd,
            use_absolute_positions: true,
            block_len: 4,
            gap: 1,
            window: 1,
            clip_dist: 16,
            ln_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self { vocab_size, ..Self::default() }
    }

    pub fn full(vocab_size: usize) -> Self {
        Self { layers: 6, d_model: 512, vocab_size, ..Self::default() }
    }

    /// Tiny dimensions for checks: one layer, width 8, two heads.
    pub fn toy(vocab_size: usize) -> Self {
        Self { layers: 1, d_model: 8, d_ff: 16, heads: 2, vocab_size, dropout: 0.0, clip_dist: 3, max_len: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 {
            return bad("at least one layer is required".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.use_absolute_positions && !self.d_model.is_multiple_of(2) {
            return bad(format!("absolute positions need an even d_model, got {}", self.d_model));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return bad("d_ff and max_len must be positive".into());
        }
        if self.vocab_size <= RESERVED.len() {
            return bad(format!("vocabulary size {} leaves no room past the reserved ids", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        self.attention(false).validate()?;
        if matches!(self.variant, AttentionVariant::Dilated | AttentionVariant::DilatedMask) && self.window == 0 {
            return bad("dilated attention needs window >= 1".into());
        }
        Ok(())
    }

    pub fn attention(&self, causal: bool) -> AttentionConfig {
        AttentionConfig {
            heads: self.heads,
            d_model: self.d_model,
            block_len: self.block_len,
            gap: self.gap,
            window: self.window,
            clip_dist: self.clip_dist,
            causal,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug)]
struct AttnSlots([usize; 8]);

#[derive(Clone, Copy, Debug)]
struct FfSlots {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Copy, Debug)]
struct NormSlots {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct EncoderSlots {
    attn: AttnSlots,
    rel: Option<usize>,
    ln1: NormSlots,
    ff: FfSlots,
    ln2: NormSlots,
}

#[derive(Clone, Debug)]
struct DecoderSlots {
    attn: AttnSlots,
    rel: Option<usize>,
    ln1: NormSlots,
    cross: AttnSlots,
    ln2: NormSlots,
    ff: FfSlots,
    ln3: NormSlots,
}

/// Index of every parameter tensor, derived from the config alone.
#[derive(Clone, Debug)]
struct Slots {
    embed: usize,
    enc: Vec<EncoderSlots>,
    dec: Vec<DecoderSlots>,
    out_w: usize,
    out_b: usize,
}

struct Layout {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Layout {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push((name, shape.to_vec(), init));
        self.specs.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnSlots {
        let mut s = [0; 8];
        for (k, p) in ["q", "k", "v", "o"].iter().enumerate() {
            s[2 * k] = self.add(format!("{prefix}.w{p}"), &[d, d], Init::Xavier);
            s[2 * k + 1] = self.add(format!("{prefix}.b{p}"), &[d], Init::Zeros);
        }
        AttnSlots(s)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormSlots {
        NormSlots {
            gain: self.add(format!("{prefix}.gain"), &[d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), &[d], Init::Zeros),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfSlots {
        FfSlots {
            w1: self.add(format!("{prefix}.w1"), &[d, d_ff], Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), &[d_ff], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), &[d_ff, d], Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), &[d], Init::Zeros),
        }
    }

    fn rel(&mut self, prefix: &str, cfg: &ModelConfig) -> Option<usize> {
        cfg.variant
            .is_relative()
            .then(|| self.add(format!("{prefix}.rel"), &[2 * cfg.clip_dist + 1, cfg.head_dim()], Init::Xavier))
    }

    fn build(cfg: &ModelConfig) -> (Self, Slots) {
        let mut l = Layout { specs: Vec::new() };
        let d = cfg.d_model;
        let embed = l.add("embed".into(), &[cfg.vocab_size, d], Init::Xavier);
        let enc = (0..cfg.layers)
            .map(|i| {
                let p = format!("enc{i}");
                EncoderSlots {
                    attn: l.attn(&format!("{p}.self"), d),
                    rel: l.rel(&format!("{p}.self"), cfg),
                    ln1: l.norm(&format!("{p}.ln1"), d),
                    ff: l.ff(&format!("{p}.ff"), d, cfg.d_ff),
                    ln2: l.norm(&format!("{p}.ln2"), d),
                }
            })
            .collect();
        let dec = (0..cfg.layers)
            .map(|i| {
                let p = format!("dec{i}");
                DecoderSlots {
                    attn: l.attn(&format!("{p}.self"), d),
                    rel: l.rel(&format!("{p}.self"), cfg),
                    ln1: l.norm(&format!("{p}.ln1"), d),
                    cross: l.attn(&format!("{p}.cross"), d),
                    ln2: l.norm(&format!("{p}.ln2"), d),
                    ff: l.ff(&format!("{p}.ff"), d, cfg.d_ff),
                    ln3: l.norm(&format!("{p}.ln3"), d),
                }
            })
            .collect();
        let out_w = l.add("out.w".into(), &[d, cfg.vocab_size], Init::Xavier);
        let out_b = l.add("out.b".into(), &[cfg.vocab_size], Init::Zeros);
        (l, Slots { embed, enc, dec, out_w, out_b })
    }
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Xavier-uniform weights, zero biases and unit layer-norm gains.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let (layout, _) = Layout::build(cfg);
    let mut rng = Rng::new(seed);
    let mut names = Vec::with_capacity(layout.specs.len());
    let mut tensors = Vec::with_capacity(layout.specs.len());
    for (name, shape, init) in layout.specs {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::filled(&shape, 1.0),
            Init::Xavier => {
                let bound = xavier_bound(&shape);
                let n = shape.iter().product();
                Tensor::new(&shape, (0..n).map(|_| rng.uniform(-bound, bound)).collect())?
            }
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(ModelParams { names, tensors })
}

/// `sqrt(6 / (fan_in + fan_out))` for a two-dimensional weight.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

/// Randomly zeroes sublayer outputs during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var, NumericError> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask = (0..n).map(|_| if rng.unit() < self.rate { 0.0 } else { keep }).collect();
        let m = g.constant(Tensor::new(&shape, mask)?);
        g.mul(x, m)
    }
}

/// An initialized or trained model: config, parameters and their layout.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    slots: Slots,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

fn to_usize(ids: &[u32], vocab: usize) -> Result<Vec<usize>, ModelError> {
    ids.iter()
        .map(|&i| {
            if (i as usize) < vocab {
                Ok(i as usize)
            } else {
                Err(ModelError::Input(format!("token id {i} outside vocabulary of {vocab}")))
            }
        })
        .collect()
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
    let h = g.matmul(x, w)?;
    g.add_row(h, b)
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    /// Checks names and shapes of `params` against the layout of `config`.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, slots) = Layout::build(&config);
        if layout.specs.len() != params.len() {
            return Err(ModelError::Config(format!(
                "config expects {} tensors, got {}",
                layout.specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (n, t)) in layout.specs.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(ModelError::Config(format!(
                    "expected tensor {name} {shape:?}, found {n} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params, slots })
    }

    /// Builds params from named tensors in any order.
    pub fn from_named(config: ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, _) = Layout::build(&config);
        let mut names = Vec::with_capacity(layout.specs.len());
        let mut tensors = Vec::with_capacity(layout.specs.len());
        for (name, _, _) in &layout.specs {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| ModelError::Config(format!("missing tensor {name}")))?;
            let (n, t) = named.swap_remove(pos);
            names.push(n);
            tensors.push(t);
        }
        if let Some((n, _)) = named.first() {
            return Err(ModelError::Config(format!("unexpected tensor {n}")));
        }
        Self::from_params(config, ModelParams { names, tensors })
    }

    /// Records every parameter on `g`, tracked or constant.
    pub fn record<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| if trainable { g.param_ref(t) } else { g.constant_ref(t) })
            .collect()
    }

    fn attn_vars(s: &AttnSlots, v: &[Var]) -> AttentionVars {
        let i = s.0;
        AttentionVars {
            wq: v[i[0]],
            bq: v[i[1]],
            wk: v[i[2]],
            bk: v[i[3]],
            wv: v[i[4]],
            bv: v[i[5]],
            wo: v[i[6]],
            bo: v[i[7]],
        }
    }

    fn rel_var(&self, slot: Option<usize>, v: &[Var]) -> Option<RelVar> {
        slot.map(|s| RelVar { table: v[s], clip: self.config.clip_dist })
    }

    fn check_len(&self, n: usize, what: &str) -> Result<(), ModelError> {
        if n == 0 {
            return Err(ModelError::Input(format!("empty {what} sequence")));
        }
        if n > self.config.max_len {
            return Err(ModelError::Input(format!("{what} length {n} exceeds max_len {}", self.config.max_len)));
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph, v: &[Var], ids: &[u32]) -> Result<Var, ModelError> {
        let ids = to_usize(ids, self.config.vocab_size)?;
        let x = g.gather(v[self.slots.embed], &ids)?;
        let x = g.scale(x, (self.config.d_model as f64).sqrt());
        if !self.config.use_absolute_positions {
            return Ok(x);
        }
        let pos = g.constant(sinusoid_positions(ids.len(), self.config.d_model)?);
        Ok(g.add(x, pos)?)
    }

    fn feed_forward(&self, g: &mut Graph, v: &[Var], s: &FfSlots, x: Var) -> Result<Var, NumericError> {
        let h = affine(g, x, v[s.w1], v[s.b1])?;
        let h = g.relu(h);
        affine(g, h, v[s.w2], v[s.b2])
    }

    fn add_norm(&self, g: &mut Graph, v: &[Var], s: &NormSlots, x: Var, sub: Var, drop: &mut Dropout) -> Result<Var, NumericError> {
        let sub = drop.apply(g, sub)?;
        let r = g.add(x, sub)?;
        g.layer_norm(r, v[s.gain], v[s.bias], self.config.ln_eps)
    }

    /// Encoder self-attention permissions: the variant mask minus pad keys.
    pub fn encoder_mask(&self, pad: &[bool]) -> Result<AttendMask, ModelError> {
        let n = pad.len();
        Ok(build_mask(self.config.variant, n, n, &self.config.attention(false))?.without_keys(pad))
    }

    /// Decoder self-attention permissions: variant and causal, minus pad keys.
    pub fn decoder_mask(&self, pad: &[bool]) -> Result<AttendMask, ModelError> {
        let n = pad.len();
        Ok(build_mask(self.config.variant, n, n, &self.config.attention(true))?.without_keys(pad))
    }

    /// Encoder output `[n, d_model]` for one padded sequence.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        v: &[Var],
        src: &[u32],
        pad: &[bool],
        drop: &mut Dropout,
    ) -> Result<Var, ModelError> {
        self.check_len(src.len(), "source")?;
        if pad.len() != src.len() {
            return Err(ModelError::Input("source pad mask length differs".into()));
        }
        let mask = self.encoder_mask(pad)?;
        let attn_cfg = self.config.attention(false);
        let mut x = self.embed(g, v, src)?;
        for s in &self.slots.enc {
            let a = multi_head_var(g, x, x, &Self::attn_vars(&s.attn, v), &mask, &attn_cfg, self.rel_var(s.rel, v))?;
            x = self.add_norm(g, v, &s.ln1, x, a, drop)?;
            let f = self.feed_forward(g, v, &s.ff, x)?;
            x = self.add_norm(g, v, &s.ln2, x, f, drop)?;
        }
        Ok(x)
    }

    /// Logits `[n_tgt, V]` for one padded target prefix over encoder memory.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_graph(
        &self,
        g: &mut Graph,
        v: &[Var],
        tgt: &[u32],
        tgt_pad: &[bool],
        memory: Var,
        src_pad: &[bool],
        drop: &mut Dropout,
    ) -> Result<Var, ModelError> {
        self.check_len(tgt.len(), "target")?;
        if tgt_pad.len() != tgt.len() {
            return Err(ModelError::Input("target pad mask length differs".into()));
        }
        let (n_mem, d_mem) = g.value(memory).dims2()?;
        if n_mem != src_pad.len() || d_mem != self.config.d_model {
            return Err(ModelError::Input(format!(
                "memory [{n_mem}, {d_mem}] does not match {} source positions of width {}",
                src_pad.len(),
                self.config.d_model
            )));
        }
        let self_mask = self.decoder_mask(tgt_pad)?;
        let cross_mask = AttendMask::full(tgt.len(), n_mem).without_keys(src_pad);
        let self_cfg = self.config.attention(true);
        let cross_cfg = self.config.attention(false);
        let mut y = self.embed(g, v, tgt)?;
        for s in &self.slots.dec {
            let a = multi_head_var(g, y, y, &Self::attn_vars(&s.attn, v), &self_mask, &self_cfg, self.rel_var(s.rel, v))?;
            y = self.add_norm(g, v, &s.ln1, y, a, drop)?;
            let c = multi_head_var(g, y, memory, &Self::attn_vars(&s.cross, v), &cross_mask, &cross_cfg, None)?;
            y = self.add_norm(g, v, &s.ln2, y, c, drop)?;
            let f = self.feed_forward(g, v, &s.ff, y)?;
            y = self.add_norm(g, v, &s.ln3, y, f, drop)?;
        }
        Ok(affine(g, y, v[self.slots.out_w], v[self.slots.out_b])?)
    }

    /// Encoder memory `[b, n_src, d_model]` for a padded batch.
    pub fn encode(&self, src: &[Vec<u32>], src_pad: &[Vec<bool>]) -> Result<Tensor, ModelError> {
        let n = check_rect(src, src_pad, "source")?;
        let mut g = Graph::new();
        let v = self.record(&mut g, false);
        let mut out = Vec::with_capacity(src.len() * n * self.config.d_model);
        for (ids, pad) in src.iter().zip(src_pad) {
            let m = self.encode_graph(&mut g, &v, ids, pad, &mut Dropout::off())?;
            out.extend_from_slice(g.value(m).data());
        }
        Ok(Tensor::new(&[src.len(), n, self.config.d_model], out)?)
    }

    /// Logits `[b, n_tgt, V]` for padded target prefixes over `memory`.
    pub fn decoder_forward(
        &self,
        tgt: &[Vec<u32>],
        tgt_pad: &[Vec<bool>],
        memory: &Tensor,
        src_pad: &[Vec<bool>],
    ) -> Result<Tensor, ModelError> {
        let n = check_rect(tgt, tgt_pad, "target")?;
        let d = self.config.d_model;
        let b = tgt.len();
        let ok = memory.rank() == 3 && memory.shape()[0] == b && memory.shape()[2] == d && src_pad.len() == b;
        if !ok {
            return Err(ModelError::Input(format!("memory shape {:?} does not match batch of {b}", memory.shape())));
        }
        let n_src = memory.shape()[1];
        let mut g = Graph::new();
        let v = self.record(&mut g, false);
        let mut out = Vec::with_capacity(b * n * self.config.vocab_size);
        for k in 0..b {
            let mem = Tensor::new(&[n_src, d], memory.data()[k * n_src * d..(k + 1) * n_src * d].to_vec())?;
            let mem = g.constant(mem);
            let logits = self.decode_graph(&mut g, &v, &tgt[k], &tgt_pad[k], mem, &src_pad[k], &mut Dropout::off())?;
            out.extend_from_slice(g.value(logits).data());
        }
        Ok(Tensor::new(&[b, n, self.config.vocab_size], out)?)
    }

    /// Memory `[n, d_model]` for one unpadded source.
    pub fn encode_one(&self, src: &[u32]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let v = self.record(&mut g, false);
        let m = self.encode_graph(&mut g, &v, src, &vec![false; src.len()], &mut Dropout::off())?;
        Ok(g.value(m).clone())
    }

    /// Log-probabilities of the token following `prefix`, which starts with BOS.
    pub fn next_log_probs(&self, memory: &Tensor, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let (n_src, _) = memory.dims2()?;
        let mut g = Graph::new();
        let v = self.record(&mut g, false);
        let mem = g.constant_ref(memory);
        let pad = vec![false; prefix.len()];
        let logits =
            self.decode_graph(&mut g, &v, prefix, &pad, mem, &vec![false; n_src], &mut Dropout::off())?;
        Ok(log_softmax(g.value(logits).row(prefix.len() - 1)))
    }

    /// Summed target NLL and counted targets of a batch, recorded on `g`.
    pub fn batch_nll(
        &self,
        g: &mut Graph,
        v: &[Var],
        batch: &Batch,
        drop: &mut Dropout,
    ) -> Result<(Var, usize), ModelError> {
        let mut total: Option<Var> = None;
        let mut count = 0;
        for k in 0..batch.len() {
            let (src, src_pad) = trimmed(&batch.src[k], &batch.src_pad[k]);
            let (tgt_in, tgt_pad) = trimmed(&batch.tgt_in[k], &batch.tgt_pad[k]);
            let tgt_out = &batch.tgt_out[k][..tgt_in.len()];
            if tgt_pad.iter().all(|&p| p) {
                continue;
            }
            let mem = self.encode_graph(g, v, src, src_pad, drop)?;
            let logits = self.decode_graph(g, v, tgt_in, tgt_pad, mem, src_pad, drop)?;
            let targets: Vec<Option<usize>> =
                tgt_out.iter().zip(tgt_pad).map(|(&t, &p)| (!p).then_some(t as usize)).collect();
            let (nll, c) = g.nll_sum(logits, &targets)?;
            total = Some(match total {
                Some(t) => g.add(t, nll)?,
                None => nll,
            });
            count += c;
        }
        match total {
            Some(t) if count > 0 => Ok((t, count)),
            _ => Err(NumericError::EmptyLoss.into()),
        }
    }

    /// Mean cross entropy of a batch, recorded on `g`.
    pub fn batch_loss(&self, g: &mut Graph, v: &[Var], batch: &Batch, drop: &mut Dropout) -> Result<Var, ModelError> {
        let (nll, count) = self.batch_nll(g, v, batch, drop)?;
        Ok(g.scale(nll, 1.0 / count as f64))
    }

    /// Mean cross entropy of a batch without dropout.
    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let v = self.record(&mut g, false);
        let l = self.batch_loss(&mut g, &v, batch, &mut Dropout::off())?;
        Ok(g.scalar(l))
    }

    /// Loss and one gradient vector per parameter tensor.
    pub fn loss_and_grads(&self, batch: &Batch, drop: &mut Dropout) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
        let mut g = Graph::new();
        let v = self.record(&mut g, true);
        let l = self.batch_loss(&mut g, &v, batch, drop)?;
        g.backward(l)?;
        let grads = v
            .iter()
            .zip(&self.params.tensors)
            .map(|(&var, t)| g.grad(var).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        Ok((g.scalar(l), grads))
    }
}

/// Drops trailing padding; interior padding is left to the masks.
fn trimmed<'b>(ids: &'b [u32], pad: &'b [bool]) -> (&'b [u32], &'b [bool]) {
    let keep = pad.iter().rposition(|&p| !p).map_or(ids.len(), |i| i + 1);
    (&ids[..keep], &pad[..keep])
}

fn check_rect(ids: &[Vec<u32>], pad: &[Vec<bool>], what: &str) -> Result<usize, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::Input(format!("empty {what} batch")));
    }
    let n = ids[0].len();
    if ids.len() != pad.len() || ids.iter().zip(pad).any(|(r, p)| r.len() != n || p.len() != n) {
        return Err(ModelError::Input(format!("{what} rows and pad masks must share one length")));
    }
    Ok(n)
}
