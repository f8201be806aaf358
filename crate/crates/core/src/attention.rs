//! Scaled dot-product attention, multi-head attention and the permission
//! masks behind every attention variant.
//!
//! Every variant is full attention with a boolean mask. With
//! `blk(i) = i / block_len`, a query `i` may read key `j` when:
//!
//! | variant          | permitted(i, j)                                             |
//! |------------------|-------------------------------------------------------------|
//! | `s-dot-prod`     | always                                                      |
//! | `rel-s-dot-prod` | always (relative logit term added)                          |
//! | `local`          | `blk(j) == blk(i)`                                          |
//! | `local-mask`     | `blk(j) <= blk(i)`                                          |
//! | `local-blk-mask` | `blk(j) == blk(i) && j <= i`                                |
//! | `dilated`        | `blk(j) - blk(i)` is 0 or `±s·(gap+1)` for `1 <= s <= window` |
//! | `dilated-mask`   | `dilated && j <= i`                                         |
//!
//! With `causal` set, `j <= i` is additionally required.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{rel_offset, AttendMask, Graph, NumericError, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("attention config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    SDotProd,
    RelSDotProd,
    Local,
    LocalMask,
    LocalBlkMask,
    Dilated,
    DilatedMask,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 7] = [
        Self::SDotProd,
        Self::RelSDotProd,
        Self::Local,
        Self::LocalMask,
        Self::LocalBlkMask,
        Self::Dilated,
        Self::DilatedMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SDotProd => "s-dot-prod",
            Self::RelSDotProd => "rel-s-dot-prod",
            Self::Local => "local",
            Self::LocalMask => "local-mask",
            Self::LocalBlkMask => "local-blk-mask",
            Self::Dilated => "dilated",
            Self::DilatedMask => "dilated-mask",
        }
    }

    pub fn is_relative(self) -> bool {
        self == Self::RelSDotProd
    }

    fn is_blocked(self) -> bool {
        !matches!(self, Self::SDotProd | Self::RelSDotProd)
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = AttentionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AttentionError::Config(format!("unknown attention variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub d_model: usize,
    /// Block length for the local and dilated variants.
    pub block_len: usize,
    /// Skipped blocks between attended blocks (dilated only).
    pub gap: usize,
    /// Attended blocks on each side of the query's block (dilated only).
    pub window: usize,
    /// Relative offsets are clipped to `[-clip_dist, clip_dist]`.
    pub clip_dist: usize,
    pub causal: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { heads: 8, d_model: 256, block_len: 4, gap: 1, window: 1, clip_dist: 16, causal: false }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(AttentionError::Config(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.block_len == 0 {
            return Err(AttentionError::Config("block length must be positive".into()));
        }
        Ok(())
    }
}

fn block_permits(variant: AttentionVariant, i: usize, j: usize, cfg: &AttentionConfig) -> bool {
    let (bi, bj) = ((i / cfg.block_len) as i64, (j / cfg.block_len) as i64);
    let dilated = || {
        let diff = (bj - bi).unsigned_abs() as usize;
        let stride = cfg.gap + 1;
        diff == 0 || (diff.is_multiple_of(stride) && diff / stride <= cfg.window)
    };
    match variant {
        AttentionVariant::SDotProd | AttentionVariant::RelSDotProd => true,
        AttentionVariant::Local => bi == bj,
        AttentionVariant::LocalMask => bj <= bi,
        AttentionVariant::LocalBlkMask => bi == bj && j <= i,
        AttentionVariant::Dilated => dilated(),
        AttentionVariant::DilatedMask => dilated() && j <= i,
    }
}

/// Permission matrix for `variant` between `n_q` queries and `n_kv` keys.
pub fn build_mask(
    variant: AttentionVariant,
    n_q: usize,
    n_kv: usize,
    cfg: &AttentionConfig,
) -> Result<AttendMask, AttentionError> {
    if cfg.block_len == 0 {
        return Err(AttentionError::Config("block length must be positive".into()));
    }
    if variant.is_blocked() && n_q != n_kv {
        return Err(AttentionError::Config(format!(
            "{variant} is a self-attention mask but got {n_q} queries and {n_kv} keys"
        )));
    }
    if matches!(variant, AttentionVariant::Dilated | AttentionVariant::DilatedMask) && cfg.window == 0 {
        return Err(AttentionError::Config("dilated window must span at least one block".into()));
    }
    let mask = AttendMask::from_fn(n_q, n_kv, |i, j| {
        block_permits(variant, i, j, cfg) && (!cfg.causal || j <= i)
    });
    Ok(mask)
}

/// Learned vectors indexed by clipped signed offset `j - i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelEmbeddings {
    pub clip: usize,
    /// `[2 * clip + 1, d_head]`; row `o + clip` holds offset `o`.
    pub table: Tensor,
}

impl RelEmbeddings {
    pub fn new(clip: usize, table: Tensor) -> Result<Self, AttentionError> {
        let (rows, _) = table.dims2()?;
        if rows != 2 * clip + 1 {
            return Err(AttentionError::Config(format!("{rows} relative rows for clip {clip}")));
        }
        Ok(Self { clip, table })
    }

    pub fn zeros(clip: usize, d_head: usize) -> Self {
        Self { clip, table: Tensor::zeros(&[2 * clip + 1, d_head]) }
    }

    pub fn lookup(&self, i: usize, j: usize) -> &[f64] {
        self.table.row(rel_offset(i, j, self.clip))
    }
}

/// Relative-position term fed to [`attend`]: the table node and its clip.
#[derive(Clone, Copy, Debug)]
pub struct RelVar {
    pub table: Var,
    pub clip: usize,
}

/// `masked_softmax((Q Kᵀ + rel) / √d, mask) V` recorded on a graph.
pub fn attend(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: &AttendMask,
    rel: Option<RelVar>,
) -> Result<Var, AttentionError> {
    let (n, d) = g.value(q).dims2()?;
    let (m, dk) = g.value(k).dims2()?;
    let (mv, _) = g.value(v).dims2()?;
    if d != dk || m != mv {
        return Err(NumericError::Shape(format!(
            "attention Q[{n},{d}] K[{m},{dk}] V[{mv},_]"
        ))
        .into());
    }
    let mut logits = g.matmul_bt(q, k)?;
    if let Some(rel) = rel {
        let per_offset = g.matmul_bt(q, rel.table)?;
        let expanded = g.rel_gather(per_offset, rel.clip, m)?;
        logits = g.add(logits, expanded)?;
    }
    let scaled = g.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = g.masked_softmax(scaled, mask)?;
    Ok(g.matmul(weights, v)?)
}

pub fn sdp_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &AttendMask) -> Result<Tensor, AttentionError> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = attend(&mut g, q, k, v, mask, None)?;
    Ok(g.value(out).clone())
}

/// Scaled dot-product attention with a key-side relative term:
/// `logit(i, j) = (q_i·k_j + q_i·a_clip(j-i)) / √d`.
pub fn relative_sdp_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    rel: &RelEmbeddings,
    mask: &AttendMask,
) -> Result<Tensor, AttentionError> {
    let (_, d) = q.dims2()?;
    let (_, w) = rel.table.dims2()?;
    if w != d {
        return Err(AttentionError::Config(format!("relative width {w} for head dim {d}")));
    }
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let table = g.constant(rel.table.clone());
    let out = attend(&mut g, q, k, v, mask, Some(RelVar { table, clip: rel.clip }))?;
    Ok(g.value(out).clone())
}

/// Projection weights of one multi-head attention block. Weights are
/// `[d_model, d_model]` and applied as `x W + b`; head `h` owns columns
/// `h*d_head .. (h+1)*d_head` of the query, key and value projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    pub fn identity(d_model: usize) -> Self {
        let eye = Tensor::identity(d_model);
        let zero = Tensor::zeros(&[d_model]);
        Self {
            wq: eye.clone(),
            bq: zero.clone(),
            wk: eye.clone(),
            bk: zero.clone(),
            wv: eye.clone(),
            bv: zero.clone(),
            wo: eye,
            bo: zero,
        }
    }

    pub fn record<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> AttentionVars {
        let mut put = |t: &'a Tensor| if trainable { g.param_ref(t) } else { g.constant_ref(t) };
        AttentionVars {
            wq: put(&self.wq),
            bq: put(&self.bq),
            wk: put(&self.wk),
            bk: put(&self.bk),
            wv: put(&self.wv),
            bv: put(&self.bv),
            wo: put(&self.wo),
            bo: put(&self.bo),
        }
    }
}

/// Graph handles of an [`AttentionParams`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
    let h = g.matmul(x, w)?;
    g.add_row(h, b)
}

/// Per-head outputs before concatenation, mainly for inspection.
pub fn multi_head_heads(
    g: &mut Graph,
    xq: Var,
    xkv: Var,
    p: &AttentionVars,
    mask: &AttendMask,
    cfg: &AttentionConfig,
    rel: Option<RelVar>,
) -> Result<Vec<Var>, AttentionError> {
    cfg.validate()?;
    let (_, d) = g.value(xq).dims2()?;
    if d != cfg.d_model {
        return Err(AttentionError::Config(format!("input width {d} but d_model {}", cfg.d_model)));
    }
    let q = affine(g, xq, p.wq, p.bq)?;
    let k = affine(g, xkv, p.wk, p.bk)?;
    let v = affine(g, xkv, p.wv, p.bv)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
        };
        heads.push(attend(g, qh, kh, vh, mask, rel)?);
    }
    Ok(heads)
}

/// Multi-head attention recorded on a graph: project, attend per head,
/// concatenate, project out.
pub fn multi_head_var(
    g: &mut Graph,
    xq: Var,
    xkv: Var,
    p: &AttentionVars,
    mask: &AttendMask,
    cfg: &AttentionConfig,
    rel: Option<RelVar>,
) -> Result<Var, AttentionError> {
    let heads = multi_head_heads(g, xq, xkv, p, mask, cfg, rel)?;
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    Ok(affine(g, cat, p.wo, p.bo)?)
}

pub fn multi_head(
    xq: &Tensor,
    xkv: &Tensor,
    params: &AttentionParams,
    mask: &AttendMask,
    cfg: &AttentionConfig,
    rel: Option<&RelEmbeddings>,
) -> Result<Tensor, AttentionError> {
    let mut g = Graph::new();
    let (q, kv) = (g.constant(xq.clone()), g.constant(xkv.clone()));
    let vars = params.record(&mut g, false);
    let rel = rel.map(|r| RelVar { table: g.constant(r.table.clone()), clip: r.clip });
    let out = multi_head_var(&mut g, q, kv, &vars, mask, cfg, rel)?;
    Ok(g.value(out).clone())
}

/// Local attention computed block by block, each block attending only to
/// itself. Must agree with [`sdp_attention`] under the `local` mask.
pub fn local_attention_blockwise(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    block_len: usize,
) -> Result<Tensor, AttentionError> {
    if block_len == 0 {
        return Err(AttentionError::Config("block length must be positive".into()));
    }
    let (n, d) = q.dims2()?;
    let (m, dv) = v.dims2()?;
    if k.dims2()? != (n, d) || m != n {
        return Err(NumericError::Shape("blockwise local attention needs self-attention shapes".into()).into());
    }
    let mut out = Vec::with_capacity(n * dv);
    let mut start = 0;
    while start < n {
        let end = (start + block_len).min(n);
        let take = |t: &Tensor, w: usize| {
            Tensor::new(&[end - start, w], t.data()[start * w..end * w].to_vec())
        };
        let (qb, kb, vb) = (take(q, d)?, take(k, d)?, take(v, dv)?);
        let ob = sdp_attention(&qb, &kb, &vb, &AttendMask::full(end - start, end - start))?;
        out.extend_from_slice(ob.data());
        start = end;
    }
    Ok(Tensor::new(&[n, dv], out)?)
}

/// Sinusoidal position signal: channel `2i` is `sin(p / 10000^(2i/d))`,
/// channel `2i+1` the matching cosine.
pub fn sinusoid_positions(n: usize, d_model: usize) -> Result<Tensor, AttentionError> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(AttentionError::Config(format!("positional width {d_model} must be even")));
    }
    if n == 0 {
        return Err(AttentionError::Config("no positions requested".into()));
    }
    let mut data = vec![0.0; n * d_model];
    for p in 0..n {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[p * d_model + 2 * i] = angle.sin();
            data[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(&[n, d_model], data)?)
}
