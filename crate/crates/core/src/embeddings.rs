//! Word vectors, sentence encoders and cosine similarity.
//!
//! Two word-vector file formats are read:
//!
//! * text: one `token v1 ... vd` line per word, `d` fixed by the first line;
//! * binary: an ASCII header `count dim\n`, then per record the token bytes
//!   up to a space, `dim` little-endian `f32` values, and an optional `\n`.
//!
//! Values are widened to `f64` on load.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numeric::Rng;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: no vectors")]
    Empty { path: PathBuf },
    #[error("{path}: {msg}")]
    Binary { path: PathBuf, msg: String },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("sentence not in precomputed store: {0:?}")]
    MissingSentence(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io { path: path.to_path_buf(), source }
}

/// Immutable token to vector map.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectorStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    duplicates: usize,
}

impl WordVectorStore {
    pub fn from_map(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, EmbedError> {
        if let Some(v) = vectors.values().find(|v| v.len() != dim) {
            return Err(EmbedError::DimMismatch(dim, v.len()));
        }
        Ok(Self { dim, vectors, duplicates: 0 })
    }

    /// Unit-normal random vectors for `tokens`, for runs without real embeddings.
    pub fn random<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let vectors = tokens
            .iter()
            .map(|t| (t.as_ref().to_string(), (0..dim).map(|_| rng.normal()).collect()))
            .collect();
        Self { dim, vectors, duplicates: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Lines or records whose token had already been seen (last one wins).
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Tokens in sorted order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        t.sort_unstable();
        t
    }

    fn insert(&mut self, token: String, v: Vec<f64>) {
        if self.vectors.insert(token, v).is_some() {
            self.duplicates += 1;
        }
    }

    fn warn_duplicates(&self, path: &Path) {
        if self.duplicates > 0 {
            log::warn!("{}: {} duplicate tokens, last occurrence kept", path.display(), self.duplicates);
        }
    }

    pub fn load_text(path: &Path) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut store = Self { dim: 0, vectors: HashMap::new(), duplicates: 0 };
        let parse_err = |line: usize, msg: String| EmbedError::Parse { path: path.to_path_buf(), line, msg };
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_string();
            let v = parts
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(line_no, format!("bad value {p:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if store.vectors.is_empty() && store.dim == 0 {
                if v.is_empty() {
                    return Err(parse_err(line_no, "no values".into()));
                }
                store.dim = v.len();
            } else if v.len() != store.dim {
                return Err(parse_err(line_no, format!("expected {} values, found {}", store.dim, v.len())));
            }
            store.insert(token, v);
        }
        if store.vectors.is_empty() {
            return Err(EmbedError::Empty { path: path.to_path_buf() });
        }
        store.warn_duplicates(path);
        Ok(store)
    }

    pub fn load_binary(path: &Path) -> Result<Self, EmbedError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let bin_err = |msg: String| EmbedError::Binary { path: path.to_path_buf(), msg };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bin_err("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bin_err("header is not ASCII".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| bin_err(format!("bad header {header:?}: {e}")))?;
        let [count, dim] = nums[..] else {
            return Err(bin_err(format!("bad header {header:?}: expected \"count dim\"")));
        };
        if dim == 0 {
            return Err(bin_err("dimension 0".into()));
        }
        let mut store = Self { dim, vectors: HashMap::with_capacity(count), duplicates: 0 };
        let mut pos = nl + 1;
        for r in 0..count {
            while pos < bytes.len() && bytes[pos] == b'\n' {
                pos += 1;
            }
            let sp = bytes[pos..]
                .iter()
                .position(|&b| b == b' ')
                .ok_or_else(|| bin_err(format!("truncated record {} of {count}", r + 1)))?;
            let token = String::from_utf8_lossy(&bytes[pos..pos + sp]).into_owned();
            pos += sp + 1;
            let end = pos + 4 * dim;
            if end > bytes.len() {
                return Err(bin_err(format!("truncated record {} of {count}", r + 1)));
            }
            let v = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos = end;
            if bytes.get(pos) == Some(&b'\n') {
                pos += 1;
            }
            store.insert(token, v);
        }
        if bytes[pos..].iter().any(|b| !b.is_ascii_whitespace()) {
            return Err(bin_err(format!("header declares {count} records but more data follows")));
        }
        if store.vectors.is_empty() {
            return Err(EmbedError::Empty { path: path.to_path_buf() });
        }
        store.warn_duplicates(path);
        Ok(store)
    }

    /// Text format, tokens sorted.
    pub fn write_text(&self, path: &Path) -> Result<(), EmbedError> {
        let mut out = String::new();
        for t in self.tokens() {
            out.push_str(t);
            for x in &self.vectors[t] {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }

    /// Binary format, tokens sorted, values narrowed to `f32`.
    pub fn write_binary(&self, path: &Path) -> Result<(), EmbedError> {
        let mut out = Vec::new();
        writeln!(out, "{} {}", self.len(), self.dim).expect("writing to a Vec");
        for t in self.tokens() {
            out.extend_from_slice(t.as_bytes());
            out.push(b' ');
            for &x in &self.vectors[t] {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
            out.push(b'\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

/// Maps a token sequence to a fixed-size vector.
pub trait SentenceEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError>;
}

/// Mean of the in-store token vectors; zero when every token is missing.
pub fn mean_sentence_encode<S: AsRef<str>>(tokens: &[S], store: &WordVectorStore) -> Vec<f64> {
    let mut sum = vec![0.0; store.dim()];
    let mut n = 0usize;
    for t in tokens {
        if let Some(v) = store.get(t.as_ref()) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    if n > 0 {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    sum
}

pub struct MeanSentenceEncoder<'a> {
    pub store: &'a WordVectorStore,
}

impl SentenceEncoder for MeanSentenceEncoder<'_> {
    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn encode(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError> {
        Ok(mean_sentence_encode(tokens, self.store))
    }
}

/// Externally computed sentence vectors keyed by the normalized sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedSentenceStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PrecomputedSentenceStore {
    /// Reads `sentence<TAB>v1 v2 ... vd` lines.
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let parse_err = |line: usize, msg: String| EmbedError::Parse { path: path.to_path_buf(), line, msg };
        let mut dim = 0;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let (sentence, values) = line.split_once('\t').ok_or_else(|| parse_err(line_no, "missing tab".into()))?;
            let v = values
                .split_whitespace()
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(line_no, format!("bad value {p:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if dim == 0 {
                if v.is_empty() {
                    return Err(parse_err(line_no, "no values".into()));
                }
                dim = v.len();
            } else if v.len() != dim {
                return Err(parse_err(line_no, format!("expected {dim} values, found {}", v.len())));
            }
            let key = crate::textproc::normalize(sentence);
            if vectors.insert(key.clone(), v).is_some() {
                return Err(parse_err(line_no, format!("duplicate sentence {key:?}")));
            }
        }
        if vectors.is_empty() {
            return Err(EmbedError::Empty { path: path.to_path_buf() });
        }
        Ok(Self { dim, vectors })
    }

    pub fn from_map(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, EmbedError> {
        if let Some(v) = vectors.values().find(|v| v.len() != dim) {
            return Err(EmbedError::DimMismatch(dim, v.len()));
        }
        let vectors = vectors.into_iter().map(|(k, v)| (crate::textproc::normalize(&k), v)).collect();
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lookup(&self, sentence: &str) -> Result<&[f64], EmbedError> {
        let key = crate::textproc::normalize(sentence);
        self.vectors.get(&key).map(Vec::as_slice).ok_or(EmbedError::MissingSentence(key))
    }

    pub fn write(&self, path: &Path) -> Result<(), EmbedError> {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let vals: Vec<String> = self.vectors[k].iter().map(f64::to_string).collect();
            out.push_str(&format!("{k}\t{}\n", vals.join(" ")));
        }
        fs::write(path, out).map_err(io_err(path))
    }
}

impl SentenceEncoder for PrecomputedSentenceStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[String]) -> Result<Vec<f64>, EmbedError> {
        self.lookup(&tokens.join(" ")).map(<[f64]>::to_vec)
    }
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu2: f64 = u.iter().map(|a| a * a).sum();
    let nv2: f64 = v.iter().map(|a| a * a).sum();
    if nu2 == 0.0 || nv2 == 0.0 {
        return Ok(0.0);
    }
    // sqrt of the product keeps cosine(u, u) exactly 1
    let mut denom = (nu2 * nv2).sqrt();
    if !denom.is_finite() || denom == 0.0 {
        denom = nu2.sqrt() * nv2.sqrt();
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}
