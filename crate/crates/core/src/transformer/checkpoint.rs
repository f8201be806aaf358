//! Checkpoint container, all integers `u64` little-endian:
//!
//! ```text
//! "SUMKIT01"
//! len, JSON {"model": <ModelConfig>, "vocab": [<non-reserved tokens>]}
//! repeated until EOF: name_len, name, rank, dims[rank], f64 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::numeric::Tensor;
use crate::textproc::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SUMKIT01";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vec<String>,
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn write_checkpoint(model: &Model, vocab: &Vocab) -> Result<Vec<u8>, ModelError> {
    if vocab.len() != model.config.vocab_size {
        return Err(ModelError::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let header = Header { model: model.config.clone(), vocab: vocab.words().to_vec() };
    let json = serde_json::to_vec(&header).expect("config serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank() as u64);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, String> {
        let x = self.u64()?;
        usize::try_from(x).ok().filter(|&n| n <= self.bytes.len()).ok_or_else(|| format!("implausible length {x}"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Model, Vocab), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let n = r.len()?;
    let header: Header = serde_json::from_slice(r.take(n)?).map_err(|e| format!("config record: {e}"))?;
    let mut named = Vec::new();
    while r.pos < bytes.len() {
        let n = r.len()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or("tensor too large")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| format!("tensor {name}: {e}"))?;
        named.push((name, t));
    }
    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| e.to_string())?;
    if vocab.len() != header.model.vocab_size {
        return Err(format!("vocabulary has {} entries, config says {}", vocab.len(), header.model.vocab_size));
    }
    let model = Model::from_named(header.model, named).map_err(|e| e.to_string())?;
    Ok((model, vocab))
}

pub fn save_checkpoint(path: &Path, model: &Model, vocab: &Vocab) -> Result<(), ModelError> {
    let bytes = write_checkpoint(model, vocab)?;
    fs::write(path, bytes).map_err(|e| ModelError::Checkpoint { path: path.display().to_string(), msg: e.to_string() })
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Vocab), ModelError> {
    let err = |msg: String| ModelError::Checkpoint { path: path.display().to_string(), msg };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    read_checkpoint(&bytes).map_err(err)
}
