//! Checkpoint container.
//!
//! ```text
//! protdat-ckpt-1
//! dtype f64|f32
//! config <ModelConfig as one-line JSON>
//! vocab <JSON array of words> | vocab none
//! tensors <count>
//! <name>\t<rows>\t<cols>\t<byte offset>     (one line per tensor)
//! data
//! <row-major little-endian blocks>
//! ```
//!
//! Offsets are relative to the first byte after the `data` line, and the data
//! section must be exactly as long as the directory says.

use std::collections::HashMap;
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, ModelWeights, Tensors};
use crate::numerics::Matrix;
use crate::tokenizer::WordVocab;

pub const CHECKPOINT_FORMAT: &str = "protdat-ckpt-1";

/// Tensors in one decoder layer; bounds layer counts before any allocation.
const TENSORS_PER_LAYER: usize = 48;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Dtype {
    /// Bit-exact.
    #[default]
    F64,
    /// Half the size; values are rounded.
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
        }
    }
}

/// Parameters plus everything needed to rebuild the model around them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Word vocabulary of the trainable text path.
    pub vocab: Option<WordVocab>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self, dtype: Dtype) -> Vec<u8> {
        let named = self.params.named();
        let mut header = format!(
            "{CHECKPOINT_FORMAT}\ndtype {}\nconfig {}\n",
            dtype.name(),
            serde_json::to_string(&self.config).expect("config serializes")
        );
        match &self.vocab {
            Some(v) => header.push_str(&format!("vocab {}\n", serde_json::to_string(v.words()).expect("words serialize"))),
            None => header.push_str("vocab none\n"),
        }
        header.push_str(&format!("tensors {}\n", named.len()));
        let mut offset = 0;
        for (name, m) in &named {
            header.push_str(&format!("{name}\t{}\t{}\t{offset}\n", m.rows(), m.cols()));
            offset += m.len() * dtype.width();
        }
        header.push_str("data\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, m) in &named {
            for &v in m.data() {
                match dtype {
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str, ModelError> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        let field = |line: &str, key: &str| -> Result<String, ModelError> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key} ...`, found {line:?}")))
        };

        let magic = next_line()?;
        if magic != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported format version {magic:?}, expected {CHECKPOINT_FORMAT}")));
        }
        let dtype = match field(next_line()?, "dtype")?.as_str() {
            "f64" => Dtype::F64,
            "f32" => Dtype::F32,
            other => return Err(bad(format!("unknown dtype {other:?}"))),
        };
        let config: ModelConfig =
            serde_json::from_str(&field(next_line()?, "config")?).map_err(|e| bad(format!("config: {e}")))?;
        config.validate()?;
        let vocab = match field(next_line()?, "vocab")?.as_str() {
            "none" => None,
            json => {
                let words: Vec<String> = serde_json::from_str(json).map_err(|e| bad(format!("vocab: {e}")))?;
                Some(WordVocab::from_words(words))
            }
        };
        match &vocab {
            Some(v) if v.len() != config.text_vocab_size => {
                return Err(bad(format!("vocab has {} rows, config expects {}", v.len(), config.text_vocab_size)))
            }
            None if config.uses_trainable_text() => return Err(bad("trainable text path without a vocabulary")),
            _ => {}
        }
        let count: usize = field(next_line()?, "tensors")?.parse().map_err(|_| bad("bad tensor count"))?;
        let mut directory = Vec::new();
        for _ in 0..count {
            let line = next_line()?;
            let parts: Vec<&str> = line.split('\t').collect();
            let [name, rows, cols, offset] = parts[..] else {
                return Err(bad(format!("bad tensor line {line:?}")));
            };
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number {s:?} in {line:?}")));
            directory.push((name.to_string(), num(rows)?, num(cols)?, num(offset)?));
        }
        if next_line()? != "data" {
            return Err(bad("expected `data`"));
        }
        let data = &bytes[pos..];

        if config.n_layers.saturating_mul(TENSORS_PER_LAYER) > directory.len() {
            return Err(bad(format!("{} tensors cannot hold {} layers", directory.len(), config.n_layers)));
        }
        let mut expected_end = 0usize;
        let mut tensors: HashMap<String, Matrix> = HashMap::new();
        for (name, rows, cols, offset) in directory {
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(dtype.width()))
                .ok_or_else(|| bad(format!("tensor {name} size overflows")))?;
            if offset != expected_end {
                return Err(bad(format!("tensor {name} at offset {offset}, expected {expected_end}")));
            }
            let end = offset.checked_add(len).filter(|&e| e <= data.len()).ok_or_else(|| {
                bad(format!("tensor {name} needs bytes {offset}..{} but data has {} (truncated?)", offset.saturating_add(len), data.len()))
            })?;
            let values: Vec<f64> = match dtype {
                Dtype::F64 => data[offset..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Dtype::F32 => data[offset..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            if tensors.insert(name.clone(), Matrix::from_vec(rows, cols, values)).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            expected_end = end;
        }
        if expected_end != data.len() {
            return Err(bad(format!("{} trailing data bytes", data.len() - expected_end)));
        }

        let params = ModelWeights::layout(&config).try_map("", &mut |name, spec| {
            let m = tensors.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if m.shape() != (spec.rows, spec.cols) {
                return Err(bad(format!("tensor {name} has shape {:?}, config implies {:?}", m.shape(), (spec.rows, spec.cols))));
            }
            Ok(m)
        })?;
        if let Some(extra) = tensors.keys().min() {
            return Err(bad(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint { config, params, vocab })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path, dtype: Dtype) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint.to_bytes(dtype)).map_err(|e| ModelError::Io(path.display().to_string(), e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(path.display().to_string(), e.to_string()))?;
    Checkpoint::parse(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(trainable: bool) -> Checkpoint {
        let config = ModelConfig { ffn_dim: 16, ..ModelConfig::tiny(8, 2, 2, 2, if trainable { 4 } else { 0 }) };
        let vocab = trainable.then(|| WordVocab::build(["alpha beta gamma"]));
        Checkpoint { params: ModelParams::init(&config, 3), config, vocab }
    }

    fn replace_once(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        let at = bytes.windows(from.len()).position(|w| w == from.as_bytes()).expect("pattern present");
        [&bytes[..at], to.as_bytes(), &bytes[at + from.len()..]].concat()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for trainable in [false, true] {
            let ck = sample(trainable);
            let bytes = ck.to_bytes(Dtype::F64);
            let back = Checkpoint::parse(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(Dtype::F64), bytes);
        }
    }

    #[test]
    fn layer_constant_matches_layout() {
        let ck = sample(false);
        assert_eq!(ck.params.layers[0].named().len(), TENSORS_PER_LAYER);
    }

    #[test]
    fn f32_rounds_values() {
        let ck = sample(false);
        let back = Checkpoint::parse(&ck.to_bytes(Dtype::F32)).unwrap();
        let (a, b) = (&ck.params.token_embedding, &back.params.token_embedding);
        assert!(a.max_abs_diff(b) < 1e-8);
        assert_eq!(b.get(1, 1), a.get(1, 1) as f32 as f64);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample(true).to_bytes(Dtype::F64);
        for cut in [1, 8, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::parse(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::parse(&extra).is_err());
        let err = Checkpoint::parse(&replace_once(&bytes, CHECKPOINT_FORMAT, "protdat-ckpt-9")).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let bytes = sample(false).to_bytes(Dtype::F64);
        // Claim head.bias is 1 × 28 and give the trailing tensor one element less.
        let mut patched = replace_once(&bytes, "head.bias\t1\t29\t", "head.bias\t1\t28\t");
        patched.truncate(patched.len() - 8);
        let err = Checkpoint::parse(&patched).unwrap_err();
        assert!(err.to_string().contains("head.bias"), "{err}");
    }
}
