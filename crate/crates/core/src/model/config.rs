use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tokenizer::{MAX_SEQUENCE_TOKENS, MAX_TEXT_TOKENS, VOCAB_SIZE};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Length of the cross-modality slot tensor.
    pub c_size: usize,
    /// Width of incoming text embeddings.
    pub d_text: usize,
    pub ffn_dim: usize,
    pub max_text: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    /// Rows of the trainable word table, UNK included. Zero selects precomputed text embeddings.
    pub text_vocab_size: usize,
}

impl Default for ModelConfig {
    /// Full-size settings: 768 wide, 12 layers, 12 heads, 50 cross slots.
    fn default() -> Self {
        Self {
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            c_size: 50,
            d_text: 768,
            ffn_dim: 4 * 768,
            max_text: MAX_TEXT_TOKENS,
            max_seq: MAX_SEQUENCE_TOKENS,
            vocab_size: VOCAB_SIZE,
            text_vocab_size: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration with a trainable text table of `text_vocab_size` rows.
    pub fn tiny(d_model: usize, n_layers: usize, n_heads: usize, c_size: usize, text_vocab_size: usize) -> Self {
        Self {
            d_model,
            n_layers,
            n_heads,
            c_size,
            d_text: d_model,
            ffn_dim: 4 * d_model,
            text_vocab_size,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn uses_trainable_text(&self) -> bool {
        self.text_vocab_size > 0
    }

    /// Text embeddings pass straight through when already `d_model` wide.
    pub fn has_text_projection(&self) -> bool {
        self.d_text != self.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return fail(format!("d_model={}, n_heads={}, n_layers={} must be positive", self.d_model, self.n_heads, self.n_layers));
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!("head dimension {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.ffn_dim < self.d_model {
            return fail(format!("ffn_dim {} smaller than d_model {}", self.ffn_dim, self.d_model));
        }
        if self.c_size == 0 {
            return fail("c_size must be at least 1".into());
        }
        if self.d_text == 0 {
            return fail("d_text must be positive".into());
        }
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!("vocab_size {} does not match the residue vocabulary ({VOCAB_SIZE})", self.vocab_size));
        }
        if self.max_seq == 0 || self.max_seq > MAX_SEQUENCE_TOKENS || self.max_text == 0 || self.max_text > MAX_TEXT_TOKENS {
            return fail(format!("length caps max_seq={} max_text={} out of range", self.max_seq, self.max_text));
        }
        Ok(())
    }
}
