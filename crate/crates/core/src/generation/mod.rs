//! Autoregressive decoding with repetition penalty, temperature and nucleus sampling.

mod fasta;
mod sampling;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fasta::{params_digest, parse_fasta, write_fasta, FastaRecord};
pub use sampling::{apply_repetition_penalty, nucleus, nucleus_sample, NucleusDraw};

use crate::data::{Batch, BatchItem};
use crate::model::{model_forward, ModelConfig, ModelError, ModelParams};
use crate::numerics::softmax_with_temperature;
use crate::tokenizer::{
    decode_sequence, encode_sequence, is_residue, TextFeatures, TextProvider, TokenId, TokenizeError, EOS,
};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    /// `0` selects argmax decoding.
    pub temperature: f64,
    /// `0` selects argmax decoding.
    pub top_p: f64,
    pub repetition_penalty: f64,
    /// Residue budget, fragment included.
    pub max_len: usize,
    pub seed: u64,
    /// Independent candidates per prompt; candidate `i` uses `seed + i`.
    pub num_candidates: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.85, repetition_penalty: 1.2, max_len: 500, seed: 0, num_candidates: 1 }
    }
}

impl GenerationParams {
    /// Argmax decoding with no penalty.
    pub fn greedy(max_len: usize) -> Self {
        Self { temperature: 0.0, top_p: 0.0, repetition_penalty: 1.0, max_len, ..Self::default() }
    }

    pub fn is_argmax(&self) -> bool {
        self.temperature == 0.0 || self.top_p == 0.0
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<(), GenerationError> {
        let fail = |m: String| Err(GenerationError::InvalidParams(m));
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return fail(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return fail(format!("top_p {} outside [0, 1]", self.top_p));
        }
        if !(self.repetition_penalty >= 1.0) || !self.repetition_penalty.is_finite() {
            return fail(format!("repetition penalty {} must be >= 1", self.repetition_penalty));
        }
        if self.max_len == 0 || self.max_len + 1 > config.max_seq {
            return fail(format!("max_len {} must be in 1..={}", self.max_len, config.max_seq - 1));
        }
        if self.num_candidates == 0 {
            return fail("num_candidates must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "text-only")]
    TextOnly,
    #[serde(rename = "text+fragment")]
    TextAndFragment,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::TextOnly => "text-only",
            PromptMode::TextAndFragment => "text+fragment",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text-only" => Ok(PromptMode::TextOnly),
            "text+fragment" => Ok(PromptMode::TextAndFragment),
            other => Err(format!("unknown mode {other:?}; expected text-only or text+fragment")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    /// Record id; also the lookup key for precomputed text embeddings.
    pub id: String,
    pub mode: PromptMode,
    pub text: String,
    #[serde(default)]
    pub fragment: String,
}

impl PromptSpec {
    pub fn text_only(id: &str, text: &str) -> Self {
        Self { id: id.into(), mode: PromptMode::TextOnly, text: text.into(), fragment: String::new() }
    }

    pub fn with_fragment(id: &str, text: &str, fragment: &str) -> Self {
        Self { id: id.into(), mode: PromptMode::TextAndFragment, text: text.into(), fragment: fragment.into() }
    }
}

/// One decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub token: TokenId,
    /// Kept ids at this step (one under argmax decoding).
    pub nucleus: Vec<TokenId>,
    /// Logit of the chosen token after the repetition penalty.
    pub penalized_logit: f64,
    /// Probability of the chosen token within the renormalized nucleus.
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Eos,
    MaxLen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub sequence: String,
    pub trace: Vec<StepTrace>,
    pub stop: StopReason,
}

/// A loaded model with its text path.
pub struct Generator<'a> {
    pub config: &'a ModelConfig,
    pub params: &'a ModelParams,
    pub text: &'a TextProvider,
}

/// Tokens never sampled: every special except EOS.
fn samplable(id: TokenId) -> bool {
    id == EOS || is_residue(id)
}

impl Generator<'_> {
    /// Logits over the vocabulary for the next token after `tokens`.
    pub fn next_logits(&self, tokens: &[TokenId], text: &TextFeatures) -> Result<Vec<f64>, GenerationError> {
        let item = BatchItem { id: String::new(), tokens: tokens.to_vec(), text: text.clone() };
        let batch = Batch::for_inference(&[item], self.config.c_size).map_err(|e| GenerationError::InvalidPrompt(e.to_string()))?;
        let out = model_forward(&batch, self.params, self.config, false)?;
        Ok(out.logits[0].row(tokens.len() - 1).to_vec())
    }

    pub fn generate(&self, prompt: &PromptSpec, gp: &GenerationParams) -> Result<Generated, GenerationError> {
        gp.validate(self.config)?;
        let mut tokens = match prompt.mode {
            PromptMode::TextOnly => encode_sequence("", true, false)?,
            PromptMode::TextAndFragment => {
                if prompt.fragment.is_empty() {
                    return Err(GenerationError::InvalidPrompt("fragment mode needs a non-empty fragment".into()));
                }
                if prompt.fragment.chars().count() > gp.max_len {
                    return Err(GenerationError::InvalidPrompt(format!(
                        "fragment of {} residues exceeds max_len {}",
                        prompt.fragment.chars().count(),
                        gp.max_len
                    )));
                }
                encode_sequence(&prompt.fragment, true, false)?
            }
        };
        let text = self.text.features(&prompt.id, &prompt.text)?;
        let mut rng = ChaCha8Rng::seed_from_u64(gp.seed);
        let mut trace = Vec::new();
        let mut stop = StopReason::MaxLen;

        while tokens.len() - 1 < gp.max_len {
            let logits = self.next_logits(&tokens, &text)?;
            let penalized = apply_repetition_penalty(&logits, &tokens[1..], gp.repetition_penalty)?;
            let allowed: Vec<TokenId> = (0..penalized.len()).filter(|&i| samplable(i)).collect();
            let (token, nucleus_ids, probability) = if gp.is_argmax() {
                let best = allowed
                    .iter()
                    .copied()
                    .fold(None::<TokenId>, |b, i| match b {
                        Some(j) if penalized[j] >= penalized[i] => Some(j),
                        _ => Some(i),
                    })
                    .expect("vocabulary has samplable tokens");
                (best, vec![best], 1.0)
            } else {
                let sub: Vec<f64> = allowed.iter().map(|&i| penalized[i]).collect();
                let sub_probs = softmax_with_temperature(&sub, gp.temperature)
                    .map_err(|e| GenerationError::InvalidDistribution(e.to_string()))?;
                let mut probs = vec![0.0; penalized.len()];
                for (&i, p) in allowed.iter().zip(sub_probs) {
                    probs[i] = p;
                }
                let draw = nucleus_sample(&probs, gp.top_p, &mut rng)?;
                let mass: f64 = draw.nucleus.iter().map(|&i| probs[i]).sum();
                (draw.token, draw.nucleus, probs[draw.token] / mass)
            };
            trace.push(StepTrace {
                step: trace.len(),
                token,
                nucleus: nucleus_ids,
                penalized_logit: penalized[token],
                probability,
            });
            if token == EOS {
                stop = StopReason::Eos;
                break;
            }
            tokens.push(token);
        }
        Ok(Generated { sequence: decode_sequence(&tokens[1..])?, trace, stop })
    }

    /// `gp.num_candidates` independent generations; candidate `i` is seeded with `gp.seed + i`.
    pub fn generate_candidates(&self, prompt: &PromptSpec, gp: &GenerationParams) -> Result<Vec<Generated>, GenerationError> {
        (0..gp.num_candidates as u64)
            .map(|i| self.generate(prompt, &GenerationParams { seed: gp.seed.wrapping_add(i), ..gp.clone() }))
            .collect()
    }
}

#[cfg(test)]
mod tests;
