use std::collections::{BTreeSet, HashMap};

use super::{EmbeddingStore, TokenizeError};
use crate::numerics::Matrix;

/// Text length cap in tokens; longer inputs keep their first `MAX_TEXT_TOKENS`.
pub const MAX_TEXT_TOKENS: usize = 512;

/// Row of the word table shared by every out-of-vocabulary word.
pub const UNK_WORD: usize = 0;

/// An encoded description: one row per text token plus a padding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoding {
    pub embeddings: Matrix,
    /// `true` for real tokens, `false` for padding rows.
    pub mask: Vec<bool>,
}

impl TextEncoding {
    pub fn tokens(&self) -> usize {
        self.mask.len()
    }
}

/// Source of text embeddings.
pub trait TextEncoder {
    fn d_text(&self) -> usize;
    fn encode(&self, record_id: &str, text: &str) -> Result<TextEncoding, TokenizeError>;
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn truncate_tokens<T>(mut items: Vec<T>, what: &str) -> Vec<T> {
    if items.len() > MAX_TEXT_TOKENS {
        log::warn!("{what}: {} text tokens truncated to {MAX_TEXT_TOKENS}", items.len());
        items.truncate(MAX_TEXT_TOKENS);
    }
    items
}

/// Word vocabulary for the trainable encoder. Row 0 is the shared UNK.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Builds a vocabulary from `texts`, assigning ids in sorted word order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        Self::from_words(set.into_iter().collect())
    }

    /// `words` excludes the UNK entry, which is always id 0.
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Self { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Table rows needed, UNK included.
    pub fn len(&self) -> usize {
        self.words.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_WORD)
    }

    /// Word ids of `text`, capped at [`MAX_TEXT_TOKENS`].
    pub fn ids(&self, text: &str) -> Result<Vec<usize>, TokenizeError> {
        let words = split_words(text);
        if words.is_empty() {
            return Err(TokenizeError::EmptyText);
        }
        Ok(truncate_tokens(words.iter().map(|w| self.id(w)).collect(), "trainable encoder"))
    }
}

/// Word-table encoder whose rows are model parameters.
pub struct TrainableTextEncoder<'a> {
    pub vocab: &'a WordVocab,
    pub table: &'a Matrix,
}

impl TextEncoder for TrainableTextEncoder<'_> {
    fn d_text(&self) -> usize {
        self.table.cols()
    }

    fn encode(&self, _record_id: &str, text: &str) -> Result<TextEncoding, TokenizeError> {
        let ids = self.vocab.ids(text)?;
        let mut embeddings = Matrix::zeros(ids.len(), self.table.cols());
        for (r, &id) in ids.iter().enumerate() {
            embeddings.row_mut(r).copy_from_slice(self.table.row(id));
        }
        Ok(TextEncoding { embeddings, mask: vec![true; ids.len()] })
    }
}

/// Encoder backed by a file of externally computed embeddings, keyed by record id.
pub struct PrecomputedTextEncoder<'a> {
    pub store: &'a EmbeddingStore,
}

impl TextEncoder for PrecomputedTextEncoder<'_> {
    fn d_text(&self) -> usize {
        self.store.d_text()
    }

    fn encode(&self, record_id: &str, text: &str) -> Result<TextEncoding, TokenizeError> {
        if text.trim().is_empty() {
            return Err(TokenizeError::EmptyText);
        }
        let m = self.store.get(record_id).ok_or_else(|| TokenizeError::MissingRecord(record_id.to_string()))?;
        let rows = m.rows().min(MAX_TEXT_TOKENS);
        if m.rows() > rows {
            log::warn!("record {record_id}: {} text tokens truncated to {MAX_TEXT_TOKENS}", m.rows());
        }
        Ok(TextEncoding { embeddings: m.slice_rows(0, rows), mask: vec![true; rows] })
    }
}

/// Per-record text input as the model consumes it.
#[derive(Clone, Debug, PartialEq)]
pub enum TextFeatures {
    /// Rows of the model's trainable word table.
    Words(Vec<usize>),
    /// Fixed embeddings of width `d_text`.
    Dense(Matrix),
}

impl TextFeatures {
    pub fn tokens(&self) -> usize {
        match self {
            TextFeatures::Words(w) => w.len(),
            TextFeatures::Dense(m) => m.rows(),
        }
    }
}

/// The text path selected for a model.
#[derive(Clone, Debug)]
pub enum TextProvider {
    Trainable(WordVocab),
    Precomputed(EmbeddingStore),
}

impl TextProvider {
    pub fn features(&self, record_id: &str, text: &str) -> Result<TextFeatures, TokenizeError> {
        match self {
            TextProvider::Trainable(vocab) => vocab.ids(text).map(TextFeatures::Words),
            TextProvider::Precomputed(store) => {
                PrecomputedTextEncoder { store }.encode(record_id, text).map(|e| TextFeatures::Dense(e.embeddings))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lowercases_and_drops_punctuation() {
        assert_eq!(
            split_words("FUNCTION: Is involved in the beta-ketoadipate pathway."),
            vec!["function", "is", "involved", "in", "the", "beta", "ketoadipate", "pathway"]
        );
        assert!(split_words(" ,;. ").is_empty());
    }

    #[test]
    fn vocab_maps_unknown_words_to_unk() {
        let v = WordVocab::build(["alpha beta", "beta gamma"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("alpha"), 1);
        assert_eq!(v.id("gamma"), 3);
        assert_eq!(v.ids("Gamma delta").unwrap(), vec![3, UNK_WORD]);
        assert_eq!(v.ids("..."), Err(TokenizeError::EmptyText));
    }

    #[test]
    fn trainable_encoding_shape_and_determinism() {
        let v = WordVocab::build(["one two three four five"]);
        let table = Matrix::from_vec(v.len(), 16, (0..v.len() * 16).map(|i| i as f64 * 0.01).collect());
        let enc = TrainableTextEncoder { vocab: &v, table: &table };
        let e = enc.encode("r1", "one two three four five").unwrap();
        assert_eq!(e.embeddings.shape(), (5, 16));
        assert!(e.mask.iter().all(|&m| m));
        assert_eq!(e, enc.encode("r1", "one two three four five").unwrap());
        assert_eq!(e.embeddings.row(0), table.row(v.id("one")));
    }

    #[test]
    fn long_text_is_truncated() {
        let text = (0..600).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let v = WordVocab::build([text.as_str()]);
        assert_eq!(v.ids(&text).unwrap().len(), MAX_TEXT_TOKENS);
    }
}
