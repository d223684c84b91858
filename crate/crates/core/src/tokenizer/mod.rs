//! Per-residue protein vocabulary and text encoders.

mod embedding_file;
mod text;

use thiserror::Error;

pub use embedding_file::{EmbeddingFileError, EmbeddingStore, EMBEDDING_FORMAT};
pub use text::{
    split_words, PrecomputedTextEncoder, TextEncoder, TextEncoding, TextFeatures, TextProvider, TrainableTextEncoder,
    WordVocab, MAX_TEXT_TOKENS, UNK_WORD,
};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const CLS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Slot token embedded to form the cross-modality tensor.
pub const CROSS: TokenId = 3;

/// IUPAC extended residue alphabet, in id order after the specials.
pub const RESIDUES: &str = "ARNDCQEGHILKMFPSTWYVBZXUO";
pub const NUM_SPECIALS: usize = 4;
pub const VOCAB_SIZE: usize = NUM_SPECIALS + RESIDUES.len();

/// Upper bound on encoded sequence length, specials included.
pub const MAX_SEQUENCE_TOKENS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizeError {
    #[error("invalid residue {ch:?} at position {position}")]
    UnknownResidue { ch: char, position: usize },
    #[error("sequence of {0} tokens exceeds the {MAX_SEQUENCE_TOKENS}-token limit")]
    SequenceTooLong(usize),
    #[error("invalid token id {0}")]
    InvalidId(TokenId),
    #[error("empty text")]
    EmptyText,
    #[error("no embedding stored for record {0:?}")]
    MissingRecord(String),
    #[error("text embedding width {got} does not match {expected}")]
    EmbeddingWidth { expected: usize, got: usize },
}

pub fn residue_id(ch: char) -> Option<TokenId> {
    RESIDUES.find(ch).filter(|_| ch.is_ascii()).map(|i| i + NUM_SPECIALS)
}

pub fn residue_char(id: TokenId) -> Option<char> {
    id.checked_sub(NUM_SPECIALS).and_then(|i| RESIDUES.as_bytes().get(i)).map(|&b| b as char)
}

pub fn is_residue(id: TokenId) -> bool {
    (NUM_SPECIALS..VOCAB_SIZE).contains(&id)
}

pub fn special_name(id: TokenId) -> Option<&'static str> {
    match id {
        PAD => Some("<pad>"),
        CLS => Some("<cls>"),
        EOS => Some("<eos>"),
        CROSS => Some("<cross>"),
        _ => None,
    }
}

/// First invalid residue of `seq`, if any.
pub fn validate_residues(seq: &str) -> Result<(), TokenizeError> {
    match seq.chars().enumerate().find(|&(_, c)| residue_id(c).is_none()) {
        Some((position, ch)) => Err(TokenizeError::UnknownResidue { ch, position }),
        None => Ok(()),
    }
}

pub fn encode_sequence(seq: &str, add_cls: bool, add_eos: bool) -> Result<Vec<TokenId>, TokenizeError> {
    let mut ids = Vec::with_capacity(seq.len() + 2);
    if add_cls {
        ids.push(CLS);
    }
    for (position, ch) in seq.chars().enumerate() {
        ids.push(residue_id(ch).ok_or(TokenizeError::UnknownResidue { ch, position })?);
    }
    if add_eos {
        ids.push(EOS);
    }
    if ids.len() > MAX_SEQUENCE_TOKENS {
        return Err(TokenizeError::SequenceTooLong(ids.len()));
    }
    Ok(ids)
}

/// Residues in order, specials dropped, stopping at the first EOS.
pub fn decode_sequence(ids: &[TokenId]) -> Result<String, TokenizeError> {
    let mut out = String::with_capacity(ids.len());
    for &id in ids {
        match id {
            EOS => break,
            PAD | CLS | CROSS => {}
            _ => out.push(residue_char(id).ok_or(TokenizeError::InvalidId(id))?),
        }
    }
    Ok(out)
}
