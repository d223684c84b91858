use std::rc::Rc;

use super::{DataError, ProteinRecord};
use crate::numerics::{AttentionMask, Matrix};
use crate::tokenizer::{encode_sequence, TextFeatures, TextProvider, TokenId, CROSS, PAD};

/// One record ready for batching.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    /// Encoded sequence. For training this is `[CLS, residues.., EOS]`; for
    /// inference it is the prefix to condition on.
    pub tokens: Vec<TokenId>,
    pub text: TextFeatures,
}

impl BatchItem {
    pub fn from_record(record: &ProteinRecord, provider: &TextProvider) -> Result<Self, DataError> {
        let tokens = encode_sequence(&record.sequence, true, true)
            .map_err(|source| DataError::Tokenize { id: record.id.clone(), source })?;
        let text = provider
            .features(&record.id, &record.text)
            .map_err(|source| DataError::Tokenize { id: record.id.clone(), source })?;
        Ok(Self { id: record.id.clone(), tokens, text })
    }
}

/// Text input padded to the batch maximum.
#[derive(Clone, Debug, PartialEq)]
pub enum PaddedText {
    /// Word-table rows; `None` marks padding, embedded as a zero row.
    Words(Vec<Option<usize>>),
    /// Dense embeddings with zero padding rows.
    Dense(Matrix),
}

/// The three attention masks of one record.
#[derive(Clone, Debug)]
pub struct RecordMasks {
    /// Text self-attention, `T × T`, padding only.
    pub ptm: Rc<AttentionMask>,
    /// Cross slots querying text, `c_size × T`, padding only.
    pub cim: Rc<AttentionMask>,
    /// Sequence queries over `[cross slots | sequence]`, `S × (c_size + S)`.
    /// Slot columns are always visible; the sequence block is causal and padding-masked.
    pub psm: Rc<AttentionMask>,
}

/// A padded batch. Every per-record vector has one entry per record.
#[derive(Clone, Debug)]
pub struct Batch {
    pub record_ids: Vec<String>,
    /// `B × S` input ids, PAD-filled.
    pub seq_ids: Vec<Vec<TokenId>>,
    /// `B × S` next-token targets; `None` at padding (and everywhere for inference batches).
    pub targets: Vec<Vec<Option<TokenId>>>,
    pub seq_lens: Vec<usize>,
    pub text: Vec<PaddedText>,
    pub text_lens: Vec<usize>,
    /// `c_size` CROSS ids, assembled fresh for this batch and shared by every record.
    pub cross_ids: Vec<TokenId>,
    pub masks: Vec<RecordMasks>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_ids.first().map_or(0, Vec::len)
    }

    pub fn text_len(&self) -> usize {
        self.masks.first().map_or(0, |m| m.ptm.shape().0)
    }

    pub fn c_size(&self) -> usize {
        self.cross_ids.len()
    }

    /// Positions that contribute to the loss.
    pub fn target_count(&self) -> usize {
        self.targets.iter().flatten().filter(|t| t.is_some()).count()
    }

    /// Training batch: inputs are `tokens[..n-1]`, targets `tokens[1..]`.
    pub fn for_training(items: &[BatchItem], c_size: usize) -> Result<Self, DataError> {
        Self::assemble(items, c_size, true)
    }

    /// Inference batch: inputs are the full token prefix, no targets.
    pub fn for_inference(items: &[BatchItem], c_size: usize) -> Result<Self, DataError> {
        Self::assemble(items, c_size, false)
    }

    fn assemble(items: &[BatchItem], c_size: usize, training: bool) -> Result<Self, DataError> {
        if items.is_empty() {
            return Err(DataError::EmptyBatch);
        }
        if c_size == 0 {
            return Err(DataError::ZeroCrossSize);
        }
        let shift = usize::from(training);
        let seq_lens: Vec<usize> = items.iter().map(|it| it.tokens.len().saturating_sub(shift)).collect();
        let s_max = *seq_lens.iter().max().expect("non-empty");
        if s_max == 0 {
            return Err(DataError::EmptyBatch);
        }
        let text_lens: Vec<usize> = items.iter().map(|it| it.text.tokens()).collect();
        let t_max = *text_lens.iter().max().expect("non-empty");

        let mut seq_ids = Vec::with_capacity(items.len());
        let mut targets = Vec::with_capacity(items.len());
        let mut text = Vec::with_capacity(items.len());
        let mut masks = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let len = seq_lens[i];
            if len == 0 || text_lens[i] == 0 {
                return Err(DataError::EmptyBatch);
            }
            let mut ids = item.tokens[..len].to_vec();
            ids.resize(s_max, PAD);
            let mut tg: Vec<Option<TokenId>> =
                if training { item.tokens[1..].iter().map(|&t| Some(t)).collect() } else { vec![None; len] };
            tg.resize(s_max, None);
            seq_ids.push(ids);
            targets.push(tg);

            text.push(match &item.text {
                TextFeatures::Words(w) => {
                    let mut p: Vec<Option<usize>> = w.iter().copied().map(Some).collect();
                    p.resize(t_max, None);
                    PaddedText::Words(p)
                }
                TextFeatures::Dense(m) => {
                    PaddedText::Dense(Matrix::concat_rows(&[m, &Matrix::zeros(t_max - m.rows(), m.cols())]))
                }
            });

            let text_valid: Vec<bool> = (0..t_max).map(|k| k < text_lens[i]).collect();
            let ptm = AttentionMask::key_padding(t_max, &text_valid).expect("text has a real token");
            let cim = AttentionMask::key_padding(c_size, &text_valid).expect("text has a real token");
            let psm = AttentionMask::from_fn(s_max, c_size + s_max, |q, k| k < c_size || (k - c_size <= q && k - c_size < len))
                .expect("cross columns are always visible");
            masks.push(RecordMasks { ptm: Rc::new(ptm), cim: Rc::new(cim), psm: Rc::new(psm) });
        }
        Ok(Self {
            record_ids: items.iter().map(|it| it.id.clone()).collect(),
            seq_ids,
            targets,
            seq_lens,
            text,
            text_lens,
            cross_ids: vec![CROSS; c_size],
            masks,
        })
    }
}

/// Encodes `records` with `provider` and assembles a training batch.
pub fn make_batch(records: &[ProteinRecord], provider: &TextProvider, c_size: usize) -> Result<Batch, DataError> {
    let items = records.iter().map(|r| BatchItem::from_record(r, provider)).collect::<Result<Vec<_>, _>>()?;
    Batch::for_training(&items, c_size)
}
