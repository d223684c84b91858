//! Dataset ingestion, splitting and batch assembly.

mod batch;
mod records;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use batch::{make_batch, Batch, BatchItem, PaddedText, RecordMasks};
pub use records::{
    load_records, parse_records, write_jsonl, LoadOutcome, LoadReport, ProteinRecord, RecordFormat, RowError,
    TextSections, SECTION_HEADERS,
};

use crate::tokenizer::TokenizeError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("too many invalid rows; {0}")]
    TooManyInvalid(LoadReport),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("cross tensor size must be at least 1")]
    ZeroCrossSize,
    #[error("record {id}: {source}")]
    Tokenize {
        id: String,
        #[source]
        source: TokenizeError,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitSizes {
    /// Exact sizes. Records beyond `train + valid + test` go to train.
    Counts { train: usize, valid: usize, test: usize },
    /// Validation and test fractions; train receives the rest.
    Fractions { valid: f64, test: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

/// Seeded shuffle followed by a train/valid/test cut.
pub fn split_records<T: Clone>(records: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>), DataError> {
    let n = records.len();
    let (valid, test) = match spec.sizes {
        SplitSizes::Counts { train, valid, test } => {
            if train + valid + test > n {
                return Err(DataError::InfeasibleSplit(format!("{train}+{valid}+{test} exceeds {n} records")));
            }
            (valid, test)
        }
        SplitSizes::Fractions { valid, test } => {
            if !(0.0..1.0).contains(&valid) || !(0.0..1.0).contains(&test) || valid + test >= 1.0 {
                return Err(DataError::InfeasibleSplit(format!("fractions valid={valid} test={test}")));
            }
            ((valid * n as f64).round() as usize, (test * n as f64).round() as usize)
        }
    };
    if valid + test > n {
        return Err(DataError::InfeasibleSplit(format!("{valid}+{test} exceeds {n} records")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let train_n = n - valid - test;
    Ok((
        pick(&order[..train_n]),
        pick(&order[train_n..train_n + valid]),
        pick(&order[train_n + valid..]),
    ))
}

/// Record indices for one epoch: shuffled with `seed`, then cut into chunks of `batch_size`.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
