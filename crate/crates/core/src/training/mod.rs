//! Next-token training: loss, AdamW steps, the epoch loop and its log.

mod history;
mod optim;

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use history::{timings_jsonl, LogEntry, Split, TrainLog};
pub use optim::{global_norm, AdamWConfig, OptimizerState};

use crate::data::{epoch_batches, Batch, BatchItem, DataError};
use crate::model::{bind, forward_on_tape, save_checkpoint, Checkpoint, Dtype, ModelConfig, ModelError, ModelParams, Tensors};
use crate::numerics::{Matrix, Tape, Var};
use crate::tokenizer::WordVocab;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at step {step}; state left unchanged")]
    NonFinite { what: &'static str, step: u64 },
    #[error("validation loss is not finite after epoch {epoch}: {loss}")]
    ValidationNonFinite { epoch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("batch has no target positions")]
    NoTargets,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Records the mean next-token loss of `batch` on `tape`.
///
/// Only the sequence branch enters the loss; padded targets are ignored.
pub fn sequence_loss(
    tape: &mut Tape,
    params: &crate::model::ModelWeights<Var>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Var, TrainError> {
    if batch.target_count() == 0 {
        return Err(TrainError::NoTargets);
    }
    let (logits, _) = forward_on_tape(tape, params, config, batch, false)?;
    let all = tape.concat_rows(&logits);
    Ok(tape.cross_entropy(all, &batch.targets.concat()))
}

/// Loss and per-tensor gradients in parameter traversal order.
pub fn loss_and_gradients(params: &ModelParams, config: &ModelConfig, batch: &Batch) -> Result<(f64, Vec<Matrix>), TrainError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let loss = sequence_loss(&mut tape, &bound, config, batch)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss);
    Ok((value, bound.to_flat().into_iter().map(|v| grads.take(v)).collect()))
}

/// Loss without gradients.
pub fn batch_loss(params: &ModelParams, config: &ModelConfig, batch: &Batch) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let loss = sequence_loss(&mut tape, &bound, config, batch)?;
    Ok(tape.value(loss).get(0, 0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
}

/// One optimizer step. On a non-finite loss or gradient nothing is modified.
pub fn training_step(
    batch: &Batch,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    config: &ModelConfig,
) -> Result<StepReport, TrainError> {
    let (loss, mut grads) = loss_and_gradients(params, config, batch)?;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { what: "loss", step: opt.step + 1 });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite { what: "gradient", step: opt.step + 1 });
    }
    let grad_norm = opt.clip(&mut grads);
    opt.apply_to_model(params, &grads);
    Ok(StepReport { loss, grad_norm })
}

/// Token-weighted mean loss over `items` in chunks of `batch_size`.
pub fn evaluate(params: &ModelParams, config: &ModelConfig, items: &[BatchItem], batch_size: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in items.chunks(batch_size.max(1)) {
        let batch = Batch::for_training(chunk, config.c_size)?;
        let n = batch.target_count();
        total += batch_loss(params, config, &batch)? * n as f64;
        count += n;
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Written whenever the validation loss improves. Not part of the logged settings.
    #[serde(skip)]
    pub best_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, batch_size: 10, max_steps: None, seed: 0, optimizer: AdamWConfig::default(), best_checkpoint: None }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    /// Parameters at the lowest validation loss, with that loss.
    pub best: Option<(f64, ModelParams)>,
    /// Wall-clock seconds since the start of `fit`, one per log entry.
    pub timings: Vec<f64>,
}

/// Derived stream for epoch shuffling; initialization uses the root seed itself.
const SHUFFLE_STREAM: u64 = 0x5eed_0001;

/// Trains from `init` (or fresh parameters seeded by `train.seed`).
pub fn fit(
    train_set: &[BatchItem],
    valid_set: &[BatchItem],
    model: &ModelConfig,
    train: &TrainConfig,
    init: Option<ModelParams>,
    vocab: Option<&WordVocab>,
) -> Result<FitOutcome, TrainError> {
    model.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if train.best_checkpoint.is_some() && model.uses_trainable_text() && vocab.map(WordVocab::len) != Some(model.text_vocab_size) {
        return Err(ModelError::Config("checkpointing a trainable text path needs its vocabulary".into()).into());
    }
    let started = Instant::now();
    let mut params = init.unwrap_or_else(|| ModelParams::init(model, train.seed));
    let mut opt = OptimizerState::for_model(train.optimizer.clone(), model);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ SHUFFLE_STREAM);
    let mut history = TrainLog::new(train.seed, model.clone(), train.clone());
    let mut timings = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step = 0usize;

    'epochs: for epoch in 0..train.epochs {
        for idx in epoch_batches(train_set.len(), train.batch_size, &mut rng) {
            if train.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let items: Vec<BatchItem> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let batch = Batch::for_training(&items, model.c_size)?;
            let report = training_step(&batch, &mut params, &mut opt, model)?;
            step += 1;
            history.push(LogEntry { step, epoch, split: Split::Train, loss: report.loss });
            timings.push(started.elapsed().as_secs_f64());
            log::debug!("step {step} epoch {epoch} loss {:.6} grad_norm {:.4}", report.loss, report.grad_norm);
        }
        if !valid_set.is_empty() {
            let loss = evaluate(&params, model, valid_set, train.batch_size)?;
            if !loss.is_finite() {
                return Err(TrainError::ValidationNonFinite { epoch, loss });
            }
            history.push(LogEntry { step, epoch, split: Split::Valid, loss });
            timings.push(started.elapsed().as_secs_f64());
            log::info!("epoch {epoch} step {step} validation loss {loss:.6}");
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                if let Some(path) = &train.best_checkpoint {
                    let ck = Checkpoint { config: model.clone(), params: params.clone(), vocab: vocab.cloned() };
                    save_checkpoint(&ck, path, Dtype::F64)?;
                }
                best = Some((loss, params.clone()));
            }
        }
        if train.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    Ok(FitOutcome { params, log: history, best, timings })
}
