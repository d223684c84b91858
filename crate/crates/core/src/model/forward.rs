use std::rc::Rc;

use super::{DecoderLayer, FeedForward, Linear, ModelConfig, ModelError, ModelParams, ModelWeights, Norm, Tensors};
use crate::data::{Batch, PaddedText, RecordMasks};
use crate::numerics::{attention, AttentionMask, Matrix, Tape, Var, LAYER_NORM_EPS};

/// The three residual streams of one record.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    /// `S × d`
    pub seq: Var,
    /// `c_size × d`
    pub cross: Var,
    /// `T × d`
    pub text: Var,
}

/// Head-averaged attention weights of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Text self-attention, `T × T`.
    pub ptm: Matrix,
    /// Cross slots over text, `c_size × T`.
    pub cim: Matrix,
    /// Sequence over `[cross | sequence]`, `S × (c_size + S)`.
    pub cca: Matrix,
}

/// Attention weights of one record, one entry per layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<LayerTrace>,
}

/// Positions used for rotary embeddings.
#[derive(Clone, Debug)]
pub struct Positions {
    pub seq: Vec<usize>,
    pub text: Vec<usize>,
}

impl Positions {
    pub fn new(seq_len: usize, text_len: usize) -> Self {
        Self { seq: (0..seq_len).collect(), text: (0..text_len).collect() }
    }
}

/// Records every parameter as a leaf on `tape`.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> ModelWeights<Var> {
    params.map(|_, m| tape.leaf(m.clone()))
}

fn linear(tape: &mut Tape, x: Var, l: &Linear<Var>) -> Var {
    let y = tape.matmul(x, l.weight);
    tape.add_row(y, l.bias)
}

fn norm(tape: &mut Tape, x: Var, n: &Norm<Var>) -> Var {
    tape.layer_norm(x, n.gain, n.bias, LAYER_NORM_EPS)
}

fn feed_forward(tape: &mut Tape, x: Var, f: &FeedForward<Var>) -> Var {
    let h = norm(tape, x, &f.norm);
    let h = linear(tape, h, &f.up);
    let h = tape.gelu(h);
    let h = linear(tape, h, &f.down);
    tape.add(x, h)
}

fn head_mean(tape: &Tape, weights: &[Var]) -> Matrix {
    let mut acc = tape.value(weights[0]).clone();
    for &w in &weights[1..] {
        acc.add_assign(tape.value(w));
    }
    acc.scale_assign(1.0 / weights.len() as f64);
    acc
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<(), ModelError> {
    if got != want {
        return Err(ModelError::Shape(format!("{what} is {got:?}, expected {want:?}")));
    }
    Ok(())
}

fn check_mask(what: &str, mask: &Rc<AttentionMask>, want: (usize, usize)) -> Result<(), ModelError> {
    check_shape(what, mask.shape(), want)
}

/// The multi-modal cross-attention block on already-normalized inputs.
///
/// Returns the branch outputs before the residual add:
/// text self-attention, cross slots attending to the (unrotated) text keys and
/// values, and the sequence attending over `[K_c ; K_s]`, `[V_c ; V_s]` where
/// `K_c`, `V_c` are projections of the cross output.
pub fn mcm_forward(
    tape: &mut Tape,
    layer: &DecoderLayer<Var>,
    n_heads: usize,
    inputs: Streams,
    masks: &RecordMasks,
    positions: &Positions,
    trace: bool,
) -> Result<(Streams, Option<LayerTrace>), ModelError> {
    let (s, d) = tape.value(inputs.seq).shape();
    let c = tape.value(inputs.cross).rows();
    let t = tape.value(inputs.text).rows();
    check_shape("cross stream", tape.value(inputs.cross).shape(), (c, d))?;
    check_shape("text stream", tape.value(inputs.text).shape(), (t, d))?;
    check_shape("sequence projection", tape.value(layer.seq_q.weight).shape(), (d, d))?;
    check_mask("text mask", &masks.ptm, (t, t))?;
    check_mask("cross mask", &masks.cim, (c, t))?;
    check_mask("sequence mask", &masks.psm, (s, c + s))?;
    if positions.seq.len() != s || positions.text.len() != t {
        return Err(ModelError::Shape(format!(
            "{} sequence / {} text positions for {s} / {t} rows",
            positions.seq.len(),
            positions.text.len()
        )));
    }
    let head_dim = d / n_heads;

    let qt = linear(tape, inputs.text, &layer.text_q);
    let kt = linear(tape, inputs.text, &layer.text_k);
    let vt = linear(tape, inputs.text, &layer.text_v);
    let qt_rot = tape.rope(qt, &positions.text, head_dim);
    let kt_rot = tape.rope(kt, &positions.text, head_dim);
    let ptm = attention(tape, qt_rot, kt_rot, vt, &masks.ptm, n_heads)?;
    let text_out = linear(tape, ptm.output, &layer.text_out);

    let qc = linear(tape, inputs.cross, &layer.cross_q);
    let cim = attention(tape, qc, kt, vt, &masks.cim, n_heads)?;
    let cross_out = linear(tape, cim.output, &layer.cross_out);
    let kc = linear(tape, cross_out, &layer.cross_key);
    let vc = linear(tape, cross_out, &layer.cross_value);

    let qs = linear(tape, inputs.seq, &layer.seq_q);
    let ks = linear(tape, inputs.seq, &layer.seq_k);
    let vs = linear(tape, inputs.seq, &layer.seq_v);
    let qs = tape.rope(qs, &positions.seq, head_dim);
    let ks = tape.rope(ks, &positions.seq, head_dim);
    let keys = tape.concat_rows(&[kc, ks]);
    let values = tape.concat_rows(&[vc, vs]);
    let cca = attention(tape, qs, keys, values, &masks.psm, n_heads)?;
    let seq_out = linear(tape, cca.output, &layer.seq_out);

    let layer_trace = trace.then(|| LayerTrace {
        ptm: head_mean(tape, &ptm.weights),
        cim: head_mean(tape, &cim.weights),
        cca: head_mean(tape, &cca.weights),
    });
    Ok((Streams { seq: seq_out, cross: cross_out, text: text_out }, layer_trace))
}

/// One pre-norm decoder layer: `x + MCM(norm(x))`, then `x + FFN(norm(x))` per branch.
pub fn decoder_layer_forward(
    tape: &mut Tape,
    layer: &DecoderLayer<Var>,
    n_heads: usize,
    streams: Streams,
    masks: &RecordMasks,
    positions: &Positions,
    trace: bool,
) -> Result<(Streams, Option<LayerTrace>), ModelError> {
    let normed = Streams {
        seq: norm(tape, streams.seq, &layer.seq_norm),
        cross: norm(tape, streams.cross, &layer.cross_norm),
        text: norm(tape, streams.text, &layer.text_norm),
    };
    let (mcm, layer_trace) = mcm_forward(tape, layer, n_heads, normed, masks, positions, trace)?;
    let seq = tape.add(streams.seq, mcm.seq);
    let cross = tape.add(streams.cross, mcm.cross);
    let text = tape.add(streams.text, mcm.text);
    let out = Streams {
        seq: feed_forward(tape, seq, &layer.seq_ffn),
        cross: feed_forward(tape, cross, &layer.cross_ffn),
        text: feed_forward(tape, text, &layer.text_ffn),
    };
    Ok((out, layer_trace))
}

/// Rejects batches that do not fit `config`.
pub fn validate_batch(config: &ModelConfig, batch: &Batch) -> Result<(), ModelError> {
    let fail = |m: String| Err(ModelError::Batch(m));
    if batch.is_empty() {
        return fail("empty batch".into());
    }
    if batch.seq_len() > config.max_seq {
        return fail(format!("sequence length {} exceeds max_seq {}", batch.seq_len(), config.max_seq));
    }
    if batch.text_len() > config.max_text {
        return fail(format!("text length {} exceeds max_text {}", batch.text_len(), config.max_text));
    }
    if batch.c_size() != config.c_size {
        return fail(format!("batch has {} cross slots, model expects {}", batch.c_size(), config.c_size));
    }
    if batch.seq_ids.iter().flatten().chain(&batch.cross_ids).any(|&id| id >= config.vocab_size) {
        return fail("token id outside the vocabulary".into());
    }
    for text in &batch.text {
        match text {
            PaddedText::Words(w) if config.uses_trainable_text() => {
                if w.iter().flatten().any(|&i| i >= config.text_vocab_size) {
                    return fail("word id outside the text table".into());
                }
            }
            PaddedText::Dense(m) if !config.uses_trainable_text() => {
                if m.cols() != config.d_text {
                    return fail(format!("text embeddings have width {}, model expects {}", m.cols(), config.d_text));
                }
            }
            _ => return fail("text features do not match the model's text path".into()),
        }
    }
    Ok(())
}

/// Forward pass of every record on `tape`. Returns `S × vocab` logits per record.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelWeights<Var>,
    config: &ModelConfig,
    batch: &Batch,
    trace: bool,
) -> Result<(Vec<Var>, Option<Vec<AttentionTrace>>), ModelError> {
    validate_batch(config, batch)?;
    let cross_ids: Vec<Option<usize>> = batch.cross_ids.iter().map(|&i| Some(i)).collect();
    let positions = Positions::new(batch.seq_len(), batch.text_len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut traces = trace.then(Vec::new);
    for r in 0..batch.len() {
        let seq_ids: Vec<Option<usize>> = batch.seq_ids[r].iter().map(|&i| Some(i)).collect();
        let seq = tape.gather(params.token_embedding, &seq_ids);
        let cross = tape.gather(params.token_embedding, &cross_ids);
        let text = match (&batch.text[r], params.text_table) {
            (PaddedText::Words(ids), Some(table)) => tape.gather(table, ids),
            (PaddedText::Dense(m), _) => tape.leaf(m.clone()),
            (PaddedText::Words(_), None) => return Err(ModelError::Batch("model has no word table".into())),
        };
        let text = match &params.text_projection {
            Some(p) => linear(tape, text, p),
            None => text,
        };
        let mut streams = Streams { seq, cross, text };
        let mut record_trace = AttentionTrace::default();
        for layer in &params.layers {
            let (next, lt) = decoder_layer_forward(tape, layer, config.n_heads, streams, &batch.masks[r], &positions, trace)?;
            streams = next;
            record_trace.layers.extend(lt);
        }
        let h = norm(tape, streams.seq, &params.final_norm);
        logits.push(linear(tape, h, &params.head));
        if let Some(t) = traces.as_mut() {
            t.push(record_trace);
        }
    }
    Ok((logits, traces))
}

/// Output of [`model_forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `S_max × vocab` raw logits per record.
    pub logits: Vec<Matrix>,
    pub traces: Option<Vec<AttentionTrace>>,
}

/// Inference forward pass on a private tape.
pub fn model_forward(
    batch: &Batch,
    params: &ModelParams,
    config: &ModelConfig,
    trace: bool,
) -> Result<ForwardOutput, ModelError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let (logits, traces) = forward_on_tape(&mut tape, &bound, config, batch, trace)?;
    Ok(ForwardOutput { logits: logits.iter().map(|&l| tape.value(l).clone()).collect(), traces })
}
