use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use protdat::data::{load_records, split_records, write_jsonl, Batch, BatchItem, ProteinRecord, RecordFormat};
use protdat::evaluation::{
    export_attention_maps, global_sequence_identity, guidance_reference_curve, kl_divergence, parameter_sweep,
    parse_tmalign_output, plddt_from_pdb, read_fasta, sweep_csv, ResidueDistribution, SweepGrid, SweepPrompt,
    DEFAULT_SMOOTHING,
};
use protdat::generation::{params_digest, write_fasta, FastaRecord, GenerationParams, Generator, PromptMode, PromptSpec};
use protdat::model::{load_checkpoint, model_forward, save_checkpoint, Checkpoint, Dtype, ModelParams};
use protdat::tokenizer::{encode_sequence, residue_char, special_name, EmbeddingStore, TextProvider, WordVocab};
use protdat::training::{fit, timings_jsonl, Split, TrainLog};

use crate::manifest::Manifest;
use crate::{Command, Common, EvalCommand, ModelFlags, RunConfig, SamplingFlags};

pub const MODEL_FILE: &str = "model.ckpt";
pub const BEST_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

pub fn dispatch(command: Command, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let name = command.name();
    match command {
        Command::PrepareData { common, input, valid_fraction, test_fraction } => {
            let cfg = resolve(&common, |c| {
                set(&mut c.data.valid_fraction, valid_fraction);
                set(&mut c.data.test_fraction, test_fraction);
            })?;
            prepare_data(&cfg, &input, name, argv, stdout)
        }
        Command::Train { common, model, data, valid, embeddings, epochs, batch_size, max_steps, lr, init, dtype } => {
            let cfg = resolve(&common, |c| {
                apply_model(c, &model);
                if data.is_some() {
                    c.data.train = data;
                }
                if valid.is_some() {
                    c.data.valid = valid;
                }
                if embeddings.is_some() {
                    c.data.embeddings = embeddings;
                }
                set(&mut c.train.epochs, epochs);
                set(&mut c.train.batch_size, batch_size);
                if max_steps.is_some() {
                    c.train.max_steps = max_steps;
                }
                set(&mut c.train.optimizer.lr, lr);
            })?;
            let dtype = match dtype.as_str() {
                "f64" => Dtype::F64,
                "f32" => Dtype::F32,
                other => bail!("unknown dtype {other:?}; expected f64 or f32"),
            };
            train(&cfg, init.as_deref(), dtype, name, argv, stdout)
        }
        Command::Generate { common, sampling, checkpoint, text, id, mode, fragment, prompts, fasta, trace } => {
            let cfg = resolve(&common, |c| apply_sampling(c, &sampling))?;
            let mode: PromptMode = mode.parse().map_err(anyhow::Error::msg)?;
            let request = GenerateRequest { checkpoint, text, id, mode, fragment, prompts, fasta, trace };
            generate(&cfg, &request, name, argv, stdout)
        }
        Command::Eval { common, metric } => {
            let cfg = resolve(&common, |_| {})?;
            eval(&cfg, metric, name, argv, stdout)
        }
        Command::Sweep { common, sampling, checkpoint, prompts, mode, top_p_grid, temperature_grid, limit } => {
            let cfg = resolve(&common, |c| apply_sampling(c, &sampling))?;
            let mode: PromptMode = mode.parse().map_err(anyhow::Error::msg)?;
            let standard = SweepGrid::standard();
            let grid = SweepGrid {
                top_p: if top_p_grid.is_empty() { standard.top_p } else { top_p_grid },
                temperature: if temperature_grid.is_empty() { standard.temperature } else { temperature_grid },
            };
            sweep(&cfg, &checkpoint, &prompts, mode, &grid, limit, name, argv, stdout)
        }
        Command::ExportAttention { common, sampling, checkpoint, text, id, sequence, condense } => {
            let cfg = resolve(&common, |c| apply_sampling(c, &sampling))?;
            export_attention(&cfg, &checkpoint, &text, &id, sequence.as_deref(), condense, name, argv, stdout)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Defaults, then the config file, then flags (environment included).
fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.output_dir, common.out_dir.clone());
    apply(&mut cfg);
    Ok(cfg)
}

fn apply_model(cfg: &mut RunConfig, flags: &ModelFlags) {
    let m = &mut cfg.model;
    if let Some(d) = flags.d_model {
        // the word table and feed-forward width follow the hidden width unless set separately
        if m.d_text == m.d_model {
            m.d_text = d;
        }
        if m.ffn_dim == 4 * m.d_model {
            m.ffn_dim = 4 * d;
        }
        m.d_model = d;
    }
    set(&mut m.n_layers, flags.n_layers);
    set(&mut m.n_heads, flags.n_heads);
    set(&mut m.c_size, flags.c_size);
    set(&mut m.ffn_dim, flags.ffn_dim);
}

fn apply_sampling(cfg: &mut RunConfig, flags: &SamplingFlags) {
    let g = &mut cfg.generation;
    set(&mut g.temperature, flags.temperature);
    set(&mut g.top_p, flags.top_p);
    set(&mut g.repetition_penalty, flags.repetition_penalty);
    set(&mut g.max_len, flags.max_len);
    set(&mut g.num_candidates, flags.num_candidates);
    set(&mut g.fragment_len, flags.fragment_len);
    if flags.embeddings.is_some() {
        cfg.data.embeddings = flags.embeddings.clone();
    }
}

fn read_records(path: &Path) -> Result<Vec<ProteinRecord>> {
    let outcome = load_records(path, RecordFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))?;
    Ok(outcome.records)
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes()).context("writing to stdout")
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn prepare_data(cfg: &RunConfig, input: &Path, name: &str, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let outcome = load_records(input, RecordFormat::from_path(input)).with_context(|| format!("loading {}", input.display()))?;
    let (train, valid, test) = split_records(&outcome.records, &cfg.split_spec())?;
    let mut manifest = Manifest::new(name, argv, cfg);
    manifest.input(input)?;
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    for (file, part) in [("train.jsonl", &train), ("valid.jsonl", &valid), ("test.jsonl", &test)] {
        let path = cfg.output_dir.join(file);
        write_jsonl(part, &path)?;
        manifest.output(&path)?;
    }
    manifest.write(&cfg.output_dir)?;
    let summary = json!({
        "rows": outcome.report.rows,
        "invalid": outcome.report.invalid.len(),
        "train": train.len(),
        "valid": valid.len(),
        "test": test.len(),
    });
    emit(stdout, &format!("{summary}\n"))
}

fn text_provider(ck: &Checkpoint, embeddings: Option<&Path>) -> Result<TextProvider> {
    if ck.config.uses_trainable_text() {
        let vocab = ck.vocab.clone().context("checkpoint has a word table but no vocabulary")?;
        return Ok(TextProvider::Trainable(vocab));
    }
    let path = embeddings.context("this model reads precomputed text embeddings; pass --embeddings")?;
    let store = EmbeddingStore::read(path).with_context(|| format!("reading {}", path.display()))?;
    if store.d_text() != ck.config.d_text {
        bail!("embedding width {} does not match the model's d_text {}", store.d_text(), ck.config.d_text);
    }
    Ok(TextProvider::Precomputed(store))
}

fn train(cfg: &RunConfig, init: Option<&Path>, dtype: Dtype, name: &str, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = cfg.clone();
    let mut manifest = Manifest::new(name, argv, &cfg);
    let train_records = match &cfg.data.train {
        Some(p) => {
            manifest.input(p)?;
            read_records(p)?
        }
        None if cfg.train.epochs == 0 => Vec::new(),
        None => bail!("no training data: pass --data or set data.train"),
    };
    let valid_records = match &cfg.data.valid {
        Some(p) => {
            manifest.input(p)?;
            read_records(p)?
        }
        None => Vec::new(),
    };

    let (start, provider, vocab) = if let Some(path) = init {
        manifest.input(path)?;
        let ck = load_checkpoint(path)?;
        let provider = text_provider(&ck, cfg.data.embeddings.as_deref())?;
        cfg.model = ck.config.clone();
        (Some(ck.params), provider, ck.vocab)
    } else if let Some(path) = cfg.data.embeddings.clone() {
        manifest.input(&path)?;
        let store = EmbeddingStore::read(&path).with_context(|| format!("reading {}", path.display()))?;
        cfg.model.d_text = store.d_text();
        cfg.model.text_vocab_size = 0;
        (None, TextProvider::Precomputed(store), None)
    } else {
        let vocab = WordVocab::build(train_records.iter().map(|r| r.text.as_str()));
        cfg.model.text_vocab_size = vocab.len();
        (None, TextProvider::Trainable(vocab.clone()), Some(vocab))
    };
    cfg.model.validate()?;
    manifest.config = cfg.clone();

    let to_items = |records: &[ProteinRecord]| -> Result<Vec<BatchItem>> {
        records.iter().map(|r| BatchItem::from_record(r, &provider).map_err(Into::into)).collect()
    };
    let train_items = to_items(&train_records)?;
    let valid_items = to_items(&valid_records)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut train_cfg = cfg.train_config();
    if !valid_items.is_empty() {
        train_cfg.best_checkpoint = Some(out.join(BEST_FILE));
    }
    let (params, log, timings, best) = if train_items.is_empty() {
        let params = start.unwrap_or_else(|| ModelParams::init(&cfg.model, cfg.seed));
        (params, TrainLog::new(cfg.seed, cfg.model.clone(), train_cfg.clone()), Vec::new(), None)
    } else {
        let outcome = fit(&train_items, &valid_items, &cfg.model, &train_cfg, start, vocab.as_ref())?;
        (outcome.params, outcome.log, outcome.timings, outcome.best.map(|(loss, _)| loss))
    };

    let ck = Checkpoint { config: cfg.model.clone(), params, vocab };
    let model_path = out.join(MODEL_FILE);
    save_checkpoint(&ck, &model_path, dtype)?;
    manifest.output(&model_path)?;
    if best.is_some() {
        manifest.output(&out.join(BEST_FILE))?;
    }
    let log_path = out.join(LOG_FILE);
    log.write(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    manifest.output(&log_path)?;
    write_file(&out.join(TIMINGS_FILE), timings_jsonl(&timings))?;
    manifest.write(&out)?;

    let summary = json!({
        "steps": log.losses(Split::Train).len(),
        "final_train_loss": log.losses(Split::Train).last(),
        "best_valid_loss": best,
        "parameters": ck.params.count(),
        "checkpoint": model_path.display().to_string(),
    });
    emit(stdout, &format!("{summary}\n"))
}

struct GenerateRequest {
    checkpoint: PathBuf,
    text: Option<String>,
    id: String,
    mode: PromptMode,
    fragment: Option<String>,
    prompts: Option<PathBuf>,
    fasta: Option<PathBuf>,
    trace: Option<PathBuf>,
}

fn record_prompt(r: &ProteinRecord, mode: PromptMode, fragment_len: usize) -> PromptSpec {
    match mode {
        PromptMode::TextOnly => PromptSpec::text_only(&r.id, &r.text),
        PromptMode::TextAndFragment => {
            let fragment: String = r.sequence.chars().take(fragment_len).collect();
            PromptSpec::with_fragment(&r.id, &r.text, &fragment)
        }
    }
}

fn token_label(id: usize) -> String {
    residue_char(id).map(String::from).or_else(|| special_name(id).map(String::from)).unwrap_or_else(|| id.to_string())
}

/// `<id>` for a single candidate, `<id>/c<k>` otherwise, followed by the settings that produced it.
pub fn fasta_header(id: &str, k: usize, gp: &GenerationParams, mode: PromptMode, len: usize, stop: &str) -> String {
    let name = if gp.num_candidates == 1 { id.to_string() } else { format!("{id}/c{k}") };
    format!(
        "{name} mode={} seed={} params={} length={len} stop={stop}",
        mode.as_str(),
        gp.seed.wrapping_add(k as u64),
        params_digest(gp)
    )
}

fn generate(cfg: &RunConfig, req: &GenerateRequest, name: &str, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let mut manifest = Manifest::new(name, argv, cfg);
    manifest.input(&req.checkpoint)?;
    let ck = load_checkpoint(&req.checkpoint)?;
    let provider = text_provider(&ck, cfg.data.embeddings.as_deref())?;
    let gp = cfg.generation_params();
    gp.validate(&ck.config)?;

    let prompts: Vec<PromptSpec> = if let Some(path) = &req.prompts {
        manifest.input(path)?;
        read_records(path)?.iter().map(|r| record_prompt(r, req.mode, cfg.generation.fragment_len)).collect()
    } else {
        let text = req.text.as_deref().context("pass --text or --prompts")?;
        match req.mode {
            PromptMode::TextOnly => vec![PromptSpec::text_only(&req.id, text)],
            PromptMode::TextAndFragment => {
                let fragment = req.fragment.as_deref().context("text+fragment mode needs --fragment")?;
                vec![PromptSpec::with_fragment(&req.id, text, fragment)]
            }
        }
    };

    let generator = Generator { config: &ck.config, params: &ck.params, text: &provider };
    let mut records = Vec::new();
    let mut trace = String::new();
    for prompt in &prompts {
        for (k, g) in generator.generate_candidates(prompt, &gp)?.into_iter().enumerate() {
            let stop = serde_json::to_value(g.stop)?.as_str().unwrap_or_default().to_string();
            for s in &g.trace {
                let line = json!({
                    "id": prompt.id,
                    "candidate": k,
                    "step": s.step,
                    "token": s.token,
                    "label": token_label(s.token),
                    "nucleus": s.nucleus,
                    "penalized_logit": s.penalized_logit,
                    "probability": s.probability,
                });
                trace.push_str(&format!("{line}\n"));
            }
            records.push(FastaRecord {
                header: fasta_header(&prompt.id, k, &gp, prompt.mode, g.sequence.len(), &stop),
                sequence: g.sequence,
            });
        }
    }
    let fasta = write_fasta(&records);
    match &req.fasta {
        Some(path) => {
            write_file(path, &fasta)?;
            manifest.output(path)?;
        }
        None => emit(stdout, &fasta)?,
    }
    if let Some(path) = &req.trace {
        write_file(path, &trace)?;
        manifest.output(path)?;
    }
    manifest.write(&cfg.output_dir)?;
    Ok(())
}

/// Strips a `/c<k>` candidate suffix.
fn base_id(id: &str) -> &str {
    match id.rsplit_once("/c") {
        Some((base, k)) if !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()) => base,
        _ => id,
    }
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing csv")?)?)
}

/// Identity table rows for generated records paired with references.
pub fn identity_rows(refs: &[FastaRecord], gens: &[FastaRecord], by_position: bool) -> Result<Vec<Vec<String>>> {
    let pairs: Vec<(&FastaRecord, &FastaRecord)> = if by_position {
        if refs.len() != gens.len() {
            bail!("{} references but {} generated records", refs.len(), gens.len());
        }
        gens.iter().zip(refs).collect()
    } else {
        let index: HashMap<&str, &FastaRecord> = refs.iter().map(|r| (r.id(), r)).collect();
        gens.iter()
            .map(|g| {
                let r = index.get(base_id(g.id())).with_context(|| format!("no reference with id {:?}", base_id(g.id())))?;
                Ok((g, *r))
            })
            .collect::<Result<_>>()?
    };
    pairs
        .into_iter()
        .map(|(g, r)| {
            let a = global_sequence_identity(&g.sequence, &r.sequence).with_context(|| format!("aligning {}", g.id()))?;
            Ok(vec![
                g.id().to_string(),
                r.id().to_string(),
                a.identity.to_string(),
                a.score.to_string(),
                a.matches.to_string(),
                a.len().to_string(),
            ])
        })
        .collect()
}

fn eval(cfg: &RunConfig, metric: EvalCommand, name: &str, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let mut manifest = Manifest::new(name, argv, cfg);
    let (file, table) = match metric {
        EvalCommand::Identity { reference, gen, by_position } => {
            manifest.input(&reference)?;
            manifest.input(&gen)?;
            let rows = identity_rows(&read_fasta(&reference)?, &read_fasta(&gen)?, by_position)?;
            ("identity.csv", csv_table(&["gen_id", "ref_id", "identity", "score", "matches", "alignment_length"], &rows)?)
        }
        EvalCommand::Kl { reference, gen } => {
            manifest.input(&reference)?;
            manifest.input(&gen)?;
            let refs = read_fasta(&reference)?;
            let gens = read_fasta(&gen)?;
            let p = ResidueDistribution::from_sequences(refs.iter().map(|r| r.sequence.as_str()))?;
            let q = ResidueDistribution::from_sequences(gens.iter().map(|r| r.sequence.as_str()))?;
            let kl = kl_divergence(&p, &q, DEFAULT_SMOOTHING)?;
            let row = vec![p.count.to_string(), q.count.to_string(), kl.to_string()];
            ("kl.csv", csv_table(&["ref_residues", "gen_residues", "kl"], &[row])?)
        }
        EvalCommand::Plddt { pdb } => {
            let mut rows = Vec::new();
            for path in &pdb {
                manifest.input(path)?;
                let r = plddt_from_pdb(path)?;
                rows.push(vec![path.display().to_string(), r.residues.len().to_string(), r.mean.to_string(), r.skipped.to_string()]);
            }
            ("plddt.csv", csv_table(&["file", "residues", "mean_plddt", "skipped_lines"], &rows)?)
        }
        EvalCommand::Tmalign { reports } => {
            let mut rows = Vec::new();
            for path in &reports {
                manifest.input(path)?;
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let s = parse_tmalign_output(&text).with_context(|| path.display().to_string())?;
                rows.push(vec![path.display().to_string(), s.tm_score.to_string(), s.rmsd.to_string()]);
            }
            ("tmalign.csv", csv_table(&["file", "tm_score", "rmsd"], &rows)?)
        }
        EvalCommand::Guidance { c, m } => {
            if c == 0 {
                bail!("c must be at least 1");
            }
            let rows: Vec<Vec<String>> =
                m.iter().map(|&m| vec![c.to_string(), m.to_string(), guidance_reference_curve(c, m).to_string()]).collect();
            ("guidance.csv", csv_table(&["c", "m", "value"], &rows)?)
        }
    };
    let path = cfg.output_dir.join(file);
    write_file(&path, &table)?;
    manifest.output(&path)?;
    manifest.write(&cfg.output_dir)?;
    emit(stdout, &table)
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    cfg: &RunConfig,
    checkpoint: &Path,
    prompts: &Path,
    mode: PromptMode,
    grid: &SweepGrid,
    limit: Option<usize>,
    name: &str,
    argv: &[String],
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut manifest = Manifest::new(name, argv, cfg);
    manifest.input(checkpoint)?;
    manifest.input(prompts)?;
    let ck = load_checkpoint(checkpoint)?;
    let provider = text_provider(&ck, cfg.data.embeddings.as_deref())?;
    let records = read_records(prompts)?;
    let take = limit.unwrap_or(records.len());
    let set: Vec<SweepPrompt> = records
        .iter()
        .take(take)
        .map(|r| SweepPrompt { prompt: record_prompt(r, mode, cfg.generation.fragment_len), reference: r.sequence.clone() })
        .collect();
    let generator = Generator { config: &ck.config, params: &ck.params, text: &provider };
    let rows = parameter_sweep(&generator, &set, grid, &cfg.generation_params())?;
    let table = sweep_csv(&rows);
    let path = cfg.output_dir.join("sweep.csv");
    write_file(&path, &table)?;
    manifest.output(&path)?;
    manifest.write(&cfg.output_dir)?;
    emit(stdout, &table)
}

#[allow(clippy::too_many_arguments)]
fn export_attention(
    cfg: &RunConfig,
    checkpoint: &Path,
    text: &str,
    id: &str,
    sequence: Option<&str>,
    condense: bool,
    name: &str,
    argv: &[String],
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut manifest = Manifest::new(name, argv, cfg);
    manifest.input(checkpoint)?;
    let ck = load_checkpoint(checkpoint)?;
    let provider = text_provider(&ck, cfg.data.embeddings.as_deref())?;
    let sequence = match sequence {
        Some(s) => s.to_string(),
        None => {
            let generator = Generator { config: &ck.config, params: &ck.params, text: &provider };
            let gp = GenerationParams { num_candidates: 1, ..cfg.generation_params() };
            generator.generate(&PromptSpec::text_only(id, text), &gp)?.sequence
        }
    };
    let item = BatchItem { id: id.to_string(), tokens: encode_sequence(&sequence, true, false)?, text: provider.features(id, text)? };
    let batch = Batch::for_inference(&[item], ck.config.c_size)?;
    let out = model_forward(&batch, &ck.params, &ck.config, true)?;
    let trace = out.traces.and_then(|t| t.into_iter().next()).context("forward pass returned no trace")?;
    let dir = cfg.output_dir.join("attention");
    let exported = export_attention_maps(&trace, condense, &dir)?;
    for m in &exported.maps {
        manifest.output(&dir.join(&m.file))?;
    }
    manifest.write(&cfg.output_dir)?;
    let summary = json!({ "sequence": sequence, "maps": exported.maps.len(), "dir": dir.display().to_string() });
    emit(stdout, &format!("{summary}\n"))
}
