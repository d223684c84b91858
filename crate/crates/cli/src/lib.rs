//! Command-line driver: every subcommand resolves a [`RunConfig`], runs one
//! library pipeline and writes a manifest next to its outputs.

mod commands;
pub mod config;
mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use manifest::{Manifest, MANIFEST_PREFIX};

#[derive(Debug, Parser)]
#[command(name = "protdat", version, about = "Text-conditioned protein sequence generation")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out-dir", env = OUTPUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub c_size: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SamplingFlags {
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub repetition_penalty: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub num_candidates: Option<usize>,
    /// Residues taken from each reference sequence as the fragment in text+fragment mode.
    #[arg(long)]
    pub fragment_len: Option<usize>,
    /// Precomputed text embeddings for models without a word table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw pairs and write seeded train/valid/test splits.
    PrepareData {
        #[command(flatten)]
        common: Common,
        /// Raw records: `.jsonl`, or `.tsv` with `sequence<TAB>description`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        valid_fraction: Option<f64>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train a model and write checkpoints and the loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Training records.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Validation records.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from this checkpoint; its model settings win.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint element type: f64 (exact) or f32.
        #[arg(long, default_value = "f64")]
        dtype: String,
    },
    /// Generate sequences as FASTA.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: SamplingFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Description prompt.
        #[arg(long)]
        text: Option<String>,
        /// Record id for the prompt (keys precomputed embeddings).
        #[arg(long, default_value = "prompt")]
        id: String,
        /// text-only or text+fragment.
        #[arg(long, default_value = "text-only")]
        mode: String,
        /// Leading residues for text+fragment mode.
        #[arg(long)]
        fragment: Option<String>,
        /// Records file; one prompt per record.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// FASTA output file instead of stdout.
        #[arg(long)]
        fasta: Option<PathBuf>,
        /// Per-step decoding trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sequence and structure metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Generate over a top_p × temperature grid and tabulate metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: SamplingFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records whose texts are prompts and whose sequences are references.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, default_value = "text-only")]
        mode: String,
        /// Comma-separated values; defaults to 0.55,0.7,0.85,1.
        #[arg(long, value_delimiter = ',')]
        top_p_grid: Vec<f64>,
        /// Comma-separated values; defaults to 0.4,0.6,...,1.4.
        #[arg(long, value_delimiter = ',')]
        temperature_grid: Vec<f64>,
        /// Use at most this many prompts.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Trace one sequence through the model and write attention maps as CSV.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampling: SamplingFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "prompt")]
        id: String,
        /// Sequence to trace; generated from the text when absent.
        #[arg(long)]
        sequence: Option<String>,
        /// Also write CCA maps with the cross columns summed into one.
        #[arg(long)]
        condense: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Global sequence identity per generated/reference pair.
    Identity {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// Pair records by position instead of by id.
        #[arg(long)]
        by_position: bool,
    },
    /// KL divergence between pooled residue distributions, KL(ref ‖ gen).
    Kl {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// Mean CA B-factor per PDB file.
    Plddt {
        #[arg(required = true)]
        pdb: Vec<PathBuf>,
    },
    /// TM-score and RMSD from saved TM-align reports.
    Tmalign {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// c / (c + m) for each m.
    Guidance {
        #[arg(long, default_value_t = 50)]
        c: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PrepareData { .. } => "prepare-data",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::ExportAttention { .. } => "export-attention",
        }
    }
}

/// Parses `argv` (program name first), runs the command, and returns the exit
/// status: 0 on success, 2 on usage errors, 1 on any other failure.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let name = cli.command.name();
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, &args, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let message = format!("{e:#}");
            let line = serde_json::json!({ "command": name, "error": message });
            eprintln!("{line}");
            1
        }
    }
}
