//! Sequence-level metrics, structure tool output parsing, attention export and sweeps.

mod align;
mod attention;
mod distribution;
mod structure;
mod sweep;

use std::path::Path;

use thiserror::Error;

pub use align::{global_sequence_identity, AlignmentResult, GAP, GAP_CHAR, MATCH, MISMATCH};
pub use attention::{
    condense_cross, export_attention_maps, layer_mean, matrix_from_csv, matrix_to_csv, AttentionManifest, ExportedMap,
    MANIFEST_FILE,
};
pub use distribution::{kl_divergence, kl_divergence_slices, ResidueDistribution, BINS, DEFAULT_SMOOTHING};
pub use structure::{parse_plddt, parse_tmalign_output, plddt_from_pdb, PlddtReport, ResiduePlddt, TmAlignScores};
pub use sweep::{
    cell_seed, evaluate_cell, parameter_sweep, score_generations, sweep_csv, CellMetrics, SweepGrid, SweepPrompt, SweepRow,
};

use crate::generation::{parse_fasta, FastaRecord, GenerationError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("PDB: {0}")]
    Pdb(String),
    #[error("TM-align output: {0}")]
    TmAlign(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// `D_c / (D_c + m)`.
pub fn guidance_reference_curve(c: usize, m: usize) -> f64 {
    c as f64 / (c + m) as f64
}

pub fn read_fasta(path: &Path) -> Result<Vec<FastaRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e.to_string()))?;
    parse_fasta(&text).map_err(|e| EvalError::Parse(format!("{}: {e}", path.display())))
}
