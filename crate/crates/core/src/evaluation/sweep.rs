use serde::Serialize;

use super::{global_sequence_identity, kl_divergence, EvalError, ResidueDistribution, DEFAULT_SMOOTHING};
use crate::generation::{GenerationParams, Generator, PromptSpec};

/// A prompt and the natural sequence its generations are compared with.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPrompt {
    pub prompt: PromptSpec,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub top_p: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl SweepGrid {
    /// top_p 0.55..=1.0 step 0.15 by temperature 0.4..=1.4 step 0.2.
    pub fn standard() -> Self {
        Self {
            top_p: (0..4).map(|i| (55 + 15 * i) as f64 / 100.0).collect(),
            temperature: (0..6).map(|i| (4 + 2 * i) as f64 / 10.0).collect(),
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.top_p.iter().flat_map(|&p| self.temperature.iter().map(move |&t| (p, t))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellMetrics {
    /// Mean over generations of KL(reference residues ‖ generated residues).
    pub mean_kl: f64,
    /// KL between the pooled reference and pooled generated residue distributions.
    pub pooled_kl: f64,
    /// Mean global identity to the reference; an empty generation counts as 0.
    pub mean_identity: f64,
    pub mean_length: f64,
    pub generations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: CellMetrics,
}

/// Seed of grid cell `index` derived from the root seed.
pub fn cell_seed(root: u64, index: usize) -> u64 {
    root ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Metrics for generated sequences paired with their references.
pub fn score_generations(pairs: &[(String, String)]) -> Result<CellMetrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidArgument("no generations to score".into()));
    }
    let mut kl = 0.0;
    let mut identity = 0.0;
    let mut length = 0.0;
    for (generated, reference) in pairs {
        let p = ResidueDistribution::from_sequences([reference.as_str()])?;
        let q = ResidueDistribution::from_sequences([generated.as_str()])?;
        kl += kl_divergence(&p, &q, DEFAULT_SMOOTHING)?;
        if !generated.is_empty() {
            identity += global_sequence_identity(generated, reference)?.identity;
        }
        length += generated.len() as f64;
    }
    let p = ResidueDistribution::from_sequences(pairs.iter().map(|(_, r)| r.as_str()))?;
    let q = ResidueDistribution::from_sequences(pairs.iter().map(|(g, _)| g.as_str()))?;
    let n = pairs.len() as f64;
    Ok(CellMetrics {
        mean_kl: kl / n,
        pooled_kl: kl_divergence(&p, &q, DEFAULT_SMOOTHING)?,
        mean_identity: identity / n,
        mean_length: length / n,
        generations: pairs.len(),
    })
}

/// Generates for every prompt with `gp` (prompt `i` seeded `gp.seed + i`) and scores the results.
pub fn evaluate_cell(generator: &Generator, prompts: &[SweepPrompt], gp: &GenerationParams) -> Result<CellMetrics, EvalError> {
    let mut pairs = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let params = GenerationParams { seed: gp.seed.wrapping_add(i as u64), ..gp.clone() };
        for g in generator.generate_candidates(&p.prompt, &params)? {
            pairs.push((g.sequence, p.reference.clone()));
        }
    }
    score_generations(&pairs)
}

/// One row per `(top_p, temperature)` cell in grid order.
pub fn parameter_sweep(
    generator: &Generator,
    prompts: &[SweepPrompt],
    grid: &SweepGrid,
    defaults: &GenerationParams,
) -> Result<Vec<SweepRow>, EvalError> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(EvalError::InvalidArgument("empty sweep grid".into()));
    }
    if prompts.is_empty() {
        return Err(EvalError::InvalidArgument("empty prompt set".into()));
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(i, (top_p, temperature))| {
            let seed = cell_seed(defaults.seed, i);
            let gp = GenerationParams { top_p, temperature, seed, ..defaults.clone() };
            log::info!("sweep cell {i}: top_p {top_p} temperature {temperature}");
            Ok(SweepRow { top_p, temperature, seed, metrics: evaluate_cell(generator, prompts, &gp)? })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("top_p,temperature,seed,mean_kl,pooled_kl,mean_identity,mean_length,generations\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.top_p, r.temperature, r.seed, m.mean_kl, m.pooled_kl, m.mean_identity, m.mean_length, m.generations
        ));
    }
    out
}
