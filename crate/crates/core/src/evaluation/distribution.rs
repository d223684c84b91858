use serde::Serialize;

use super::EvalError;
use crate::tokenizer::RESIDUES;

pub const BINS: usize = RESIDUES.len();
pub const DEFAULT_SMOOTHING: f64 = 1e-8;

/// Residue frequencies in `RESIDUES` order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidueDistribution {
    pub probs: [f64; BINS],
    pub count: u64,
}

impl ResidueDistribution {
    pub fn from_counts(counts: &[u64; BINS]) -> Self {
        let count: u64 = counts.iter().sum();
        let mut probs = [0.0; BINS];
        if count > 0 {
            for (p, &c) in probs.iter_mut().zip(counts) {
                *p = c as f64 / count as f64;
            }
        }
        Self { probs, count }
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a str>) -> Result<Self, EvalError> {
        let mut counts = [0u64; BINS];
        for s in seqs {
            for ch in s.chars() {
                let i = RESIDUES.find(ch).ok_or_else(|| EvalError::InvalidSequence(format!("{ch:?} is not a residue")))?;
                counts[i] += 1;
            }
        }
        Ok(Self::from_counts(&counts))
    }
}

/// `Σ p_i ln(p_i / q_i)` after adding `smoothing` to every bin of both vectors
/// and renormalizing.
pub fn kl_divergence_slices(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64, EvalError> {
    if !(smoothing > 0.0) || !smoothing.is_finite() {
        return Err(EvalError::InvalidArgument(format!("smoothing {smoothing} must be > 0")));
    }
    if p.len() != q.len() || p.is_empty() {
        return Err(EvalError::InvalidArgument(format!("bin counts {} and {} differ", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EvalError::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    let smooth = |v: &[f64]| {
        let total: f64 = v.iter().map(|x| x + smoothing).sum();
        v.iter().map(|x| (x + smoothing) / total).collect::<Vec<f64>>()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    // negative only through rounding
    Ok(kl.max(0.0))
}

pub fn kl_divergence(p: &ResidueDistribution, q: &ResidueDistribution, smoothing: f64) -> Result<f64, EvalError> {
    kl_divergence_slices(&p.probs, &q.probs, smoothing)
}
