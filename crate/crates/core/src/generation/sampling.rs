use rand::Rng;

use super::GenerationError;
use crate::tokenizer::TokenId;

/// CTRL-style penalty: logits of tokens in `history` are divided by `penalty`
/// when positive and multiplied by it when negative.
pub fn apply_repetition_penalty(logits: &[f64], history: &[TokenId], penalty: f64) -> Result<Vec<f64>, GenerationError> {
    if !(penalty >= 1.0) || !penalty.is_finite() {
        return Err(GenerationError::InvalidParams(format!("repetition penalty {penalty} must be a finite value >= 1")));
    }
    let mut out = logits.to_vec();
    let mut seen = vec![false; logits.len()];
    for &t in history {
        if t < out.len() && !seen[t] {
            seen[t] = true;
            out[t] = if out[t] > 0.0 { out[t] / penalty } else { out[t] * penalty };
        }
    }
    Ok(out)
}

fn check_distribution(probs: &[f64]) -> Result<(), GenerationError> {
    if probs.is_empty() {
        return Err(GenerationError::InvalidDistribution("empty".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(GenerationError::InvalidDistribution(format!("entry {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(GenerationError::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// Ids sorted by descending probability, ties by ascending id, cut at the
/// shortest prefix whose mass reaches `top_p`.
pub fn nucleus(probs: &[f64], top_p: f64) -> Result<Vec<TokenId>, GenerationError> {
    check_distribution(probs)?;
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(GenerationError::InvalidParams(format!("top_p {top_p} outside (0, 1]")));
    }
    let mut order: Vec<TokenId> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &id in &order {
        mass += probs[id];
        keep += 1;
        // a little slack so top_p = 1 keeps nothing beyond the support despite rounding
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    order.truncate(keep);
    Ok(order)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NucleusDraw {
    pub token: TokenId,
    /// The kept prefix, most probable first.
    pub nucleus: Vec<TokenId>,
}

/// Draws from `probs` restricted to its top-`top_p` nucleus and renormalized.
pub fn nucleus_sample<R: Rng + ?Sized>(probs: &[f64], top_p: f64, rng: &mut R) -> Result<NucleusDraw, GenerationError> {
    let kept = nucleus(probs, top_p)?;
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    let mut token = *kept.last().expect("nucleus is non-empty");
    for &id in &kept {
        acc += probs[id];
        if u < acc {
            token = id;
            break;
        }
    }
    Ok(NucleusDraw { token, nucleus: kept })
}
