use std::path::Path;

use regex::Regex;
use serde::Serialize;

use super::EvalError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResiduePlddt {
    pub chain: char,
    pub res_seq: i32,
    pub insertion: char,
    pub res_name: String,
    pub plddt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlddtReport {
    pub residues: Vec<ResiduePlddt>,
    /// Unweighted mean over residues.
    pub mean: f64,
    /// ATOM lines that could not be parsed.
    pub skipped: usize,
}

/// 1-based inclusive PDB column range.
fn columns(line: &str, from: usize, to: usize) -> Option<&str> {
    line.get(from - 1..to.min(line.len()))
}

fn parse_atom(line: &str) -> Option<(String, ResiduePlddt)> {
    if line.len() < 66 || !line.is_char_boundary(66) {
        return None;
    }
    let name = columns(line, 13, 16)?.trim().to_string();
    let res_name = columns(line, 18, 20)?.trim().to_string();
    let chain = columns(line, 22, 22)?.chars().next()?;
    let res_seq = columns(line, 23, 26)?.trim().parse().ok()?;
    let insertion = columns(line, 27, 27)?.chars().next()?;
    let plddt: f64 = columns(line, 61, 66)?.trim().parse().ok()?;
    plddt.is_finite().then_some((name, ResiduePlddt { chain, res_seq, insertion, res_name, plddt }))
}

/// Per-residue confidence read from the B-factor of each residue's CA atom.
/// Only the first model is read; alternate CA locations after the first are ignored.
pub fn parse_plddt(text: &str) -> Result<PlddtReport, EvalError> {
    let mut residues: Vec<ResiduePlddt> = Vec::new();
    let mut skipped = 0;
    for (n, line) in text.lines().enumerate() {
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        let Some((name, res)) = parse_atom(line) else {
            log::warn!("line {}: malformed ATOM record skipped", n + 1);
            skipped += 1;
            continue;
        };
        if name != "CA" {
            continue;
        }
        let repeat = residues.last().is_some_and(|r| {
            r.chain == res.chain && r.res_seq == res.res_seq && r.insertion == res.insertion
        });
        if !repeat {
            residues.push(res);
        }
    }
    if residues.is_empty() {
        return Err(EvalError::Pdb("no CA atoms in ATOM records".into()));
    }
    let mean = residues.iter().map(|r| r.plddt).sum::<f64>() / residues.len() as f64;
    Ok(PlddtReport { residues, mean, skipped })
}

pub fn plddt_from_pdb(path: &Path) -> Result<PlddtReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e.to_string()))?;
    parse_plddt(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TmAlignScores {
    pub tm_score: f64,
    pub rmsd: f64,
}

/// Reads TM-score and RMSD from TM-align's report. When several TM-scores are
/// listed, the one normalized by Chain_2 (the reference) is taken.
pub fn parse_tmalign_output(text: &str) -> Result<TmAlignScores, EvalError> {
    let rmsd_re = Regex::new(r"RMSD=\s*([0-9]*\.?[0-9]+)").expect("valid regex");
    let tm_re = Regex::new(r"TM-score=\s*([0-9]*\.?[0-9]+)(.*)").expect("valid regex");
    let rmsd = rmsd_re
        .captures(text)
        .and_then(|c| c[1].parse::<f64>().ok())
        .ok_or_else(|| EvalError::TmAlign("no RMSD= field".into()))?;
    let mut first = None;
    let mut reference = None;
    for line in text.lines() {
        let Some(c) = tm_re.captures(line) else { continue };
        let Ok(v) = c[1].parse::<f64>() else { continue };
        first.get_or_insert(v);
        if reference.is_none() && c[2].contains("Chain_2") {
            reference = Some(v);
        }
    }
    let tm_score = reference.or(first).ok_or_else(|| EvalError::TmAlign("no TM-score= field".into()))?;
    Ok(TmAlignScores { tm_score, rmsd })
}
