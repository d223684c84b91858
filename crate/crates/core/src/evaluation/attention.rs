use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{AttentionTrace, LayerTrace};
use crate::numerics::Matrix;

/// Sums the first `c_size` columns of a `S × (c_size + S)` map into one,
/// giving `S × (1 + S)`.
pub fn condense_cross(cca: &Matrix, c_size: usize) -> Matrix {
    let (s, cols) = cca.shape();
    assert!(c_size <= cols, "c_size {c_size} exceeds {cols} columns");
    let mut out = Matrix::zeros(s, cols - c_size + 1);
    for r in 0..s {
        let row = cca.row(r);
        let o = out.row_mut(r);
        o[0] = row[..c_size].iter().sum();
        o[1..].copy_from_slice(&row[c_size..]);
    }
    out
}

/// Element-wise mean over layers.
pub fn layer_mean(trace: &AttentionTrace) -> Option<LayerTrace> {
    let first = trace.layers.first()?;
    let mut acc = first.clone();
    for l in &trace.layers[1..] {
        acc.ptm.add_assign(&l.ptm);
        acc.cim.add_assign(&l.cim);
        acc.cca.add_assign(&l.cca);
    }
    let k = 1.0 / trace.layers.len() as f64;
    acc.ptm.scale_assign(k);
    acc.cim.scale_assign(k);
    acc.cca.scale_assign(k);
    Some(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedMap {
    pub file: String,
    /// Layer index, or `"mean"` for the all-layer average.
    pub layer: String,
    /// `ptm`, `cim`, `cca` or `cca_condensed`.
    pub branch: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionManifest {
    pub c_size: usize,
    pub layers: usize,
    /// Every map is head-averaged.
    pub head_reduction: String,
    pub maps: Vec<ExportedMap>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix, EvalError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| EvalError::Parse(format!("row {}: {e}", i + 1))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(EvalError::Parse("ragged rows".into()));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Writes head-averaged PTM, CIM and CCA maps per layer plus their all-layer
/// mean, one CSV each, and a manifest. With `condense_cross` the condensed CCA
/// is written alongside the raw one.
pub fn export_attention_maps(trace: &AttentionTrace, condense: bool, out: &Path) -> Result<AttentionManifest, EvalError> {
    let io = |p: &Path, e: std::io::Error| EvalError::Io(p.display().to_string(), e.to_string());
    let c_size = trace.layers.first().map_or(0, |l| l.cim.rows());
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut maps = Vec::new();
    let mut write = |layer: &str, branch: &str, m: &Matrix| -> Result<(), EvalError> {
        let file = format!("layer_{layer}_{branch}.csv");
        let path: PathBuf = out.join(&file);
        fs::write(&path, matrix_to_csv(m)).map_err(|e| io(&path, e))?;
        maps.push(ExportedMap { file, layer: layer.into(), branch: branch.into(), rows: m.rows(), cols: m.cols() });
        Ok(())
    };
    let mean = layer_mean(trace);
    let labelled = trace.layers.iter().enumerate().map(|(i, l)| (i.to_string(), l)).chain(mean.iter().map(|m| ("mean".to_string(), m)));
    for (label, l) in labelled {
        write(&label, "ptm", &l.ptm)?;
        write(&label, "cim", &l.cim)?;
        write(&label, "cca", &l.cca)?;
        if condense {
            write(&label, "cca_condensed", &condense_cross(&l.cca, c_size))?;
        }
    }
    let manifest = AttentionManifest { c_size, layers: trace.layers.len(), head_reduction: "mean".into(), maps };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
    Ok(manifest)
}
