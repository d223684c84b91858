use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    model: ModelConfig,
    train: TrainConfig,
}

/// Loss history plus the settings that produced it.
///
/// The jsonl form holds no wall-clock data, so identical runs give identical
/// files; timings travel separately.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn new(seed: u64, model: ModelConfig, train: TrainConfig) -> Self {
        Self { seed, model, train, entries: Vec::new() }
    }

    pub fn push(&mut self, entry: LogEntry) {
        debug_assert!(self.entries.last().map_or(true, |e| e.step <= entry.step), "steps are monotone");
        self.entries.push(entry);
    }

    pub fn losses(&self, split: Split) -> Vec<f64> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.loss).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header { seed: self.seed, model: self.model.clone(), train: self.train.clone() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or("empty log")?;
        let header: Header = serde_json::from_str(first).map_err(|e| format!("line 1: {e}"))?;
        let mut log = TrainLog::new(header.seed, header.model, header.train);
        for (i, line) in lines {
            let e: LogEntry = serde_json::from_str(line).map_err(|err| format!("line {}: {err}", i + 1))?;
            if log.entries.last().is_some_and(|last| e.step < last.step) {
                return Err(format!("line {}: step {} goes backwards", i + 1, e.step));
            }
            log.entries.push(e);
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

/// Wall-clock sidecar: one `{"entry": i, "seconds": t}` line per log entry.
pub fn timings_jsonl(timings: &[f64]) -> String {
    timings
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}\n", serde_json::json!({"entry": i, "seconds": t})))
        .collect()
}
