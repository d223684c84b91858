use sha2::{Digest, Sha256};

use super::GenerationParams;

/// Line width for sequence lines.
const WRAP: usize = 60;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FastaRecord {
    /// Header text after `>`.
    pub header: String,
    pub sequence: String,
}

impl FastaRecord {
    /// First whitespace-separated header field.
    pub fn id(&self) -> &str {
        self.header.split_whitespace().next().unwrap_or("")
    }
}

/// First 12 hex digits of the SHA-256 of the parameters' JSON form.
pub fn params_digest(gp: &GenerationParams) -> String {
    let json = serde_json::to_string(gp).expect("params serialize");
    let hash = Sha256::digest(json.as_bytes());
    hash.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn write_fasta(records: &[FastaRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push('>');
        out.push_str(&r.header);
        out.push('\n');
        let chars: Vec<char> = r.sequence.chars().collect();
        for line in chars.chunks(WRAP) {
            out.extend(line);
            out.push('\n');
        }
        if chars.is_empty() {
            out.push('\n');
        }
    }
    out
}

/// Parses FASTA text. Sequence lines are concatenated with whitespace removed.
pub fn parse_fasta(text: &str) -> Result<Vec<FastaRecord>, String> {
    let mut out: Vec<FastaRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(h) = line.strip_prefix('>') {
            out.push(FastaRecord { header: h.trim().to_string(), sequence: String::new() });
        } else if line.trim().is_empty() || line.starts_with(';') {
            continue;
        } else {
            let rec = out.last_mut().ok_or_else(|| format!("line {}: sequence data before the first header", i + 1))?;
            rec.sequence.extend(line.chars().filter(|c| !c.is_whitespace()));
        }
    }
    Ok(out)
}
