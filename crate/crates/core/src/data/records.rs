use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::tokenizer::{encode_sequence, validate_residues};

/// Annotation headers, in the order sections are stored.
pub const SECTION_HEADERS: [&str; 3] = ["FUNCTION:", "SUBCELLULAR LOCATION:", "SIMILARITY:"];

/// One description/sequence pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProteinRecord {
    pub id: String,
    pub text: String,
    pub sequence: String,
}

impl ProteinRecord {
    /// Validates and normalizes a raw pair.
    pub fn new(id: &str, text: &str, sequence: &str) -> Result<Self, String> {
        if id.trim().is_empty() {
            return Err("empty id".into());
        }
        if sequence.is_empty() {
            return Err("empty sequence".into());
        }
        validate_residues(sequence).map_err(|e| e.to_string())?;
        encode_sequence(sequence, true, true).map_err(|e| e.to_string())?;
        let sections = TextSections::parse(text);
        if sections.is_empty() {
            return Err(format!("text has none of the headers {}", SECTION_HEADERS.join(", ")));
        }
        Ok(Self { id: id.trim().to_string(), text: sections.canonical(), sequence: sequence.to_string() })
    }
}

/// A description split into its annotation sections.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TextSections {
    /// Text before the first header, kept verbatim.
    pub preamble: String,
    /// Bodies per header in [`SECTION_HEADERS`] order; repeated headers are joined.
    pub bodies: [Option<String>; 3],
}

impl TextSections {
    pub fn parse(text: &str) -> Self {
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for (k, h) in SECTION_HEADERS.iter().enumerate() {
            hits.extend(text.match_indices(h).map(|(pos, _)| (pos, k)));
        }
        hits.sort_unstable();
        let mut out = TextSections::default();
        let first = hits.first().map_or(text.len(), |h| h.0);
        out.preamble = text[..first].trim().to_string();
        for (i, &(pos, k)) in hits.iter().enumerate() {
            let start = pos + SECTION_HEADERS[k].len();
            let end = hits.get(i + 1).map_or(text.len(), |h| h.0);
            let body = text[start..end].trim();
            match &mut out.bodies[k] {
                Some(existing) if !body.is_empty() => {
                    existing.push(' ');
                    existing.push_str(body);
                }
                Some(_) => {}
                slot @ None => *slot = Some(body.to_string()),
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.iter().all(Option::is_none)
    }

    pub fn get(&self, header: &str) -> Option<&str> {
        SECTION_HEADERS.iter().position(|h| *h == header).and_then(|k| self.bodies[k].as_deref())
    }

    /// Sections joined in FUNCTION, SUBCELLULAR LOCATION, SIMILARITY order.
    pub fn canonical(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if !self.preamble.is_empty() {
            parts.push(self.preamble.clone());
        }
        for (k, body) in self.bodies.iter().enumerate() {
            if let Some(b) = body {
                parts.push(if b.is_empty() { SECTION_HEADERS[k].to_string() } else { format!("{} {b}", SECTION_HEADERS[k]) });
            }
        }
        parts.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    /// One JSON object per line with `id`, `text` and `sequence`.
    Jsonl,
    /// Tab-separated `sequence<TAB>description`; ids are assigned from line numbers.
    Table,
}

impl RecordFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") | Some("txt") => RecordFormat::Table,
            _ => RecordFormat::Jsonl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// Per-line ingestion problems.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub invalid: Vec<RowError>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} of {} rows invalid", self.invalid.len(), self.rows)?;
        for e in &self.invalid {
            writeln!(f, "line {}: {}", e.line, e.message)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LoadOutcome {
    pub records: Vec<ProteinRecord>,
    pub report: LoadReport,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    sequence: String,
}

/// Parses `input`; invalid rows are reported, and more than 10% invalid rejects the whole input.
pub fn parse_records(input: &str, format: RecordFormat) -> Result<LoadOutcome, DataError> {
    let mut records = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (idx, raw_line) in input.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            RecordFormat::Jsonl => serde_json::from_str::<RawRecord>(raw_line)
                .map_err(|e| format!("bad json: {e}"))
                .and_then(|r| ProteinRecord::new(&r.id, &r.text, &r.sequence)),
            RecordFormat::Table => {
                let Some((seq, text)) = raw_line.split_once('\t') else {
                    report.rows += 1;
                    report.invalid.push(RowError { line, message: "expected `sequence<TAB>description`".into() });
                    continue;
                };
                if line == 1 && seq.trim().eq_ignore_ascii_case("protein sequence") {
                    continue;
                }
                let seq: String = seq.chars().filter(|c| !c.is_whitespace()).collect();
                ProteinRecord::new(&format!("row{line}"), text, &seq)
            }
        };
        report.rows += 1;
        match parsed {
            Ok(r) if !seen.insert(r.id.clone()) => {
                report.invalid.push(RowError { line, message: format!("duplicate id {:?}", r.id) })
            }
            Ok(r) => records.push(r),
            Err(message) => report.invalid.push(RowError { line, message }),
        }
    }
    if report.invalid.len() * 10 > report.rows {
        return Err(DataError::TooManyInvalid(report));
    }
    for e in &report.invalid {
        log::warn!("line {}: {}", e.line, e.message);
    }
    Ok(LoadOutcome { records, report })
}

pub fn load_records(path: &Path, format: RecordFormat) -> Result<LoadOutcome, DataError> {
    let input = std::fs::read_to_string(path).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    parse_records(&input, format)
}

pub fn write_jsonl(records: &[ProteinRecord], path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MGF100_SEQ: &str = "MGNRLIRSYLPNTVMSIEDKQNKYNE TIEDSKICNKVYIKQSGKIDKQELTRIK KLGFFYSQKSDHEIERMLFSMPNGTFL LTDDATNENIFIVQKDLENGSLNIAKLE FKGKALYINGKDYYSLENYLKTFFEDFY KYPLIYNKNK";
    const MGF100_TEXT: &str = "FUNCTION: Plays a role in virus cell tropism, and may be required for efficient virus replication in macrophages. SIMILARITY: Belongs to the asfivirus MGF 100 family.";

    fn jsonl_row(id: &str, text: &str, seq: &str) -> String {
        serde_json::json!({"id": id, "text": text, "sequence": seq}).to_string()
    }

    #[test]
    fn loads_three_row_jsonl() {
        let input = [
            jsonl_row("a", "FUNCTION: x.", "MAV"),
            jsonl_row("b", "SIMILARITY: y.", "MKV"),
            jsonl_row("c", "SUBCELLULAR LOCATION: Cytoplasm.", "MG"),
        ]
        .join("\n");
        let out = parse_records(&input, RecordFormat::Jsonl).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.records[1].id, "b");
        assert!(out.report.invalid.is_empty());
    }

    #[test]
    fn digit_in_sequence_is_rejected() {
        assert!(ProteinRecord::new("x", "FUNCTION: a", "MAV1").unwrap_err().contains("position 3"));
        assert!(ProteinRecord::new("x", "no headers here", "MAV").is_err());
        assert!(ProteinRecord::new("x", "FUNCTION: a", "").is_err());
    }

    #[test]
    fn table_row_keeps_sections_intact() {
        let input = format!("Protein Sequence\tProtein Description\n{MGF100_SEQ}\t{MGF100_TEXT}\n");
        let out = parse_records(&input, RecordFormat::Table).unwrap();
        let r = &out.records[0];
        assert_eq!(r.id, "row2");
        assert_eq!(r.text, MGF100_TEXT);
        assert!(r.sequence.starts_with("MGNRLIRSYLPNTVMSIEDKQNKYNETIEDSK"));
        let s = TextSections::parse(&r.text);
        assert_eq!(s.get("SIMILARITY:"), Some("Belongs to the asfivirus MGF 100 family."));
        assert_eq!(s.get("SUBCELLULAR LOCATION:"), None);
    }

    #[test]
    fn sections_are_reordered_canonically() {
        let s = TextSections::parse("SIMILARITY: Belongs to X. FUNCTION: Does Y. SUBCELLULAR LOCATION: Secreted.");
        assert_eq!(s.canonical(), "FUNCTION: Does Y. SUBCELLULAR LOCATION: Secreted. SIMILARITY: Belongs to X.");
    }

    #[test]
    fn invalid_rows_reported_by_line() {
        let mut rows: Vec<String> = (0..20).map(|i| jsonl_row(&format!("r{i}"), "FUNCTION: f", "MAV")).collect();
        rows[4] = jsonl_row("bad", "FUNCTION: f", "MAV1");
        let out = parse_records(&rows.join("\n"), RecordFormat::Jsonl).unwrap();
        assert_eq!(out.records.len(), 19);
        assert_eq!(out.report.invalid[0].line, 5);
        rows[7] = "{not json".into();
        rows[9] = jsonl_row("r0", "FUNCTION: f", "MAV");
        let err = parse_records(&rows.join("\n"), RecordFormat::Jsonl).unwrap_err();
        let DataError::TooManyInvalid(report) = err else { panic!("expected rejection") };
        assert_eq!(report.invalid.iter().map(|e| e.line).collect::<Vec<_>>(), vec![5, 8, 10]);
        assert!(report.to_string().contains("line 10: duplicate id"));
    }
}
