use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Veracity annotation. Class index: `True` → 0, `Fake` → 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    True,
    Fake,
}

impl Label {
    pub const CLASSES: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Label::True => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::True),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::True => "true",
            Label::Fake => "fake",
        }
    }
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub event: String,
    pub text: String,
    pub label: Option<Label>,
}

/// Parsed corpus plus the 1-based numbers of the lines that were skipped.
#[derive(Debug, Clone, Default)]
pub struct CorpusLoad {
    pub records: Vec<TweetRecord>,
    pub malformed_lines: Vec<usize>,
}

/// Share of malformed lines above which loading fails.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

fn parse_line(line: &str) -> Option<TweetRecord> {
    let record: TweetRecord = serde_json::from_str(line).ok()?;
    (!record.id.is_empty() && !record.event.is_empty()).then_some(record)
}

/// Parses JSON-lines text: one `{"id", "event", "text", "label"}` object per
/// line, `label` being `"fake"`, `"true"` or `null`. Blank lines are ignored.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<CorpusLoad> {
    let mut load = CorpusLoad::default();
    let mut lines = 0usize;
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match parse_line(line) {
            Some(r) => load.records.push(r),
            None => load.malformed_lines.push(no + 1),
        }
    }
    if lines == 0 {
        warn!("corpus {} is empty", origin.display());
        return Ok(load);
    }
    if !load.malformed_lines.is_empty() {
        let fraction = load.malformed_lines.len() as f64 / lines as f64;
        if fraction > MAX_MALFORMED_FRACTION {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: load.malformed_lines[0],
                message: format!(
                    "{} of {lines} lines are malformed (limit {:.0}%)",
                    load.malformed_lines.len(),
                    MAX_MALFORMED_FRACTION * 100.0
                ),
            });
        }
        warn!(
            "skipped {} malformed line(s) in {} (first: line {})",
            load.malformed_lines.len(),
            origin.display(),
            load.malformed_lines[0]
        );
    }
    Ok(load)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

/// Serializes records in the format [`load_corpus`] reads.
pub fn write_corpus(path: impl AsRef<Path>, records: &[TweetRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
