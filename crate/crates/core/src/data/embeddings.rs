use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Frozen word vectors of a common width. Unknown words map to zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Adds `word` unless it is already present; returns whether it was added.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector of length {} in a table of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        let word = word.into();
        if self.vectors.contains_key(&word) {
            return Ok(false);
        }
        self.vectors.insert(word, vector);
        Ok(true)
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> Vec<&str> {
        let mut w: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        w.sort_unstable();
        w
    }

    /// Text form readable by [`load_embeddings`], with header.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for w in self.words() {
            out.push_str(w);
            for v in &self.vectors[w] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn is_header(fields: &[&str]) -> Option<(usize, usize)> {
    match fields {
        [n, d] => Some((n.parse().ok()?, d.parse().ok()?)),
        _ => None,
    }
}

/// Parses word2vec-style text: an optional `vocab_size dim` header, then one
/// `word v1 … vD` line per word. The first occurrence of a word wins.
pub fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingTable> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut dim: Option<usize> = None;
    let mut entries: Vec<(usize, String, Vec<f64>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if entries.is_empty() && dim.is_none() {
            if let Some((_, d)) = is_header(&fields) {
                if d == 0 {
                    return Err(err(no, "header declares dimension 0".into()));
                }
                dim = Some(d);
                continue;
            }
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(no, format!("bad vector component: {e}")))?;
        let expected = *dim.get_or_insert(values.len());
        if values.is_empty() || values.len() != expected {
            return Err(err(
                no,
                format!("vector for `{}` has {} components, expected {expected}", fields[0], values.len()),
            ));
        }
        entries.push((no, fields[0].to_string(), values));
    }
    let dim = dim.ok_or_else(|| err(0, "no embedding vectors found".into()))?;
    let mut table = EmbeddingTable::new(dim);
    for (no, word, vector) in entries {
        if !table.insert(word.clone(), vector)? {
            warn!("{}:{no}: duplicate word `{word}` ignored", origin.display());
        }
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}
