//! Text normalization before scoring.
//!
//! Tables are plain UTF-8 files, one `source<TAB>replacement` pair per line;
//! blank lines and lines starting with `#` are ignored. A table rewrites its
//! input in one left-to-right pass, always taking the longest source that
//! matches at the current position. A [`Normalizer`] applies its tables in
//! the order they were added, e.g. a character-variant table followed by a
//! numeral-verbalization table.

use std::collections::HashMap;
use std::path::Path;

use super::MetricsError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingTable {
    map: HashMap<String, String>,
    max_source_chars: usize,
}

impl MappingTable {
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut table = Self::default();
        for (n, (src, dst)) in pairs.into_iter().enumerate() {
            table.insert(src.into(), dst.into(), n + 1)?;
        }
        Ok(table)
    }

    fn insert(&mut self, src: String, dst: String, line: usize) -> Result<(), MetricsError> {
        if src.is_empty() {
            return Err(MetricsError::MalformedTable {
                line,
                reason: "empty source".into(),
            });
        }
        self.max_source_chars = self.max_source_chars.max(src.chars().count());
        if self.map.insert(src.clone(), dst).is_some() {
            return Err(MetricsError::MalformedTable {
                line,
                reason: format!("duplicate source `{src}`"),
            });
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut table = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, dst) = line.split_once('\t').ok_or_else(|| MetricsError::MalformedTable {
                line: n + 1,
                reason: "expected `source<TAB>replacement`".into(),
            })?;
            if dst.contains('\t') {
                return Err(MetricsError::MalformedTable {
                    line: n + 1,
                    reason: "more than one tab".into(),
                });
            }
            table.insert(src.to_owned(), dst.to_owned(), n + 1)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, input: &str) -> String {
        if self.map.is_empty() {
            return input.to_owned();
        }
        let bounds: Vec<usize> = input
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(input.len()))
            .collect();
        let mut out = String::with_capacity(input.len());
        let mut pos = 0;
        while pos + 1 < bounds.len() {
            let longest = self.max_source_chars.min(bounds.len() - 1 - pos);
            let hit = (1..=longest).rev().find_map(|len| {
                self.map
                    .get(&input[bounds[pos]..bounds[pos + len]])
                    .map(|dst| (len, dst))
            });
            match hit {
                Some((len, dst)) => {
                    out.push_str(dst);
                    pos += len;
                }
                None => {
                    out.push_str(&input[bounds[pos]..bounds[pos + 1]]);
                    pos += 1;
                }
            }
        }
        out
    }
}

/// An ordered chain of mapping tables. Empty chains leave text unchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Normalizer {
    tables: Vec<MappingTable>,
}

impl Normalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_table(mut self, table: MappingTable) -> Self {
        self.tables.push(table);
        self
    }

    pub fn tables(&self) -> &[MappingTable] {
        &self.tables
    }

    pub fn apply(&self, text: &str) -> String {
        self.tables.iter().fold(text.to_owned(), |acc, table| table.apply(&acc))
    }
}
