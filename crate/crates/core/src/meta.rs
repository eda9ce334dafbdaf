//! Per-sample metadata tables (`meta.tsv`).
//!
//! One sample per line: the sample id, then any number of tab-separated
//! `key=value` pairs. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{PerceptError, Result};

/// Key holding a sample's intra-class tag.
pub const INTRA_KEY: &str = "intra";
pub const CLASS_KEY: &str = "class";

pub type Attributes = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleMetadata {
    rows: BTreeMap<String, Attributes>,
}

impl SampleMetadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, key: impl Into<String>, value: impl Into<String>) {
        self.rows
            .entry(sample_id.into())
            .or_default()
            .insert(key.into(), value.into());
    }

    pub fn get(&self, sample_id: &str) -> Option<&Attributes> {
        self.rows.get(sample_id)
    }

    pub fn value(&self, sample_id: &str, key: &str) -> Option<&str> {
        self.rows.get(sample_id)?.get(key).map(String::as_str)
    }

    pub fn intra(&self, sample_id: &str) -> Option<&str> {
        self.value(sample_id, INTRA_KEY)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Attributes)> {
        self.rows.iter()
    }

    /// Merges `other` into `self`; later values win per key.
    pub fn extend(&mut self, other: SampleMetadata) {
        for (id, attrs) in other.rows {
            self.rows.entry(id).or_default().extend(attrs);
        }
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().trim();
            if id.is_empty() {
                return Err(PerceptError::Metadata(format!("line {}: empty sample id", lineno + 1)));
            }
            let attrs = out.rows.entry(id.to_string()).or_default();
            for field in fields.filter(|f| !f.is_empty()) {
                let (k, v) = field.split_once('=').ok_or_else(|| {
                    PerceptError::Metadata(format!(
                        "line {}: field `{field}` is not key=value",
                        lineno + 1
                    ))
                })?;
                attrs.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, attrs) in &self.rows {
            s.push_str(id);
            for (k, v) in attrs {
                let _ = write!(s, "\t{k}={v}");
            }
            s.push('\n');
        }
        s
    }
}
