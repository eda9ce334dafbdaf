//! Prediction-basis accuracy.
//!
//! A basis entry at (1-based) position `i` that shares the query's
//! intra-class contributes `2^-i`, so a perfect basis of length `k` scores
//! `1 - 2^-k`. A basis shorter than `k` is scored over the positions it has.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::atlas::{Atlas, AtlasEntry};
use crate::encoder::PerceptualCode;
use crate::error::{PerceptError, Result};
use crate::meta::INTRA_KEY;
use crate::retrieval::{QueryOptions, Searcher};

pub fn p_acc<S: AsRef<str>>(query_intra: &str, basis_intras: &[S]) -> f64 {
    basis_intras
        .iter()
        .enumerate()
        .filter(|(_, tag)| tag.as_ref() == query_intra)
        .map(|(i, _)| 0.5f64.powi(i as i32 + 1))
        .sum()
}

/// Best achievable score for a basis of length `k`.
pub fn p_acc_max(k: usize) -> f64 {
    1.0 - 0.5f64.powi(k as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single query.
    pub std: f64,
    pub k: usize,
    pub weighted: bool,
    pub class_label: String,
    pub atlas_size: usize,
}

impl EvalReport {
    fn from_scores(per_query: Vec<(String, f64)>, k: usize, weighted: bool, atlas: &Atlas) -> Self {
        let n = per_query.len();
        let mean = if n == 0 {
            0.0
        } else {
            per_query.iter().map(|(_, p)| p).sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = per_query.iter().map(|(_, p)| (p - mean) * (p - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Self {
            per_query,
            mean,
            std,
            k,
            weighted,
            class_label: atlas.class_label.clone(),
            atlas_size: atlas.len(),
        }
    }

    /// Tab-separated report: `#` provenance lines, then one row per query.
    pub fn to_tsv(&self, provenance: &[(String, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# class={}", self.class_label);
        let _ = writeln!(s, "# atlas_size={}", self.atlas_size);
        let _ = writeln!(s, "# k={}", self.k);
        let _ = writeln!(s, "# weighted={}", self.weighted);
        for (k, v) in provenance {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "# queries={}", self.per_query.len());
        let _ = writeln!(s, "# mean={:.6}", self.mean);
        let _ = writeln!(s, "# std={:.6}", self.std);
        s.push_str("query_id\tp_acc\n");
        for (id, p) in &self.per_query {
            let _ = writeln!(s, "{id}\t{p:.6}");
        }
        s
    }
}

/// Scores every test code against the atlas; each query excludes an atlas
/// entry with its own sample id.
pub fn evaluate<F>(
    atlas: &Atlas,
    test_codes: &[PerceptualCode],
    intra_of: F,
    options: QueryOptions,
) -> Result<EvalReport>
where
    F: Fn(&str) -> Option<String> + Sync,
{
    let intra = |id: &str| {
        intra_of(id).ok_or_else(|| PerceptError::Metadata(format!("no intra-class tag for sample `{id}`")))
    };
    let atlas_tags = atlas
        .entries
        .iter()
        .map(|e| match e.metadata.get(INTRA_KEY) {
            Some(t) => Ok(t.clone()),
            None => intra(e.sample_id()),
        })
        .collect::<Result<Vec<_>>>()?;
    let tags_by_id: HashMap<&str, &str> = atlas
        .entries
        .iter()
        .map(AtlasEntry::sample_id)
        .zip(atlas_tags.iter().map(String::as_str))
        .collect();

    let searcher = Searcher::new(atlas, options.exclude_self(true))?;
    let per_query = test_codes
        .par_iter()
        .map(|code| {
            let own = intra(&code.sample_id)?;
            let basis = searcher.query(code)?;
            let tags: Vec<&str> = basis.neighbors.iter().map(|n| tags_by_id[n.sample_id.as_str()]).collect();
            Ok((code.sample_id.clone(), p_acc(&own, &tags)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(per_query, options.k, options.weighted, atlas))
}
