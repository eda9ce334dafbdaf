//! Exact Hamming-distance k-NN over an atlas.
//!
//! The scan is exhaustive. Entries are split into shards that are scanned in
//! parallel; each shard keeps its own top-k and the shards are merged. Ties
//! are broken by ascending sample id.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::atlas::Atlas;
use crate::config::WeightTransform;
use crate::encoder::PerceptualCode;
use crate::error::{PerceptError, Result};
use crate::meta::Attributes;

const SHARD: usize = 1024;

/// `popcount(a XOR b)`.
pub fn hamming(a: &PerceptualCode, b: &PerceptualCode) -> Result<u32> {
    a.check_compatible(b)?;
    Ok(a.bits.xor_count(&b.bits))
}

/// `Σ weights[i]·(a_i XOR b_i)`.
pub fn weighted_hamming(a: &PerceptualCode, b: &PerceptualCode, weights: &[f64]) -> Result<f64> {
    a.check_compatible(b)?;
    if weights.len() != a.len() {
        return Err(PerceptError::Dimension {
            expected: a.len(),
            got: weights.len(),
        });
    }
    Ok(a.bits.xor_weighted(&b.bits, weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub sample_id: String,
    pub distance: f64,
    pub metadata: Attributes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
    pub weighted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    pub k: usize,
    pub weighted: bool,
    pub weight_transform: WeightTransform,
    /// Skip atlas entries whose sample id equals the query's.
    pub exclude_self: bool,
}

impl QueryOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            weighted: false,
            weight_transform: WeightTransform::Identity,
            exclude_self: false,
        }
    }

    pub fn weighted(mut self, transform: WeightTransform) -> Self {
        self.weighted = true;
        self.weight_transform = transform;
        self
    }

    pub fn exclude_self(mut self, yes: bool) -> Self {
        self.exclude_self = yes;
        self
    }
}

/// An atlas prepared for repeated queries: the transformed bit weights are
/// computed once.
pub struct Searcher<'a> {
    atlas: &'a Atlas,
    options: QueryOptions,
    weights: Option<Vec<f64>>,
}

#[derive(Clone, Copy)]
struct Candidate {
    distance: f64,
    index: usize,
}

impl<'a> Searcher<'a> {
    pub fn new(atlas: &'a Atlas, options: QueryOptions) -> Result<Self> {
        if options.k == 0 {
            return Err(PerceptError::Parameter("k must be at least 1".into()));
        }
        let weights = options.weighted.then(|| {
            atlas
                .weights
                .iter()
                .map(|&w| options.weight_transform.apply(w, atlas.len()))
                .collect()
        });
        Ok(Self { atlas, options, weights })
    }

    pub fn atlas(&self) -> &Atlas {
        self.atlas
    }

    fn order(&self, a: &Candidate, b: &Candidate) -> Ordering {
        a.distance.total_cmp(&b.distance).then_with(|| {
            self.atlas.entries[a.index]
                .sample_id()
                .cmp(self.atlas.entries[b.index].sample_id())
        })
    }

    fn top_k(&self, mut c: Vec<Candidate>) -> Vec<Candidate> {
        let k = self.options.k;
        if c.len() > k {
            c.select_nth_unstable_by(k - 1, |a, b| self.order(a, b));
            c.truncate(k);
        }
        c.sort_by(|a, b| self.order(a, b));
        c
    }

    pub fn query(&self, code: &PerceptualCode) -> Result<QueryResult> {
        self.atlas.check_compatible(code)?;
        let entries = &self.atlas.entries;
        let shards: Vec<Vec<Candidate>> = entries
            .par_chunks(SHARD)
            .enumerate()
            .map(|(s, chunk)| {
                let candidates = chunk
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| !(self.options.exclude_self && e.sample_id() == code.sample_id))
                    .map(|(i, e)| Candidate {
                        distance: match &self.weights {
                            Some(w) => code.bits.xor_weighted(&e.code.bits, w),
                            None => f64::from(code.bits.xor_count(&e.code.bits)),
                        },
                        index: s * SHARD + i,
                    })
                    .collect();
                self.top_k(candidates)
            })
            .collect();
        let merged = self.top_k(shards.into_iter().flatten().collect());
        Ok(QueryResult {
            query_id: code.sample_id.clone(),
            weighted: self.options.weighted,
            neighbors: merged
                .into_iter()
                .map(|c| {
                    let e = &entries[c.index];
                    Neighbor {
                        sample_id: e.sample_id().to_string(),
                        distance: c.distance,
                        metadata: e.metadata.clone(),
                    }
                })
                .collect(),
        })
    }
}

/// The `k` atlas entries closest to `code`.
pub fn query(atlas: &Atlas, code: &PerceptualCode, options: QueryOptions) -> Result<QueryResult> {
    Searcher::new(atlas, options)?.query(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::build_atlas;
    use crate::bits::PackedBits;
    use crate::meta::SampleMetadata;
    use proptest::prelude::*;

    fn code(id: &str, bits: &str) -> PerceptualCode {
        let b: Vec<bool> = bits.chars().map(|c| c == '1').collect();
        PerceptualCode {
            bits: PackedBits::from_bools(&b),
            class_label: "c".into(),
            sample_id: id.into(),
        }
    }

    #[test]
    fn small_distances() {
        assert_eq!(hamming(&code("a", "1010"), &code("b", "1001")).unwrap(), 2);
        assert_eq!(hamming(&code("a", "1010"), &code("a", "1010")).unwrap(), 0);
        let w = [2.0, 0.0, 1.0, 1.0];
        assert_eq!(weighted_hamming(&code("a", "1010"), &code("b", "1001"), &w).unwrap(), 2.0);
        assert_eq!(weighted_hamming(&code("a", "1010"), &code("b", "0101"), &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(weighted_hamming(&code("a", "1010"), &code("b", "0101"), &[1.0; 4]).unwrap(), 4.0);
    }

    #[test]
    fn incompatible_codes() {
        let mut other = code("b", "1001");
        other.class_label = "d".into();
        let err = hamming(&code("a", "1010"), &other).unwrap_err().to_string();
        assert!(err.contains("`c`") && err.contains("`d`"), "{err}");
        assert!(hamming(&code("a", "1010"), &code("b", "10")).is_err());
        assert!(weighted_hamming(&code("a", "1010"), &code("b", "1001"), &[1.0; 3]).is_err());
    }

    fn atlas() -> Atlas {
        build_atlas(
            vec![
                code("d", "1111"),
                code("a", "1010"),
                code("c", "1000"),
                code("b", "0010"),
            ],
            &SampleMetadata::new(),
        )
        .unwrap()
    }

    #[test]
    fn query_itself_first_and_ties_by_id() {
        let atlas = atlas();
        let r = query(&atlas, &code("a", "1010"), QueryOptions::new(3)).unwrap();
        let ids: Vec<_> = r.neighbors.iter().map(|n| n.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(r.neighbors[0].distance, 0.0);

        let r = query(&atlas, &code("a", "1010"), QueryOptions::new(3).exclude_self(true)).unwrap();
        let ids: Vec<_> = r.neighbors.iter().map(|n| n.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "d"]);
    }

    #[test]
    fn large_k_returns_everything_sorted() {
        let r = query(&atlas(), &code("q", "0000"), QueryOptions::new(10)).unwrap();
        let d: Vec<f64> = r.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(d, vec![1.0, 1.0, 2.0, 4.0]);
        assert_eq!(r.neighbors[0].sample_id, "b");
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(
            query(&atlas(), &code("q", "0000"), QueryOptions::new(0)),
            Err(PerceptError::Parameter(_))
        ));
        let mut foreign = code("q", "0000");
        foreign.class_label = "other".into();
        let err = query(&atlas(), &foreign, QueryOptions::new(1)).unwrap_err();
        assert!(matches!(err, PerceptError::Comparison(_)));
    }

    #[test]
    fn weighted_query_uses_popularity() {
        // weights = (3, 1, 3, 1)
        let atlas = atlas();
        let r = query(&atlas, &code("q", "0000"), QueryOptions::new(4).weighted(WeightTransform::Identity)).unwrap();
        assert!(r.weighted);
        let d: Vec<f64> = r.neighbors.iter().map(|n| n.distance).collect();
        assert_eq!(d, vec![3.0, 3.0, 6.0, 8.0]);
    }

    fn bits_strategy(len: usize) -> impl Strategy<Value = PerceptualCode> {
        prop::collection::vec(any::<bool>(), len).prop_map(|b| PerceptualCode {
            bits: PackedBits::from_bools(&b),
            class_label: "c".into(),
            sample_id: "x".into(),
        })
    }

    proptest! {
        #[test]
        fn metric_axioms((a, b, c) in (1usize..200).prop_flat_map(|n| (bits_strategy(n), bits_strategy(n), bits_strategy(n)))) {
            let ab = hamming(&a, &b).unwrap();
            prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
            prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
            let ones = vec![1.0; a.len()];
            prop_assert_eq!(weighted_hamming(&a, &b, &ones).unwrap(), ab as f64);
        }
    }
}
