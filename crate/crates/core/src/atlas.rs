//! Per-class atlas of reference codes with per-bit popularity counts.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bits::PackedBits;
use crate::config::PipelineConfig;
use crate::encoder::PerceptualCode;
use crate::error::{PerceptError, Result};
use crate::meta::{Attributes, SampleMetadata};
use crate::wire::container::{self, PayloadReader};
use crate::wire::{read_artifact, ArtifactKind};

pub const ATLAS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtlasEntry {
    pub code: PerceptualCode,
    pub metadata: Attributes,
}

impl AtlasEntry {
    pub fn sample_id(&self) -> &str {
        &self.code.sample_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub class_label: String,
    pub code_length: usize,
    pub entries: Vec<AtlasEntry>,
    /// `weights[i]` counts the entries with bit `i` set.
    pub weights: Vec<u64>,
    pub config: PipelineConfig,
}

fn column_counts<'a>(codes: impl Iterator<Item = &'a PerceptualCode>, len: usize) -> Vec<u64> {
    let mut weights = vec![0u64; len];
    for c in codes {
        for i in c.bits.ones() {
            weights[i] += 1;
        }
    }
    weights
}

/// Builds an atlas; `metadata` may omit samples (they get an empty map).
pub fn build_atlas(codes: Vec<PerceptualCode>, metadata: &SampleMetadata) -> Result<Atlas> {
    build_atlas_with_config(codes, metadata, PipelineConfig::default())
}

pub fn build_atlas_with_config(
    codes: Vec<PerceptualCode>,
    metadata: &SampleMetadata,
    config: PipelineConfig,
) -> Result<Atlas> {
    let first = codes
        .first()
        .ok_or_else(|| PerceptError::InsufficientData("an atlas needs at least one code".into()))?;
    let class_label = first.class_label.clone();
    let code_length = first.len();
    let mut seen = HashSet::with_capacity(codes.len());
    for c in &codes {
        if c.class_label != class_label {
            return Err(PerceptError::Consistency(format!(
                "mixed class labels `{class_label}` and `{}`",
                c.class_label
            )));
        }
        if c.len() != code_length {
            return Err(PerceptError::Consistency(format!(
                "mixed code lengths {code_length} and {}",
                c.len()
            )));
        }
        if !seen.insert(c.sample_id.clone()) {
            return Err(PerceptError::Duplicate(c.sample_id.clone()));
        }
    }
    let weights = column_counts(codes.iter(), code_length);
    let entries = codes
        .into_iter()
        .map(|code| AtlasEntry {
            metadata: metadata.get(&code.sample_id).cloned().unwrap_or_default(),
            code,
        })
        .collect();
    Ok(Atlas {
        class_label,
        code_length,
        entries,
        weights,
        config,
    })
}

/// Space taken by the encoded atlas versus the raw activations it replaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReport {
    pub samples: usize,
    pub code_bytes_per_sample: usize,
    /// Header, metadata and weights, amortized over the entries.
    pub overhead_bytes_per_sample: f64,
    pub raw_bytes_per_sample: usize,
}

impl MemoryReport {
    pub fn compression_ratio(&self) -> f64 {
        self.raw_bytes_per_sample as f64 / self.code_bytes_per_sample as f64
    }
}

impl Atlas {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Components per neuron, from the config the codes were built with.
    pub fn components(&self) -> usize {
        self.config.components.max(1)
    }

    pub fn neurons(&self) -> usize {
        self.code_length / self.components()
    }

    pub fn entry(&self, sample_id: &str) -> Option<&AtlasEntry> {
        self.entries.iter().find(|e| e.sample_id() == sample_id)
    }

    pub fn total_popcount(&self) -> u64 {
        self.entries.iter().map(|e| e.code.bits.count_ones()).sum()
    }

    /// Fails unless `code` could have come from this atlas's bank.
    pub fn check_compatible(&self, code: &PerceptualCode) -> Result<()> {
        if code.class_label != self.class_label {
            return Err(PerceptError::label_mismatch(&code.class_label, &self.class_label));
        }
        if code.len() != self.code_length {
            return Err(PerceptError::Comparison(format!(
                "code length {} does not match atlas length {}",
                code.len(),
                self.code_length
            )));
        }
        Ok(())
    }

    /// `file_bytes` is the serialized size of this atlas.
    pub fn memory_report(&self, file_bytes: u64) -> MemoryReport {
        let code_bytes = PackedBits::byte_len(self.code_length);
        let samples = self.len();
        let overhead = file_bytes as f64 - (code_bytes * samples) as f64;
        MemoryReport {
            samples,
            code_bytes_per_sample: code_bytes,
            overhead_bytes_per_sample: overhead / samples.max(1) as f64,
            raw_bytes_per_sample: self.neurons() * 4,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AtlasMetadata {
    class_label: String,
    code_length: usize,
    entries: usize,
    sample_ids: Vec<String>,
    entry_metadata: Vec<Attributes>,
    config: PipelineConfig,
}

/// Layout: codes (`ceil(N/8)` bytes each, in entry order), then `N` u64 weights.
pub fn save_atlas<W: Write>(atlas: &Atlas, sink: W) -> Result<u64> {
    if atlas.is_empty() {
        return Err(PerceptError::InsufficientData("refusing to save an empty atlas".into()));
    }
    let meta = AtlasMetadata {
        class_label: atlas.class_label.clone(),
        code_length: atlas.code_length,
        entries: atlas.len(),
        sample_ids: atlas.entries.iter().map(|e| e.sample_id().to_string()).collect(),
        entry_metadata: atlas.entries.iter().map(|e| e.metadata.clone()).collect(),
        config: atlas.config.clone(),
    };
    let mut w = container::write_header(sink, ArtifactKind::Atlas, ATLAS_FORMAT_VERSION, &meta)?;
    let per_code = PackedBits::byte_len(atlas.code_length);
    let mut payload = Vec::with_capacity(atlas.len() * per_code + atlas.code_length * 8);
    for e in &atlas.entries {
        payload.extend_from_slice(&e.code.bits.to_bytes());
    }
    for w in &atlas.weights {
        payload.extend_from_slice(&w.to_le_bytes());
    }
    w.put(&payload)?;
    w.finish()
}

pub fn load_atlas<R: Read>(source: R) -> Result<Atlas> {
    let raw = read_artifact(source)?;
    raw.expect_kind(ArtifactKind::Atlas, ATLAS_FORMAT_VERSION)?;
    let meta: AtlasMetadata = raw.metadata_as()?;
    if meta.entries == 0 {
        return Err(PerceptError::InsufficientData("atlas file has no entries".into()));
    }
    if meta.sample_ids.len() != meta.entries || meta.entry_metadata.len() != meta.entries {
        return Err(PerceptError::Format(format!(
            "atlas declares {} entries but lists {} ids and {} metadata rows",
            meta.entries,
            meta.sample_ids.len(),
            meta.entry_metadata.len()
        )));
    }
    let per_code = PackedBits::byte_len(meta.code_length);
    let codes_len = per_code * meta.entries;
    raw.expect_payload_len((codes_len + meta.code_length * 8) as u64)?;

    let mut entries = Vec::with_capacity(meta.entries);
    let mut seen = HashSet::with_capacity(meta.entries);
    let chunks = raw.payload[..codes_len].chunks(per_code.max(1));
    for ((id, metadata), bytes) in meta.sample_ids.into_iter().zip(meta.entry_metadata).zip(chunks) {
        let bits = PackedBits::from_bytes(meta.code_length, bytes)
            .ok_or_else(|| PerceptError::Corruption(format!("pad bits set in code of `{id}`")))?;
        if !seen.insert(id.clone()) {
            return Err(PerceptError::Duplicate(id));
        }
        entries.push(AtlasEntry {
            code: PerceptualCode {
                bits,
                class_label: meta.class_label.clone(),
                sample_id: id,
            },
            metadata,
        });
    }
    let mut r = PayloadReader::new(&raw.payload[codes_len..]);
    let weights = (0..meta.code_length).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let recount = column_counts(entries.iter().map(|e| &e.code), meta.code_length);
    if let Some(i) = (0..meta.code_length).find(|&i| recount[i] != weights[i]) {
        return Err(PerceptError::Corruption(format!(
            "stored weight of bit {i} is {} but entries count {}",
            weights[i], recount[i]
        )));
    }
    Ok(Atlas {
        class_label: meta.class_label,
        code_length: meta.code_length,
        entries,
        weights,
        config: meta.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(id: &str, bits: &str) -> PerceptualCode {
        let b: Vec<bool> = bits.chars().map(|c| c == '1').collect();
        PerceptualCode {
            bits: PackedBits::from_bools(&b),
            class_label: "c".into(),
            sample_id: id.into(),
        }
    }

    #[test]
    fn weights_are_column_sums() {
        let atlas = build_atlas(vec![code("a", "1010"), code("b", "1001")], &SampleMetadata::new()).unwrap();
        assert_eq!(atlas.weights, vec![2, 0, 1, 1]);
        assert_eq!(atlas.total_popcount(), 4);

        let zero = build_atlas(vec![code("z", "0000000")], &SampleMetadata::new()).unwrap();
        assert_eq!(zero.weights, vec![0; 7]);
    }

    #[test]
    fn build_errors() {
        let none = SampleMetadata::new();
        assert!(matches!(build_atlas(vec![], &none), Err(PerceptError::InsufficientData(_))));
        let mut other = code("b", "1001");
        other.class_label = "d".into();
        assert!(matches!(
            build_atlas(vec![code("a", "1010"), other], &none),
            Err(PerceptError::Consistency(_))
        ));
        assert!(matches!(
            build_atlas(vec![code("a", "1010"), code("a", "0000")], &none),
            Err(PerceptError::Duplicate(_))
        ));
        assert!(matches!(
            build_atlas(vec![code("a", "1010"), code("b", "00")], &none),
            Err(PerceptError::Consistency(_))
        ));
    }

    #[test]
    fn metadata_attached() {
        let mut meta = SampleMetadata::new();
        meta.insert("a", "intra", "x");
        let atlas = build_atlas(vec![code("a", "1"), code("b", "0")], &meta).unwrap();
        assert_eq!(atlas.entry("a").unwrap().metadata.get("intra").unwrap(), "x");
        assert!(atlas.entry("b").unwrap().metadata.is_empty());
    }

    fn saved(atlas: &Atlas) -> Vec<u8> {
        let mut buf = Vec::new();
        save_atlas(atlas, &mut buf).unwrap();
        buf
    }

    #[test]
    fn save_load_round_trip() {
        let mut meta = SampleMetadata::new();
        meta.insert("a", "intra", "x");
        let atlas = build_atlas(
            vec![code("a", "10100000011"), code("b", "10010000001"), code("c", "00000000001")],
            &meta,
        )
        .unwrap();
        assert_eq!(load_atlas(&saved(&atlas)[..]).unwrap(), atlas);
    }

    #[test]
    fn flipped_payload_bit_is_corruption() {
        let atlas = build_atlas(vec![code("a", "1010"), code("b", "1001")], &SampleMetadata::new()).unwrap();
        let buf = saved(&atlas);
        // code bytes sit right before the 4 × 8 weight bytes
        let code_byte = buf.len() - 32 - 2;
        for bit in 0..4 {
            let mut bad = buf.clone();
            bad[code_byte] ^= 1 << bit;
            assert!(matches!(load_atlas(&bad[..]), Err(PerceptError::Corruption(_))));
        }
        let mut bad = buf.clone();
        bad[buf.len() - 8] ^= 1;
        assert!(matches!(load_atlas(&bad[..]), Err(PerceptError::Corruption(_))));
    }

    #[test]
    fn empty_atlas_rejected() {
        let atlas = Atlas {
            class_label: "c".into(),
            code_length: 4,
            entries: vec![],
            weights: vec![0; 4],
            config: PipelineConfig::default(),
        };
        assert!(save_atlas(&atlas, Vec::new()).is_err());

        // Hand-craft a file with zero entries.
        let meta = AtlasMetadata {
            class_label: "c".into(),
            code_length: 4,
            entries: 0,
            sample_ids: vec![],
            entry_metadata: vec![],
            config: PipelineConfig::default(),
        };
        let mut buf = Vec::new();
        let mut w = container::write_header(&mut buf, ArtifactKind::Atlas, ATLAS_FORMAT_VERSION, &meta).unwrap();
        w.put(&[0u8; 32]).unwrap();
        w.finish().unwrap();
        assert!(matches!(load_atlas(&buf[..]), Err(PerceptError::InsufficientData(_))));
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let atlas = build_atlas(vec![code("a", "1010")], &SampleMetadata::new()).unwrap();
        let mut buf = saved(&atlas);
        buf[8] = 9;
        assert!(matches!(load_atlas(&buf[..]), Err(PerceptError::Format(_))));
    }
}
