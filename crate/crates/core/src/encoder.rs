//! Binary perceptual codes.
//!
//! For neuron `j` and component `t` the code holds bit `j·T + t`, set iff the
//! component is relevant and the activation lies in the closed interval
//! `mean ± half_width` (the variance itself by default). Codes are only
//! comparable when produced by the same class bank.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::PackedBits;
use crate::config::{IntervalMode, PipelineConfig};
use crate::error::{PerceptError, Result};
use crate::gmm::ClassBank;
use crate::wire::container;
use crate::wire::{read_artifact, ActivationDump, ArtifactKind};

pub const CODES_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerceptualCode {
    pub bits: PackedBits,
    pub class_label: String,
    pub sample_id: String,
}

impl PerceptualCode {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fails unless both codes come from the same bank layout.
    pub fn check_compatible(&self, other: &PerceptualCode) -> Result<()> {
        if self.class_label != other.class_label {
            return Err(PerceptError::label_mismatch(&self.class_label, &other.class_label));
        }
        if self.len() != other.len() {
            return Err(PerceptError::Comparison(format!(
                "code length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Encodes one activation vector with `bank`.
pub fn encode(
    activations: &[f64],
    bank: &ClassBank,
    sample_id: impl Into<String>,
    mode: IntervalMode,
) -> Result<PerceptualCode> {
    if activations.len() != bank.neurons() {
        return Err(PerceptError::Dimension {
            expected: bank.neurons(),
            got: activations.len(),
        });
    }
    if let Some(column) = activations.iter().position(|v| !v.is_finite()) {
        return Err(PerceptError::NonFinite {
            row: 0,
            column,
            reason: "non-finite activation",
        });
    }
    let t = bank.components();
    let mut bits = PackedBits::zeros(bank.code_length());
    for (j, (&v, gmm)) in activations.iter().zip(&bank.neuron_gmms).enumerate() {
        for (ti, c) in gmm.components.iter().enumerate() {
            if !c.relevant {
                continue;
            }
            let half = mode.half_width(c.variance);
            if c.mean - half <= v && v <= c.mean + half {
                bits.set(j * t + ti, true);
            }
        }
    }
    Ok(PerceptualCode {
        bits,
        class_label: bank.class_label.clone(),
        sample_id: sample_id.into(),
    })
}

/// One code per dump row, in row order.
pub fn encode_dump(dump: &ActivationDump, bank: &ClassBank, mode: IntervalMode) -> Result<Vec<PerceptualCode>> {
    if dump.neurons() != bank.neurons() {
        return Err(PerceptError::Dimension {
            expected: bank.neurons(),
            got: dump.neurons(),
        });
    }
    (0..dump.samples())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = dump.values.row(i).iter().map(|&v| f64::from(v)).collect();
            encode(&row, bank, dump.sample_ids[i].clone(), mode).map_err(|e| match e {
                PerceptError::NonFinite { column, reason, .. } => PerceptError::NonFinite { row: i, column, reason },
                other => other,
            })
        })
        .collect()
}

/// Contents of a `.pccode` file: codes of one bank plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSet {
    pub class_label: String,
    pub neurons: usize,
    pub components: usize,
    pub codes: Vec<PerceptualCode>,
    pub config: PipelineConfig,
}

impl CodeSet {
    pub fn from_bank(bank: &ClassBank, codes: Vec<PerceptualCode>, config: PipelineConfig) -> Self {
        Self {
            class_label: bank.class_label.clone(),
            neurons: bank.neurons(),
            components: bank.components(),
            codes,
            config,
        }
    }

    pub fn code_length(&self) -> usize {
        self.neurons * self.components
    }

    pub fn find(&self, sample_id: &str) -> Option<&PerceptualCode> {
        self.codes.iter().find(|c| c.sample_id == sample_id)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.codes {
            if c.class_label != self.class_label {
                return Err(PerceptError::label_mismatch(&self.class_label, &c.class_label));
            }
            if c.len() != self.code_length() {
                return Err(PerceptError::Dimension {
                    expected: self.code_length(),
                    got: c.len(),
                });
            }
            if !seen.insert(c.sample_id.as_str()) {
                return Err(PerceptError::Duplicate(c.sample_id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CodesMetadata {
    class_label: String,
    code_length: usize,
    neurons: usize,
    components: usize,
    sample_ids: Vec<String>,
    config: PipelineConfig,
}

pub fn write_codes<W: Write>(set: &CodeSet, sink: W) -> Result<u64> {
    set.validate()?;
    let meta = CodesMetadata {
        class_label: set.class_label.clone(),
        code_length: set.code_length(),
        neurons: set.neurons,
        components: set.components,
        sample_ids: set.codes.iter().map(|c| c.sample_id.clone()).collect(),
        config: set.config.clone(),
    };
    let mut w = container::write_header(sink, ArtifactKind::Codes, CODES_FORMAT_VERSION, &meta)?;
    let mut payload = Vec::with_capacity(set.codes.len() * PackedBits::byte_len(set.code_length()));
    for c in &set.codes {
        payload.extend_from_slice(&c.bits.to_bytes());
    }
    w.put(&payload)?;
    w.finish()
}

pub fn read_codes<R: Read>(source: R) -> Result<CodeSet> {
    let raw = read_artifact(source)?;
    raw.expect_kind(ArtifactKind::Codes, CODES_FORMAT_VERSION)?;
    let meta: CodesMetadata = raw.metadata_as()?;
    if meta.code_length != meta.neurons * meta.components {
        return Err(PerceptError::Format(format!(
            "code length {} is not neurons × components ({} × {})",
            meta.code_length, meta.neurons, meta.components
        )));
    }
    let per_code = PackedBits::byte_len(meta.code_length);
    raw.expect_payload_len((meta.sample_ids.len() * per_code) as u64)?;
    let mut codes = Vec::with_capacity(meta.sample_ids.len());
    for (id, bytes) in meta.sample_ids.into_iter().zip(raw.payload.chunks(per_code.max(1))) {
        let bits = PackedBits::from_bytes(meta.code_length, bytes)
            .ok_or_else(|| PerceptError::Corruption(format!("pad bits set in code of `{id}`")))?;
        codes.push(PerceptualCode {
            bits,
            class_label: meta.class_label.clone(),
            sample_id: id,
        });
    }
    let set = CodeSet {
        class_label: meta.class_label,
        neurons: meta.neurons,
        components: meta.components,
        codes,
        config: meta.config,
    };
    set.validate()?;
    Ok(set)
}
