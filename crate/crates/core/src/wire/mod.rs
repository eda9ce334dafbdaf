//! Activation dumps (`.pcact`) and the binary framing shared by all artifacts.

pub mod container;

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use container::{read_artifact, ArtifactKind, RawArtifact};

use crate::error::{PerceptError, Result};

pub const DUMP_FORMAT_VERSION: u32 = 1;

/// Row-major K×M matrix of float32 activations: one row per sample, one
/// column per tracked neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(PerceptError::Dimension {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(PerceptError::Dimension {
                    expected: cols,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl ExactSizeIterator<Item = f32> + '_ {
        (0..self.rows).map(move |i| self.values[i * self.cols + j])
    }

    /// Fails on the first NaN or infinity, naming its position.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(idx) => Err(PerceptError::NonFinite {
                row: idx / self.cols.max(1),
                column: idx % self.cols.max(1),
                reason: if self.values[idx].is_nan() {
                    "NaN activation"
                } else {
                    "infinite activation"
                },
            }),
        }
    }
}

/// Activations of K samples of one class over the tracked layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub format_version: u32,
    pub class_label: String,
    pub layer_names: Vec<String>,
    pub neurons_per_layer: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub values: ActivationMatrix,
    /// Free-form provenance (hook point, flattening order, generator config).
    pub attributes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct DumpMetadata {
    class_label: String,
    layer_names: Vec<String>,
    neurons_per_layer: Vec<usize>,
    samples: usize,
    neurons: usize,
    sample_ids: Vec<String>,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

impl ActivationDump {
    /// Dump with a single layer named `layer`.
    pub fn single_layer(
        class_label: impl Into<String>,
        sample_ids: Vec<String>,
        values: ActivationMatrix,
    ) -> Result<Self> {
        let dump = ActivationDump {
            format_version: DUMP_FORMAT_VERSION,
            class_label: class_label.into(),
            layer_names: vec!["layer".to_string()],
            neurons_per_layer: vec![values.cols()],
            sample_ids,
            values,
            attributes: BTreeMap::new(),
        };
        dump.validate()?;
        Ok(dump)
    }

    /// Total tracked neurons M.
    pub fn neurons(&self) -> usize {
        self.values.cols()
    }

    pub fn samples(&self) -> usize {
        self.values.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != DUMP_FORMAT_VERSION {
            return Err(PerceptError::Format(format!(
                "unsupported dump version {}",
                self.format_version
            )));
        }
        if self.layer_names.len() != self.neurons_per_layer.len() {
            return Err(PerceptError::Validation(format!(
                "{} layer names but {} layer sizes",
                self.layer_names.len(),
                self.neurons_per_layer.len()
            )));
        }
        if self.neurons_per_layer.contains(&0) {
            return Err(PerceptError::Validation(
                "every layer must contribute at least one neuron".into(),
            ));
        }
        let m: usize = self.neurons_per_layer.iter().sum();
        if m != self.values.cols() {
            return Err(PerceptError::Validation(format!(
                "layer sizes sum to {m} but matrix has {} columns",
                self.values.cols()
            )));
        }
        if self.sample_ids.len() != self.values.rows() {
            return Err(PerceptError::Validation(format!(
                "{} sample ids for {} rows",
                self.sample_ids.len(),
                self.values.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(self.sample_ids.len());
        for id in &self.sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(PerceptError::Duplicate(id.clone()));
            }
        }
        self.values.check_finite()
    }
}

/// Serializes a dump. Returns the number of bytes written.
pub fn write_dump<W: Write>(dump: &ActivationDump, sink: W) -> Result<u64> {
    dump.validate()?;
    let meta = DumpMetadata {
        class_label: dump.class_label.clone(),
        layer_names: dump.layer_names.clone(),
        neurons_per_layer: dump.neurons_per_layer.clone(),
        samples: dump.samples(),
        neurons: dump.neurons(),
        sample_ids: dump.sample_ids.clone(),
        attributes: dump.attributes.clone(),
    };
    let mut w = container::write_header(sink, ArtifactKind::Activations, dump.format_version, &meta)?;
    let mut payload = Vec::with_capacity(dump.values.values().len() * 4);
    for v in dump.values.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.put(&payload)?;
    w.finish()
}

pub fn read_dump<R: Read>(source: R) -> Result<ActivationDump> {
    let raw = read_artifact(source)?;
    dump_from_raw(&raw)
}

pub fn dump_from_raw(raw: &RawArtifact) -> Result<ActivationDump> {
    raw.expect_kind(ArtifactKind::Activations, DUMP_FORMAT_VERSION)?;
    let meta: DumpMetadata = raw.metadata_as()?;
    raw.expect_payload_len((meta.samples * meta.neurons * 4) as u64)?;
    let values = raw
        .payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    let dump = ActivationDump {
        format_version: raw.version,
        class_label: meta.class_label,
        layer_names: meta.layer_names,
        neurons_per_layer: meta.neurons_per_layer,
        sample_ids: meta.sample_ids,
        values: ActivationMatrix::new(meta.samples, meta.neurons, values)?,
        attributes: meta.attributes,
    };
    dump.validate()?;
    Ok(dump)
}
