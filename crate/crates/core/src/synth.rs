//! Synthetic activation dumps with known intra-class structure.
//!
//! Every class holds several intra-classes. Each intra-class owns a disjoint
//! set of signature neurons; a sample of that intra-class draws its signature
//! neurons from `Normal(base_mean + shift, base_variance)` and every other
//! neuron from the background distribution.
//!
//! Spec files are TOML:
//!
//! ```toml
//! seed = 7
//! neurons = 200
//! samples_per_intra = 100
//! base_mean = 0.0        # default 0
//! base_variance = 1.0    # default 1
//! # optional; default is a single Gaussian
//! background = { kind = "bimodal", offset = 4.0 }
//!
//! [[classes]]
//! label = "cn"
//!
//! [[classes.intra]]
//! tag = "stripes"
//! signature_range = [0, 25]      # half-open
//! signature_shift = 10.0
//!
//! [[classes.intra]]
//! tag = "sphere"
//! signature_neurons = [25, 26, 27]
//! signature_shift = 10.0
//! ```
//!
//! Generation consumes a single ChaCha8 stream in a fixed order, so the same
//! spec always yields the same bytes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PerceptError, Result};
use crate::meta::{SampleMetadata, CLASS_KEY, INTRA_KEY};
use crate::wire::{write_dump, ActivationDump, ActivationMatrix, DUMP_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    #[default]
    Gaussian,
    /// Equal-weight mixture of `Normal(base_mean, v)` and
    /// `Normal(base_mean + offset, v)`.
    Bimodal { offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraSpec {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signature_neurons: Vec<usize>,
    /// Half-open `[start, end)` range added to `signature_neurons`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature_range: Option<[usize; 2]>,
    pub signature_shift: f64,
}

impl IntraSpec {
    pub fn signature(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.signature_neurons.iter().copied().collect();
        if let Some([a, b]) = self.signature_range {
            s.extend(a..b);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub intra: Vec<IntraSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub neurons: usize,
    pub samples_per_intra: usize,
    #[serde(default)]
    pub base_mean: f64,
    #[serde(default = "unit")]
    pub base_variance: f64,
    #[serde(default)]
    pub background: Background,
    pub classes: Vec<ClassSpec>,
}

fn unit() -> f64 {
    1.0
}

impl SynthSpec {
    /// `classes` classes with `intras` intra-classes each; intra-class `i`
    /// owns neurons `[i·signature, (i+1)·signature)`. Classes share layouts.
    pub fn balanced(
        classes: usize,
        intras: usize,
        neurons: usize,
        signature: usize,
        shift: f64,
        samples_per_intra: usize,
        seed: u64,
    ) -> Self {
        SynthSpec {
            seed,
            neurons,
            samples_per_intra,
            base_mean: 0.0,
            base_variance: 1.0,
            background: Background::Gaussian,
            classes: (0..classes)
                .map(|c| ClassSpec {
                    label: format!("class{c}"),
                    intra: (0..intras)
                        .map(|i| IntraSpec {
                            tag: format!("intra{i}"),
                            signature_neurons: vec![],
                            signature_range: Some([i * signature, (i + 1) * signature]),
                            signature_shift: shift,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| PerceptError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(PerceptError::Spec(m));
        if self.neurons == 0 {
            return err("neurons must be positive".into());
        }
        if self.samples_per_intra == 0 {
            return err("samples_per_intra must be positive".into());
        }
        if !(self.base_variance > 0.0 && self.base_variance.is_finite()) || !self.base_mean.is_finite() {
            return err("base_mean must be finite and base_variance positive".into());
        }
        if let Background::Bimodal { offset } = self.background {
            if !offset.is_finite() {
                return err("bimodal offset must be finite".into());
            }
        }
        if self.classes.is_empty() {
            return err("at least one class is required".into());
        }
        let mut labels = HashSet::new();
        for class in &self.classes {
            if class.label.is_empty() || class.label.contains(['/', '\\', '\t']) {
                return err(format!("invalid class label `{}`", class.label));
            }
            if !labels.insert(&class.label) {
                return err(format!("duplicate class label `{}`", class.label));
            }
            if class.intra.is_empty() {
                return err(format!("class `{}` has no intra-classes", class.label));
            }
            let mut tags = HashSet::new();
            let mut owner: BTreeMap<usize, &str> = BTreeMap::new();
            for intra in &class.intra {
                if !tags.insert(&intra.tag) {
                    return err(format!("duplicate intra tag `{}` in `{}`", intra.tag, class.label));
                }
                if !intra.signature_shift.is_finite() {
                    return err(format!("signature shift of `{}` must be finite", intra.tag));
                }
                for j in intra.signature() {
                    if j >= self.neurons {
                        return err(format!(
                            "signature neuron {j} of `{}` is out of range (neurons = {})",
                            intra.tag, self.neurons
                        ));
                    }
                    if let Some(other) = owner.insert(j, &intra.tag) {
                        return err(format!(
                            "signature neuron {j} shared by intra-classes `{other}` and `{}` of `{}`",
                            intra.tag, class.label
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dumps (one per class, in spec order) plus the intra-class table.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dumps: Vec<ActivationDump>,
    pub metadata: SampleMetadata,
}

impl SynthOutput {
    /// Writes `<label>.pcact` per class and `meta.tsv`; returns the paths.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |e: std::io::Error| PerceptError::Io { offset: 0, source: e };
        fs::create_dir_all(dir).map_err(io)?;
        let mut paths = Vec::new();
        for dump in &self.dumps {
            let path = dir.join(format!("{}.pcact", dump.class_label));
            let mut bytes = Vec::new();
            write_dump(dump, &mut bytes)?;
            fs::write(&path, bytes).map_err(io)?;
            paths.push(path);
        }
        let meta = dir.join("meta.tsv");
        fs::write(&meta, self.metadata.to_tsv()).map_err(io)?;
        paths.push(meta);
        Ok(paths)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.base_variance.sqrt()).expect("variance validated");
    let mut metadata = SampleMetadata::new();
    let mut dumps = Vec::with_capacity(spec.classes.len());

    for class in &spec.classes {
        let signatures: Vec<BTreeSet<usize>> = class.intra.iter().map(IntraSpec::signature).collect();
        let mut assignment: Vec<usize> = (0..class.intra.len())
            .flat_map(|i| std::iter::repeat_n(i, spec.samples_per_intra))
            .collect();
        assignment.shuffle(&mut rng);

        let mut values = Vec::with_capacity(assignment.len() * spec.neurons);
        let mut sample_ids = Vec::with_capacity(assignment.len());
        for (row, &intra) in assignment.iter().enumerate() {
            let shift = class.intra[intra].signature_shift;
            for j in 0..spec.neurons {
                let center = if signatures[intra].contains(&j) {
                    spec.base_mean + shift
                } else {
                    match spec.background {
                        Background::Gaussian => spec.base_mean,
                        Background::Bimodal { offset } => {
                            spec.base_mean + if rng.random_bool(0.5) { offset } else { 0.0 }
                        }
                    }
                };
                values.push((center + noise.sample(&mut rng)) as f32);
            }
            let id = format!("{}-{row:05}", class.label);
            metadata.insert(id.clone(), CLASS_KEY, class.label.clone());
            metadata.insert(id.clone(), INTRA_KEY, class.intra[intra].tag.clone());
            sample_ids.push(id);
        }

        let mut attributes = BTreeMap::new();
        attributes.insert("generator".to_string(), "synth".to_string());
        attributes.insert("seed".to_string(), spec.seed.to_string());
        let dump = ActivationDump {
            format_version: DUMP_FORMAT_VERSION,
            class_label: class.label.clone(),
            layer_names: vec!["synthetic".to_string()],
            neurons_per_layer: vec![spec.neurons],
            sample_ids,
            values: ActivationMatrix::new(assignment.len(), spec.neurons, values)?,
            attributes,
        };
        dump.validate()?;
        dumps.push(dump);
    }
    Ok(SynthOutput { dumps, metadata })
}
