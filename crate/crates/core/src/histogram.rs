//! Per-neuron equal-width activation histograms.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PerceptError, Result};
use crate::wire::container::{self, PayloadReader};
use crate::wire::{read_artifact, ActivationMatrix, ArtifactKind};

pub const HIST_FORMAT_VERSION: u32 = 1;

/// Frequency of one neuron's activations over the samples of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronHistogram {
    pub neuron_index: usize,
    /// `bins + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Constant column; edges were expanded to `[v - 0.5, v + 0.5]`.
    pub degenerate: bool,
}

impl NeuronHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn min(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn max(&self) -> f64 {
        self.bin_edges[self.bins()]
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1]))
    }

    /// Histogram of `values` with `bins` equal-width bins over their range.
    pub fn from_values(neuron_index: usize, values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(PerceptError::Parameter(format!(
                "need at least 2 bins, got {bins}"
            )));
        }
        if values.len() < 2 {
            return Err(PerceptError::InsufficientData(format!(
                "histograms need at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(PerceptError::NonFinite {
                row,
                column: neuron_index,
                reason: "non-finite activation",
            });
        }
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let degenerate = lo == hi;
        if degenerate {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        bin_edges.push(hi);

        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[locate(&bin_edges, v, width)] += 1;
        }
        Ok(Self {
            neuron_index,
            bin_edges,
            counts,
            total: values.len() as u64,
            degenerate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.counts.len();
        if b == 0 || self.bin_edges.len() != b + 1 {
            return Err(PerceptError::Validation(format!(
                "neuron {}: {} edges for {b} bins",
                self.neuron_index,
                self.bin_edges.len()
            )));
        }
        if self.bin_edges.iter().any(|e| !e.is_finite())
            || self.bin_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(PerceptError::Validation(format!(
                "neuron {}: bin edges must be finite and strictly increasing",
                self.neuron_index
            )));
        }
        if self.counts.iter().sum::<u64>() != self.total || self.total == 0 {
            return Err(PerceptError::Validation(format!(
                "neuron {}: counts do not sum to a positive total {}",
                self.neuron_index, self.total
            )));
        }
        Ok(())
    }
}

/// Bin index for `v`; every bin is half-open except the last, which also
/// holds the right edge.
fn locate(edges: &[f64], v: f64, width: f64) -> usize {
    let bins = edges.len() - 1;
    let mut idx = (((v - edges[0]) / width).floor().max(0.0) as usize).min(bins - 1);
    while idx > 0 && v < edges[idx] {
        idx -= 1;
    }
    while idx + 1 < bins && v >= edges[idx + 1] {
        idx += 1;
    }
    idx
}

/// One histogram per neuron column.
pub fn build_histograms(activations: &ActivationMatrix, bins: usize) -> Result<Vec<NeuronHistogram>> {
    if activations.rows() < 2 {
        return Err(PerceptError::InsufficientData(format!(
            "histograms need at least 2 samples, got {}",
            activations.rows()
        )));
    }
    activations.check_finite()?;
    (0..activations.cols())
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = activations.column(j).map(f64::from).collect();
            NeuronHistogram::from_values(j, &column, bins)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct HistMetadata {
    class_label: String,
    neurons: usize,
    bins: usize,
    config: PipelineConfig,
}

/// Writes a `.pchist` file. All histograms must share the bin count.
pub fn write_histograms<W: Write>(
    class_label: &str,
    histograms: &[NeuronHistogram],
    config: &PipelineConfig,
    sink: W,
) -> Result<u64> {
    let bins = histograms.first().map_or(config.bins, NeuronHistogram::bins);
    for h in histograms {
        h.validate()?;
        if h.bins() != bins {
            return Err(PerceptError::Consistency(format!(
                "neuron {} has {} bins, expected {bins}",
                h.neuron_index,
                h.bins()
            )));
        }
    }
    let meta = HistMetadata {
        class_label: class_label.to_string(),
        neurons: histograms.len(),
        bins,
        config: config.clone(),
    };
    let mut w = container::write_header(sink, ArtifactKind::Histograms, HIST_FORMAT_VERSION, &meta)?;
    let mut payload = Vec::new();
    for h in histograms {
        payload.extend_from_slice(&(h.neuron_index as u64).to_le_bytes());
        payload.push(h.degenerate as u8);
        for e in &h.bin_edges {
            payload.extend_from_slice(&e.to_le_bytes());
        }
        for c in &h.counts {
            payload.extend_from_slice(&c.to_le_bytes());
        }
    }
    w.put(&payload)?;
    w.finish()
}

/// Reads a `.pchist` file, returning the class label and histograms.
pub fn read_histograms<R: Read>(source: R) -> Result<(String, Vec<NeuronHistogram>)> {
    let raw = read_artifact(source)?;
    raw.expect_kind(ArtifactKind::Histograms, HIST_FORMAT_VERSION)?;
    let meta: HistMetadata = raw.metadata_as()?;
    let per_neuron = 8 + 1 + 8 * (meta.bins + 1) + 8 * meta.bins;
    raw.expect_payload_len((per_neuron * meta.neurons) as u64)?;
    let mut r = PayloadReader::new(&raw.payload);
    let mut out = Vec::with_capacity(meta.neurons);
    for _ in 0..meta.neurons {
        let neuron_index = r.u64()? as usize;
        let degenerate = r.u8()? != 0;
        let bin_edges = (0..=meta.bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let counts = (0..meta.bins).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let h = NeuronHistogram {
            neuron_index,
            total: counts.iter().sum(),
            bin_edges,
            counts,
            degenerate,
        };
        h.validate()?;
        out.push(h);
    }
    r.finish()?;
    Ok((meta.class_label, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_column_expands_range() {
        let h = NeuronHistogram::from_values(0, &[0.0; 4], 4).unwrap();
        assert!(h.degenerate);
        assert_eq!(h.bin_edges, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total, 4);
    }

    #[test]
    fn uniform_split() {
        let h = NeuronHistogram::from_values(0, &[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.bin_edges, vec![0.0, 1.5, 3.0]);
        assert_eq!(h.counts, vec![2, 2]);
        assert!(!h.degenerate);
    }

    #[test]
    fn right_edge_belongs_to_last_bin_only() {
        let h = NeuronHistogram::from_values(0, &[0.0, 1.0, 2.0], 2).unwrap();
        // 1.0 sits on the interior edge and goes right.
        assert_eq!(h.counts, vec![1, 2]);
    }

    #[test]
    fn errors() {
        let m = ActivationMatrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(build_histograms(&m, 4), Err(PerceptError::InsufficientData(_))));
        let m = ActivationMatrix::new(2, 2, vec![0.0, 1.0, f32::NAN, 0.0]).unwrap();
        assert!(matches!(
            build_histograms(&m, 4),
            Err(PerceptError::NonFinite { row: 1, column: 0, .. })
        ));
        assert!(NeuronHistogram::from_values(0, &[0.0, 1.0], 1).is_err());
    }

    /// Smoothed local maxima holding at least a quarter of the peak height.
    fn prominent_modes(counts: &[u64]) -> Vec<usize> {
        let n = counts.len();
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(2);
                let hi = (i + 3).min(n);
                counts[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
            })
            .collect();
        let top = smooth.iter().cloned().fold(0.0, f64::max);
        (0..n)
            .filter(|&i| {
                let left = if i == 0 { f64::NEG_INFINITY } else { smooth[i - 1] };
                let right = if i + 1 == n { f64::NEG_INFINITY } else { smooth[i + 1] };
                smooth[i] > left && smooth[i] >= right && smooth[i] >= 0.25 * top
            })
            .collect()
    }

    #[test]
    fn bimodal_column_shows_two_separated_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(8.0, 1.0).unwrap();
        let values: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        let h = NeuronHistogram::from_values(0, &values, 64).unwrap();
        let modes = prominent_modes(&h.counts);
        assert_eq!(modes.len(), 2, "modes {modes:?} in {:?}", h.counts);
        assert!(modes[1] - modes[0] >= 5);
    }

    #[test]
    fn file_round_trip() {
        let m = ActivationMatrix::new(3, 2, vec![0.0, 1.0, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let hs = build_histograms(&m, 8).unwrap();
        let mut buf = Vec::new();
        write_histograms("cn", &hs, &PipelineConfig::default(), &mut buf).unwrap();
        let (label, back) = read_histograms(&buf[..]).unwrap();
        assert_eq!(label, "cn");
        assert_eq!(back, hs);
        assert!(back[1].degenerate);
    }

    proptest! {
        #[test]
        fn mass_conservation(values in prop::collection::vec(-1e3f64..1e3, 2..200), bins in 2usize..80) {
            let h = NeuronHistogram::from_values(0, &values, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
            prop_assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn permutation_invariance(values in prop::collection::vec(-50f64..50.0, 2..100), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = values.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                NeuronHistogram::from_values(0, &values, 16).unwrap(),
                NeuronHistogram::from_values(0, &shuffled, 16).unwrap()
            );
        }

        #[test]
        fn scaling_covariance(values in prop::collection::vec(-50f64..50.0, 2..100), exp in -3i32..4) {
            let a = 2f64.powi(exp);
            let scaled: Vec<f64> = values.iter().map(|v| v * a).collect();
            let h = NeuronHistogram::from_values(0, &values, 16).unwrap();
            let hs = NeuronHistogram::from_values(0, &scaled, 16).unwrap();
            prop_assert_eq!(&h.counts, &hs.counts);
            for (e, es) in h.bin_edges.iter().zip(&hs.bin_edges) {
                prop_assert!((e * a - es).abs() <= 1e-9 * es.abs().max(1.0));
            }
        }
    }
}
