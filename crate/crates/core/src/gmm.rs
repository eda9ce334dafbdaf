//! One-dimensional Gaussian mixtures fitted to neuron histograms, and the
//! peak-density relevancy rule that decides which components may set bits.
//!
//! EM runs over `(bin center, count)` pairs, so the cost per iteration is
//! `O(T·B)` no matter how many samples built the histogram. Initialization is
//! deterministic: means at evenly spaced weighted quantiles, every variance at
//! the overall weighted variance, uniform weights.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE};
use crate::error::{PerceptError, Result};
use crate::histogram::NeuronHistogram;
use crate::wire::container::{self, PayloadReader};
use crate::wire::{read_artifact, ArtifactKind};

pub const BANK_FORMAT_VERSION: u32 = 1;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Relative change of the weighted log-likelihood below which EM stops.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl From<&PipelineConfig> for EmConfig {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            tolerance: c.tolerance,
            max_iters: c.max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
    pub relevant: bool,
}

impl GmmComponent {
    /// Density of the component at its own mean.
    pub fn peak(&self) -> f64 {
        peak_value(self.variance)
    }
}

/// `1 / sqrt(2π·variance)`: the height of a normal density at its mean.
pub fn peak_value(variance: f64) -> f64 {
    1.0 / (2.0 * PI * variance).sqrt()
}

/// Smallest variance a component may take for a histogram spanning `range`.
pub fn variance_floor(range: f64) -> f64 {
    let scaled = 1e-3 * range;
    (scaled * scaled).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGmm {
    pub neuron_index: usize,
    /// Sorted by ascending mean.
    pub components: Vec<GmmComponent>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Fitted to a histogram with a single occupied bin.
    pub degenerate: bool,
    pub variance_floor: f64,
}

impl NeuronGmm {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.is_empty() || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(PerceptError::Validation(format!(
                "neuron {}: component weights sum to {sum}",
                self.neuron_index
            )));
        }
        for c in &self.components {
            let finite = c.weight.is_finite() && c.mean.is_finite() && c.variance.is_finite();
            if !finite || c.weight < 0.0 || c.variance < self.variance_floor || c.variance <= 0.0 {
                return Err(PerceptError::Validation(format!(
                    "neuron {}: invalid component {c:?}",
                    self.neuron_index
                )));
            }
        }
        if self.components.windows(2).any(|w| w[0].mean > w[1].mean) {
            return Err(PerceptError::Validation(format!(
                "neuron {}: components not in ascending-mean order",
                self.neuron_index
            )));
        }
        Ok(())
    }
}

struct WeightedPoints {
    xs: Vec<f64>,
    ws: Vec<f64>,
    total: f64,
}

impl WeightedPoints {
    fn from_histogram(hist: &NeuronHistogram) -> Self {
        let (xs, ws): (Vec<f64>, Vec<f64>) = hist
            .centers()
            .zip(&hist.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(x, &c)| (x, c as f64))
            .unzip();
        let total = ws.iter().sum();
        Self { xs, ws, total }
    }

    fn mean(&self) -> f64 {
        self.xs.iter().zip(&self.ws).map(|(x, w)| x * w).sum::<f64>() / self.total
    }

    fn variance(&self, mean: f64) -> f64 {
        self.xs
            .iter()
            .zip(&self.ws)
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum::<f64>()
            / self.total
    }
}

/// Weighted quantile, interpolating linearly inside the bin that crosses it.
fn histogram_quantile(hist: &NeuronHistogram, p: f64) -> f64 {
    let target = p * hist.total as f64;
    let mut cum = 0.0;
    for (b, &c) in hist.counts.iter().enumerate() {
        let c = c as f64;
        if c > 0.0 && cum + c >= target {
            let frac = ((target - cum) / c).clamp(0.0, 1.0);
            let lo = hist.bin_edges[b];
            return lo + frac * (hist.bin_edges[b + 1] - lo);
        }
        cum += c;
    }
    hist.max()
}

fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + d * d / variance)
}

/// E-step: fills `resp` (row-major point × component) and returns the
/// weighted log-likelihood.
fn expectation(points: &WeightedPoints, comps: &[GmmComponent], resp: &mut [f64]) -> f64 {
    let t = comps.len();
    let mut ll = 0.0;
    let mut logs = vec![0.0; t];
    for (i, (&x, &w)) in points.xs.iter().zip(&points.ws).enumerate() {
        let mut top = f64::NEG_INFINITY;
        for (l, c) in logs.iter_mut().zip(comps) {
            *l = if c.weight > 0.0 {
                c.weight.ln() + log_normal_pdf(x, c.mean, c.variance)
            } else {
                f64::NEG_INFINITY
            };
            top = top.max(*l);
        }
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let lse = top + sum.ln();
        for (r, l) in resp[i * t..(i + 1) * t].iter_mut().zip(&logs) {
            *r = (l - lse).exp();
        }
        ll += w * lse;
    }
    ll
}

fn maximization(points: &WeightedPoints, comps: &mut [GmmComponent], resp: &[f64], floor: f64) {
    let t = comps.len();
    for (j, c) in comps.iter_mut().enumerate() {
        let mut mass = 0.0;
        let mut first = 0.0;
        for (i, (&x, &w)) in points.xs.iter().zip(&points.ws).enumerate() {
            let r = w * resp[i * t + j];
            mass += r;
            first += r * x;
        }
        c.weight = mass / points.total;
        // A starved component keeps its location; its weight carries the news.
        if mass <= 1e-12 * points.total {
            continue;
        }
        let mean = first / mass;
        let second: f64 = points
            .xs
            .iter()
            .zip(&points.ws)
            .enumerate()
            .map(|(i, (&x, &w))| w * resp[i * t + j] * (x - mean) * (x - mean))
            .sum();
        c.mean = mean;
        c.variance = (second / mass).max(floor);
    }
    let sum: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= sum;
    }
}

/// Fits a `components`-term mixture to `hist` by weighted EM.
pub fn fit_gmm(hist: &NeuronHistogram, components: usize, config: &EmConfig) -> Result<NeuronGmm> {
    fit_gmm_traced(hist, components, config, None)
}

/// As [`fit_gmm`], pushing the log-likelihood after every M-step to `trace`.
pub fn fit_gmm_traced(
    hist: &NeuronHistogram,
    components: usize,
    config: &EmConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<NeuronGmm> {
    if components == 0 {
        return Err(PerceptError::Parameter("need at least one mixture component".into()));
    }
    if config.tolerance.is_nan() || config.tolerance < 0.0 {
        return Err(PerceptError::Parameter(format!(
            "EM tolerance must be non-negative, got {}",
            config.tolerance
        )));
    }
    hist.validate()?;
    let floor = variance_floor(hist.range());
    let points = WeightedPoints::from_histogram(hist);
    let t = components;

    if points.xs.len() == 1 {
        let mean = if hist.degenerate {
            0.5 * (hist.min() + hist.max())
        } else {
            points.xs[0]
        };
        let comps: Vec<GmmComponent> = (0..t)
            .map(|i| GmmComponent {
                weight: if i == 0 { 1.0 } else { 0.0 },
                mean,
                variance: floor,
                relevant: false,
            })
            .collect();
        let mut resp = vec![0.0; t];
        let ll = expectation(&points, &comps, &mut resp);
        return Ok(NeuronGmm {
            neuron_index: hist.neuron_index,
            components: comps,
            log_likelihood: ll,
            iterations: 0,
            degenerate: true,
            variance_floor: floor,
        });
    }

    let overall = points.variance(points.mean()).max(floor);
    let mut comps: Vec<GmmComponent> = (0..t)
        .map(|i| GmmComponent {
            weight: 1.0 / t as f64,
            mean: histogram_quantile(hist, (i as f64 + 0.5) / t as f64),
            variance: overall,
            relevant: false,
        })
        .collect();

    let mut resp = vec![0.0; points.xs.len() * t];
    let mut ll = expectation(&points, &comps, &mut resp);
    let mut iterations = 0;
    while iterations < config.max_iters {
        maximization(&points, &mut comps, &resp, floor);
        iterations += 1;
        let next = expectation(&points, &comps, &mut resp);
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(next);
        }
        let converged = (next - ll).abs() <= config.tolerance * ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if converged {
            break;
        }
    }

    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let gmm = NeuronGmm {
        neuron_index: hist.neuron_index,
        components: comps,
        log_likelihood: ll,
        iterations,
        degenerate: false,
        variance_floor: floor,
    };
    gmm.validate()?;
    Ok(gmm)
}

/// Fitted mixtures for every tracked neuron of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBank {
    pub class_label: String,
    pub neuron_gmms: Vec<NeuronGmm>,
    /// Mean of the peak densities of all `M·T` components.
    pub peak_mean: f64,
    /// Relevancy scale `q`.
    pub relevancy_scale: f64,
    pub config: PipelineConfig,
}

impl ClassBank {
    /// Builds a bank from fitted mixtures and marks relevancy with `q`.
    pub fn new(
        class_label: impl Into<String>,
        neuron_gmms: Vec<NeuronGmm>,
        q: f64,
        config: PipelineConfig,
    ) -> Result<Self> {
        let components = neuron_gmms.first().map_or(0, |g| g.components.len());
        if neuron_gmms.iter().any(|g| g.components.len() != components) {
            return Err(PerceptError::Consistency(
                "all neurons of a bank must have the same number of components".into(),
            ));
        }
        let bank = ClassBank {
            class_label: class_label.into(),
            neuron_gmms,
            peak_mean: 0.0,
            relevancy_scale: q,
            config,
        };
        mark_relevancy(&bank, q)
    }

    pub fn neurons(&self) -> usize {
        self.neuron_gmms.len()
    }

    pub fn components(&self) -> usize {
        self.neuron_gmms.first().map_or(0, |g| g.components.len())
    }

    /// Code length `M·T`.
    pub fn code_length(&self) -> usize {
        self.neurons() * self.components()
    }

    pub fn relevant_count(&self) -> usize {
        self.neuron_gmms
            .iter()
            .flat_map(|g| &g.components)
            .filter(|c| c.relevant)
            .count()
    }

    fn compute_peak_mean(gmms: &[NeuronGmm]) -> f64 {
        let (sum, n) = gmms
            .iter()
            .flat_map(|g| &g.components)
            .fold((0.0, 0usize), |(s, n), c| (s + c.peak(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Marks a component relevant iff its peak density exceeds `q` times the
/// bank-wide mean peak.
pub fn mark_relevancy(bank: &ClassBank, q: f64) -> Result<ClassBank> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(PerceptError::Parameter(format!("q must be a positive number, got {q}")));
    }
    let peak_mean = ClassBank::compute_peak_mean(&bank.neuron_gmms);
    let threshold = q * peak_mean;
    let neuron_gmms = bank
        .neuron_gmms
        .par_iter()
        .map(|g| {
            let mut g = g.clone();
            for c in &mut g.components {
                c.relevant = c.peak() > threshold;
            }
            g
        })
        .collect();
    let mut config = bank.config.clone();
    config.q = q;
    Ok(ClassBank {
        class_label: bank.class_label.clone(),
        neuron_gmms,
        peak_mean,
        relevancy_scale: q,
        config,
    })
}

/// Fits every histogram and marks relevancy with `config.q`.
pub fn fit_bank(
    class_label: &str,
    histograms: &[NeuronHistogram],
    config: &PipelineConfig,
) -> Result<ClassBank> {
    let em = EmConfig::from(config);
    let gmms = histograms
        .par_iter()
        .map(|h| fit_gmm(h, config.components, &em))
        .collect::<Result<Vec<_>>>()?;
    ClassBank::new(class_label, gmms, config.q, config.clone())
}

#[derive(Serialize, Deserialize)]
struct BankMetadata {
    class_label: String,
    neurons: usize,
    components: usize,
    peak_mean: f64,
    q: f64,
    config: PipelineConfig,
}

pub fn write_bank<W: Write>(bank: &ClassBank, sink: W) -> Result<u64> {
    let meta = BankMetadata {
        class_label: bank.class_label.clone(),
        neurons: bank.neurons(),
        components: bank.components(),
        peak_mean: bank.peak_mean,
        q: bank.relevancy_scale,
        config: bank.config.clone(),
    };
    let mut w = container::write_header(sink, ArtifactKind::Bank, BANK_FORMAT_VERSION, &meta)?;
    let mut p = Vec::new();
    for g in &bank.neuron_gmms {
        p.extend_from_slice(&(g.neuron_index as u64).to_le_bytes());
        p.extend_from_slice(&g.log_likelihood.to_le_bytes());
        p.extend_from_slice(&(g.iterations as u64).to_le_bytes());
        p.push(g.degenerate as u8);
        p.extend_from_slice(&g.variance_floor.to_le_bytes());
        for c in &g.components {
            p.extend_from_slice(&c.weight.to_le_bytes());
            p.extend_from_slice(&c.mean.to_le_bytes());
            p.extend_from_slice(&c.variance.to_le_bytes());
            p.push(c.relevant as u8);
        }
    }
    w.put(&p)?;
    w.finish()
}

pub fn read_bank<R: Read>(source: R) -> Result<ClassBank> {
    let raw = read_artifact(source)?;
    raw.expect_kind(ArtifactKind::Bank, BANK_FORMAT_VERSION)?;
    let meta: BankMetadata = raw.metadata_as()?;
    let per_neuron = 8 + 8 + 8 + 1 + 8 + meta.components * (3 * 8 + 1);
    raw.expect_payload_len((per_neuron * meta.neurons) as u64)?;
    let mut r = PayloadReader::new(&raw.payload);
    let mut gmms = Vec::with_capacity(meta.neurons);
    for _ in 0..meta.neurons {
        let neuron_index = r.u64()? as usize;
        let log_likelihood = r.f64()?;
        let iterations = r.u64()? as usize;
        let degenerate = r.u8()? != 0;
        let variance_floor = r.f64()?;
        let components = (0..meta.components)
            .map(|_| {
                Ok(GmmComponent {
                    weight: r.f64()?,
                    mean: r.f64()?,
                    variance: r.f64()?,
                    relevant: r.u8()? != 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = NeuronGmm {
            neuron_index,
            components,
            log_likelihood,
            iterations,
            degenerate,
            variance_floor,
        };
        g.validate()?;
        gmms.push(g);
    }
    r.finish()?;

    let recomputed = ClassBank::compute_peak_mean(&gmms);
    if (recomputed - meta.peak_mean).abs() > 1e-9 * recomputed.abs() {
        return Err(PerceptError::Corruption(format!(
            "stored peak mean {} disagrees with recomputed {recomputed}",
            meta.peak_mean
        )));
    }
    let threshold = meta.q * meta.peak_mean;
    for g in &gmms {
        if g.components.iter().any(|c| c.relevant != (c.peak() > threshold)) {
            return Err(PerceptError::Corruption(format!(
                "neuron {}: relevancy flags inconsistent with q = {}",
                g.neuron_index, meta.q
            )));
        }
    }
    Ok(ClassBank {
        class_label: meta.class_label,
        neuron_gmms: gmms,
        peak_mean: meta.peak_mean,
        relevancy_scale: meta.q,
        config: meta.config,
    })
}
