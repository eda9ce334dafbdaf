//! Pipeline hyper-parameters and their defaults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PerceptError;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_COMPONENTS: usize = 2;
pub const DEFAULT_Q: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_K: usize = 5;

/// Half-width of the interval a value must fall in to set a component's bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntervalMode {
    /// `mean ± variance`, taken literally.
    #[default]
    Variance,
    /// `mean ± k·std`.
    KSigma { k: f64 },
}

impl IntervalMode {
    pub fn half_width(self, variance: f64) -> f64 {
        match self {
            IntervalMode::Variance => variance,
            IntervalMode::KSigma { k } => k * variance.sqrt(),
        }
    }
}

impl fmt::Display for IntervalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalMode::Variance => f.write_str("variance"),
            IntervalMode::KSigma { k } => write!(f, "k_sigma({k})"),
        }
    }
}

/// Accepts `variance`, `k_sigma(2.5)` or `k-sigma:2.5`.
impl FromStr for IntervalMode {
    type Err = PerceptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "variance" {
            return Ok(IntervalMode::Variance);
        }
        let inner = s
            .strip_prefix("k_sigma(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("k-sigma:"))
            .or_else(|| s.strip_prefix("k_sigma:"));
        match inner.map(str::parse::<f64>) {
            Some(Ok(k)) if k.is_finite() && k > 0.0 => Ok(IntervalMode::KSigma { k }),
            _ => Err(PerceptError::Parameter(format!(
                "invalid interval mode `{s}` (expected `variance` or `k_sigma(K)`)"
            ))),
        }
    }
}

/// Transform applied to the per-bit popularity counts before they weight the
/// Hamming distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightTransform {
    /// Raw counts.
    #[default]
    Identity,
    /// `1 / (1 + count)`.
    Inverse,
    /// `ln((entries + 1) / (count + 1))`.
    LogInverse,
}

impl WeightTransform {
    pub fn apply(self, count: u64, entries: usize) -> f64 {
        let c = count as f64;
        match self {
            WeightTransform::Identity => c,
            WeightTransform::Inverse => 1.0 / (1.0 + c),
            WeightTransform::LogInverse => ((entries as f64 + 1.0) / (c + 1.0)).ln(),
        }
    }
}

impl fmt::Display for WeightTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightTransform::Identity => "identity",
            WeightTransform::Inverse => "inverse",
            WeightTransform::LogInverse => "log_inverse",
        })
    }
}

impl FromStr for WeightTransform {
    type Err = PerceptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "identity" => Ok(WeightTransform::Identity),
            "inverse" => Ok(WeightTransform::Inverse),
            "log_inverse" => Ok(WeightTransform::LogInverse),
            other => Err(PerceptError::Parameter(format!(
                "invalid weight transform `{other}`"
            ))),
        }
    }
}

/// Every tunable of the pipeline. Artifacts embed the config that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bins: usize,
    pub components: usize,
    pub q: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub interval_mode: IntervalMode,
    pub k: usize,
    pub weighted: bool,
    pub weight_transform: WeightTransform,
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            components: DEFAULT_COMPONENTS,
            q: DEFAULT_Q,
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
            interval_mode: IntervalMode::Variance,
            k: DEFAULT_K,
            weighted: false,
            weight_transform: WeightTransform::Identity,
            seed: None,
        }
    }
}
