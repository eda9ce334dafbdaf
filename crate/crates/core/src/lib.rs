//! Perceptual codes for example-based explanations of classifier predictions.
//!
//! Activations of a class's reference samples are summarized per neuron by a
//! small Gaussian mixture. A sample is then encoded as one bit per
//! (neuron, component): whether its activation fell inside that component's
//! interval, for components whose density peak marks them as relevant. The
//! codes of labeled samples form a per-class atlas, and the atlas entries
//! nearest in Hamming distance to a new sample's code are its prediction
//! basis.
//!
//! Modules follow the pipeline: [`wire`] → [`histogram`] → [`gmm`] →
//! [`encoder`] → [`atlas`] → [`retrieval`] → [`metrics`], with
//! [`projection`] for 2-D inspection and [`synth`] for generated test data.

pub mod atlas;
pub mod bits;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gmm;
pub mod histogram;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod retrieval;
pub mod synth;
pub mod wire;

pub use atlas::{build_atlas, load_atlas, save_atlas, Atlas, AtlasEntry};
pub use bits::PackedBits;
pub use config::{IntervalMode, PipelineConfig, WeightTransform};
pub use encoder::{encode, encode_dump, read_codes, write_codes, CodeSet, PerceptualCode};
pub use error::{PerceptError, Result};
pub use gmm::{fit_bank, fit_gmm, mark_relevancy, peak_value, read_bank, write_bank, ClassBank, EmConfig, GmmComponent, NeuronGmm};
pub use histogram::{build_histograms, NeuronHistogram};
pub use meta::SampleMetadata;
pub use metrics::{evaluate, p_acc, p_acc_max, EvalReport};
pub use projection::{project, Projection2D};
pub use retrieval::{hamming, query, weighted_hamming, QueryOptions, QueryResult, Searcher};
pub use synth::{generate, SynthOutput, SynthSpec};
pub use wire::{read_dump, write_dump, ActivationDump, ActivationMatrix};
