//! Whole-pipeline helpers: dump → bank → codes → atlas → report.

use crate::atlas::{build_atlas_with_config, Atlas};
use crate::config::PipelineConfig;
use crate::encoder::{encode_dump, CodeSet};
use crate::error::Result;
use crate::gmm::{fit_bank, ClassBank};
use crate::histogram::build_histograms;
use crate::meta::SampleMetadata;
use crate::metrics::{evaluate, EvalReport};
use crate::retrieval::QueryOptions;
use crate::wire::ActivationDump;

/// Histograms and mixture fits for every neuron of `dump`.
pub fn fit_dump(dump: &ActivationDump, config: &PipelineConfig) -> Result<ClassBank> {
    let histograms = build_histograms(&dump.values, config.bins)?;
    fit_bank(&dump.class_label, &histograms, config)
}

pub fn encode_with_bank(dump: &ActivationDump, bank: &ClassBank, config: &PipelineConfig) -> Result<CodeSet> {
    let codes = encode_dump(dump, bank, config.interval_mode)?;
    Ok(CodeSet::from_bank(bank, codes, config.clone()))
}

pub fn query_options(config: &PipelineConfig) -> QueryOptions {
    let base = QueryOptions::new(config.k);
    if config.weighted {
        base.weighted(config.weight_transform)
    } else {
        base
    }
}

/// Everything produced for one class.
#[derive(Debug, Clone)]
pub struct ClassRun {
    pub bank: ClassBank,
    pub codes: CodeSet,
    pub atlas: Atlas,
    pub report: EvalReport,
}

/// Fits a bank on `dump`, encodes it into an atlas, and scores every sample
/// leave-one-out against that atlas.
pub fn run_class(dump: &ActivationDump, metadata: &SampleMetadata, config: &PipelineConfig) -> Result<ClassRun> {
    let bank = fit_dump(dump, config)?;
    let codes = encode_with_bank(dump, &bank, config)?;
    let atlas = build_atlas_with_config(codes.codes.clone(), metadata, config.clone())?;
    let report = evaluate(
        &atlas,
        &codes.codes,
        |id| metadata.intra(id).map(str::to_string),
        query_options(config),
    )?;
    Ok(ClassRun { bank, codes, atlas, report })
}
