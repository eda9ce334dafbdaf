use std::fs::{self, File};
use std::io::BufReader;

use percept_core::histogram::{read_histograms, write_histograms};
use percept_core::pipeline::{encode_with_bank, fit_dump, run_class};
use percept_core::{
    build_atlas, build_histograms, fit_bank, generate, load_atlas, read_bank, read_codes, read_dump, save_atlas,
    write_bank, write_codes, PerceptError, PipelineConfig, SampleMetadata, SynthSpec,
};

fn small_spec() -> SynthSpec {
    SynthSpec::balanced(2, 2, 30, 6, 8.0, 25, 3)
}

#[test]
fn synth_files_round_trip_through_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = generate(&small_spec()).unwrap();
    let paths = out.write_to_dir(tmp.path()).unwrap();
    assert_eq!(paths.len(), 3);

    let meta = SampleMetadata::parse_tsv(&fs::read_to_string(tmp.path().join("meta.tsv")).unwrap()).unwrap();
    assert_eq!(meta, out.metadata);

    let config = PipelineConfig {
        bins: 32,
        q: 0.5,
        ..PipelineConfig::default()
    };
    let dump = read_dump(BufReader::new(File::open(&paths[0]).unwrap())).unwrap();
    assert_eq!(dump, out.dumps[0]);

    let hists = build_histograms(&dump.values, config.bins).unwrap();
    let mut buf = Vec::new();
    write_histograms(&dump.class_label, &hists, &config, &mut buf).unwrap();
    let (label, back) = read_histograms(buf.as_slice()).unwrap();
    assert_eq!(label, dump.class_label);
    assert_eq!(back, hists);

    let bank = fit_bank(&label, &back, &config).unwrap();
    assert_eq!(bank, fit_dump(&dump, &config).unwrap());
    let mut buf = Vec::new();
    write_bank(&bank, &mut buf).unwrap();
    let bank = read_bank(buf.as_slice()).unwrap();

    let codes = encode_with_bank(&dump, &bank, &config).unwrap();
    let mut buf = Vec::new();
    write_codes(&codes, &mut buf).unwrap();
    assert_eq!(read_codes(buf.as_slice()).unwrap(), codes);

    let atlas = build_atlas(codes.codes.clone(), &meta).unwrap();
    let mut buf = Vec::new();
    save_atlas(&atlas, &mut buf).unwrap();
    let loaded = load_atlas(buf.as_slice()).unwrap();
    assert_eq!(loaded, atlas);
    assert_eq!(loaded.entries[0].metadata.get("intra").map(String::as_str), meta.intra(loaded.entries[0].sample_id()));
}

#[test]
fn separated_intra_classes_retrieve_each_other() {
    let out = generate(&small_spec()).unwrap();
    let config = PipelineConfig {
        bins: 32,
        q: 0.5,
        ..PipelineConfig::default()
    };
    for dump in &out.dumps {
        let run = run_class(dump, &out.metadata, &config).unwrap();
        assert!(run.report.mean > 0.9, "{}: {}", dump.class_label, run.report.mean);
        assert_eq!(run.report.per_query.len(), 50);
    }
}

#[test]
fn flipped_weight_in_file_is_caught() {
    let out = generate(&small_spec()).unwrap();
    let config = PipelineConfig::default();
    let run = run_class(&out.dumps[0], &out.metadata, &config).unwrap();
    let mut buf = Vec::new();
    save_atlas(&run.atlas, &mut buf).unwrap();
    // Weights are the trailing u64s; bump the last one.
    let n = buf.len();
    buf[n - 8] = buf[n - 8].wrapping_add(1);
    assert!(matches!(load_atlas(buf.as_slice()), Err(PerceptError::Corruption(_))));
}
