use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use percept_core::atlas::build_atlas_with_config;
use percept_core::histogram::{read_histograms, write_histograms};
use percept_core::wire::container::{read_artifact, ArtifactKind};
use percept_core::{
    build_histograms, fit_bank, load_atlas, project, read_bank, read_codes, read_dump, save_atlas, write_bank,
    write_codes, Atlas, CodeSet, PipelineConfig, QueryOptions, SampleMetadata, Searcher, SynthSpec,
};
use serde_json::Value;

use crate::{AtlasCommand, Command, FitArgs, SearchArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { file } => validate(&file),
        Command::Info { file } => info(&file),
        Command::Hist { dump, bins, out } => hist(&dump, bins, &out),
        Command::Fit(args) => fit(args),
        Command::Encode {
            dump,
            bank,
            out,
            interval_mode,
            predicted,
        } => {
            let dump_data = read_dump(open(&dump)?).with_context(|| format!("reading {}", dump.display()))?;
            let bank = read_bank(open(&bank)?).with_context(|| format!("reading {}", bank.display()))?;
            let predicted = predicted.as_deref().unwrap_or(&dump_data.class_label);
            if predicted != bank.class_label {
                bail!(
                    "predicted class `{predicted}` does not match bank class `{}`",
                    bank.class_label
                );
            }
            let mut config = bank.config.clone();
            config.interval_mode = interval_mode;
            let codes = percept_core::encode_dump(&dump_data, &bank, interval_mode)?;
            let set = CodeSet::from_bank(&bank, codes, config);
            create(&out, |w| write_codes(&set, w))
        }
        Command::Atlas(AtlasCommand::Build { codes, meta, out }) => atlas_build(&codes, meta.as_deref(), &out),
        Command::Query {
            atlas,
            code,
            search,
            exclude_self,
        } => query(&atlas, &code, &search, exclude_self),
        Command::Eval {
            atlas,
            test,
            meta,
            search,
            report,
        } => eval(&atlas, &test, meta.as_deref(), &search, &report),
        Command::Project { atlas, meta, out, svg } => {
            let atlas = read_atlas(&atlas)?;
            let mut projection = project(&atlas)?;
            if let Some(m) = meta {
                projection = projection.with_tags(&read_meta(&m)?);
            }
            write_text(&out, &projection.to_tsv())?;
            if let Some(svg) = svg {
                write_text(&svg, &projection.to_svg(&format!("class {}", atlas.class_label)))?;
            }
            Ok(())
        }
        Command::Synth { spec, out_dir } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec = SynthSpec::parse(&text)?;
            let output = percept_core::generate(&spec)?;
            for path in output.write_to_dir(&out_dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> percept_core::Result<u64>,
{
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_meta(path: &Path) -> Result<SampleMetadata> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SampleMetadata::parse_tsv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_atlas(path: &Path) -> Result<Atlas> {
    load_atlas(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_code_set(path: &Path) -> Result<CodeSet> {
    read_codes(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn kind_of(path: &Path) -> Result<ArtifactKind> {
    let raw = read_artifact(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(raw.kind)
}

fn validate(path: &Path) -> Result<()> {
    let kind = kind_of(path)?;
    let summary = match kind {
        ArtifactKind::Activations => {
            let d = read_dump(open(path)?)?;
            format!("class={} samples={} neurons={}", d.class_label, d.samples(), d.neurons())
        }
        ArtifactKind::Histograms => {
            let (label, h) = read_histograms(open(path)?)?;
            format!("class={label} neurons={}", h.len())
        }
        ArtifactKind::Bank => {
            let b = read_bank(open(path)?)?;
            format!(
                "class={} neurons={} components={} relevant={}",
                b.class_label,
                b.neurons(),
                b.components(),
                b.relevant_count()
            )
        }
        ArtifactKind::Codes => {
            let c = read_codes(open(path)?)?;
            format!("class={} codes={} bits={}", c.class_label, c.codes.len(), c.code_length())
        }
        ArtifactKind::Atlas => {
            let a = read_atlas(path)?;
            format!("class={} entries={} bits={}", a.class_label, a.len(), a.code_length)
        }
    };
    println!("ok\t{}\t{summary}", kind.extension());
    Ok(())
}

/// Long arrays (sample ids, per-entry metadata) are cut to a preview.
fn abbreviate(v: Value) -> Value {
    const KEEP: usize = 4;
    match v {
        Value::Array(items) if items.len() > 2 * KEEP => {
            let n = items.len();
            let mut out: Vec<Value> = items.into_iter().take(KEEP).map(abbreviate).collect();
            out.push(Value::String(format!("... {} more", n - KEEP)));
            Value::Array(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(abbreviate).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, abbreviate(v))).collect()),
        other => other,
    }
}

fn info(path: &Path) -> Result<()> {
    let raw = read_artifact(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    println!("kind: {}", raw.kind.extension());
    println!("version: {}", raw.version);
    println!("payload_bytes: {}", raw.payload.len());
    println!("{}", serde_json::to_string_pretty(&abbreviate(raw.metadata))?);
    Ok(())
}

fn seed_of(attributes: &std::collections::BTreeMap<String, String>) -> Option<u64> {
    attributes.get("seed").and_then(|s| s.parse().ok())
}

fn hist(dump: &Path, bins: usize, out: &Path) -> Result<()> {
    let d = read_dump(open(dump)?).with_context(|| format!("reading {}", dump.display()))?;
    let config = PipelineConfig {
        bins,
        seed: seed_of(&d.attributes),
        ..PipelineConfig::default()
    };
    let h = build_histograms(&d.values, bins)?;
    create(out, |w| write_histograms(&d.class_label, &h, &config, w))
}

fn fit(args: FitArgs) -> Result<()> {
    let mut config = PipelineConfig {
        bins: args.bins,
        components: args.components,
        q: args.q,
        tolerance: args.tolerance,
        max_iters: args.max_iters,
        ..PipelineConfig::default()
    };
    let (label, histograms) = match kind_of(&args.input)? {
        ArtifactKind::Activations => {
            let d = read_dump(open(&args.input)?)?;
            config.seed = seed_of(&d.attributes);
            let h = build_histograms(&d.values, args.bins)?;
            (d.class_label, h)
        }
        ArtifactKind::Histograms => {
            let raw = read_artifact(open(&args.input)?)?;
            config.seed = raw.metadata.pointer("/config/seed").and_then(Value::as_u64);
            let (label, h) = read_histograms(open(&args.input)?)?;
            config.bins = h.first().map_or(args.bins, |h| h.bins());
            (label, h)
        }
        other => bail!(
            "{} is a .{} file; fit needs an activation dump or histograms",
            args.input.display(),
            other.extension()
        ),
    };
    let bank = fit_bank(&label, &histograms, &config)?;
    create(&args.out, |w| write_bank(&bank, w))
}

fn atlas_build(code_files: &[std::path::PathBuf], meta: Option<&Path>, out: &Path) -> Result<()> {
    let mut codes = Vec::new();
    let mut config: Option<PipelineConfig> = None;
    for path in code_files {
        let set = read_code_set(path)?;
        config.get_or_insert(set.config);
        codes.extend(set.codes);
    }
    let metadata = match meta {
        Some(m) => read_meta(m)?,
        None => SampleMetadata::new(),
    };
    let atlas = build_atlas_with_config(codes, &metadata, config.unwrap_or_default())?;
    let mut bytes = Vec::new();
    save_atlas(&atlas, &mut bytes)?;
    fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;

    let m = atlas.memory_report(bytes.len() as u64);
    println!("entries\t{}", m.samples);
    println!("code_bits\t{}", atlas.code_length);
    println!("code_bytes_per_sample\t{}", m.code_bytes_per_sample);
    println!("overhead_bytes_per_sample\t{:.1}", m.overhead_bytes_per_sample);
    println!("raw_bytes_per_sample\t{}", m.raw_bytes_per_sample);
    println!("compression_ratio\t{:.2}", m.compression_ratio());
    Ok(())
}

fn options(search: &SearchArgs) -> QueryOptions {
    let base = QueryOptions::new(search.k);
    if search.weighted {
        base.weighted(search.weight_transform)
    } else {
        base
    }
}

fn query(atlas: &Path, code: &str, search: &SearchArgs, exclude_self: bool) -> Result<()> {
    let Some((file, id)) = code.rsplit_once(':') else {
        bail!("--code must look like codes.pccode:sample_id, got `{code}`");
    };
    let atlas = read_atlas(atlas)?;
    let set = read_code_set(Path::new(file))?;
    let Some(code) = set.find(id) else {
        bail!("sample `{id}` is not in {file}");
    };
    let searcher = Searcher::new(&atlas, options(search).exclude_self(exclude_self))?;
    let result = searcher.query(code)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "rank\tsample_id\tdistance\tmetadata")?;
    for (rank, n) in result.neighbors.iter().enumerate() {
        let meta: Vec<String> = n.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let distance = if result.weighted {
            format!("{:.6}", n.distance)
        } else {
            format!("{}", n.distance)
        };
        writeln!(out, "{}\t{}\t{distance}\t{}", rank + 1, n.sample_id, meta.join(";"))?;
    }
    Ok(())
}

fn eval(atlas: &Path, test: &Path, meta: Option<&Path>, search: &SearchArgs, report: &Path) -> Result<()> {
    let atlas = read_atlas(atlas)?;
    let set = read_code_set(test)?;
    let metadata = match meta {
        Some(m) => read_meta(m)?,
        None => SampleMetadata::new(),
    };
    let from_atlas = |id: &str| {
        atlas
            .entry(id)
            .and_then(|e| e.metadata.get(percept_core::meta::INTRA_KEY))
            .cloned()
    };
    let opts = options(search);
    let result = percept_core::evaluate(
        &atlas,
        &set.codes,
        |id| metadata.intra(id).map(str::to_string).or_else(|| from_atlas(id)),
        opts,
    )?;

    let mut config = atlas.config.clone();
    config.k = opts.k;
    config.weighted = opts.weighted;
    config.weight_transform = opts.weight_transform;
    let provenance = vec![
        ("weight_transform".to_string(), opts.weight_transform.to_string()),
        ("test_class".to_string(), set.class_label.clone()),
        ("config".to_string(), serde_json::to_string(&config)?),
    ];
    write_text(report, &result.to_tsv(&provenance))?;
    println!("mean_p_acc\t{:.6}", result.mean);
    println!("std_p_acc\t{:.6}", result.std);
    Ok(())
}
