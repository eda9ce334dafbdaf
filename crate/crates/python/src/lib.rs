//! Python module `percept`: dumps, bank fitting, encoding, atlas retrieval,
//! evaluation, projection and synthetic data.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use percept_core as core;
use percept_core::{IntervalMode, PipelineConfig, QueryOptions, WeightTransform};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(percept, PerceptError, PyValueError, "Raised for invalid data, files or parameters.");

fn err(e: core::PerceptError) -> PyErr {
    match e {
        core::PerceptError::Io { source, .. } => PyOSError::new_err(source.to_string()),
        other => PerceptError::new_err(other.to_string()),
    }
}

fn open(path: &str) -> PyResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
}

fn save<F>(path: &str, write: F) -> PyResult<u64>
where
    F: FnOnce(&mut BufWriter<File>) -> core::Result<u64>,
{
    let f = File::create(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    let mut w = BufWriter::new(f);
    let n = write(&mut w).map_err(err)?;
    w.flush().map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    Ok(n)
}

fn parse<T: std::str::FromStr<Err = core::PerceptError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

type Meta = HashMap<String, BTreeMap<String, String>>;
type Hit = (String, f64, BTreeMap<String, String>);

fn to_metadata(meta: Option<Meta>) -> core::SampleMetadata {
    let mut out = core::SampleMetadata::new();
    for (id, attrs) in meta.into_iter().flatten() {
        for (k, v) in attrs {
            out.insert(id.clone(), k, v);
        }
    }
    out
}

fn from_metadata(meta: &core::SampleMetadata) -> Meta {
    meta.iter().map(|(id, a)| (id.clone(), a.clone())).collect()
}

/// Activations of one class: a samples × neurons float32 matrix.
#[pyclass(module = "percept", skip_from_py_object)]
#[derive(Clone)]
struct ActivationDump {
    inner: core::ActivationDump,
}

#[pymethods]
impl ActivationDump {
    #[new]
    fn new(class_label: String, sample_ids: Vec<String>, rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let values = core::ActivationMatrix::from_rows(&rows).map_err(err)?;
        let inner = core::ActivationDump::single_layer(class_label, sample_ids, values).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::read_dump(open(path)?).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<u64> {
        save(path, |w| core::write_dump(&self.inner, w))
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids.clone()
    }

    /// `(samples, neurons)`
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.samples(), self.inner.neurons())
    }

    #[getter]
    fn attributes(&self) -> BTreeMap<String, String> {
        self.inner.attributes.clone()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.samples() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.values.row(i).to_vec())
    }

    fn rows(&self) -> Vec<Vec<f32>> {
        (0..self.inner.samples()).map(|i| self.inner.values.row(i).to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        let (k, m) = self.shape();
        format!("ActivationDump(class_label={:?}, samples={k}, neurons={m})", self.inner.class_label)
    }
}

/// Per-neuron mixtures of one class with relevancy flags.
#[pyclass(module = "percept", skip_from_py_object)]
#[derive(Clone)]
struct ClassBank {
    inner: core::ClassBank,
}

#[pymethods]
impl ClassBank {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::read_bank(open(path)?).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<u64> {
        save(path, |w| core::write_bank(&self.inner, w))
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    #[getter]
    fn neurons(&self) -> usize {
        self.inner.neurons()
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.components()
    }

    #[getter]
    fn code_length(&self) -> usize {
        self.inner.code_length()
    }

    #[getter]
    fn peak_mean(&self) -> f64 {
        self.inner.peak_mean
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.relevancy_scale
    }

    fn relevant_count(&self) -> usize {
        self.inner.relevant_count()
    }

    /// `[(weight, mean, variance, relevant), ...]` for neuron `j`.
    fn mixture(&self, j: usize) -> PyResult<Vec<(f64, f64, f64, bool)>> {
        let g = self
            .inner
            .neuron_gmms
            .get(j)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("neuron {j} out of range")))?;
        Ok(g.components.iter().map(|c| (c.weight, c.mean, c.variance, c.relevant)).collect())
    }

    /// Copy of this bank with relevancy re-marked at scale `q`.
    fn with_q(&self, q: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::mark_relevancy(&self.inner, q).map_err(err)?,
        })
    }

    #[pyo3(signature = (values, sample_id, interval_mode = "variance"))]
    fn encode(&self, values: Vec<f64>, sample_id: String, interval_mode: &str) -> PyResult<PerceptualCode> {
        let mode: IntervalMode = parse(interval_mode)?;
        Ok(PerceptualCode {
            inner: core::encode(&values, &self.inner, sample_id, mode).map_err(err)?,
        })
    }

    #[pyo3(signature = (dump, interval_mode = "variance"))]
    fn encode_dump(&self, py: Python<'_>, dump: &ActivationDump, interval_mode: &str) -> PyResult<CodeSet> {
        let mode: IntervalMode = parse(interval_mode)?;
        let mut config = self.inner.config.clone();
        config.interval_mode = mode;
        let bank = &self.inner;
        let d = &dump.inner;
        let codes = py.detach(|| core::encode_dump(d, bank, mode)).map_err(err)?;
        Ok(CodeSet {
            inner: core::CodeSet::from_bank(bank, codes, config),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "ClassBank(class_label={:?}, neurons={}, components={}, relevant={})",
            self.inner.class_label,
            self.inner.neurons(),
            self.inner.components(),
            self.inner.relevant_count()
        )
    }
}

#[pyclass(module = "percept", skip_from_py_object)]
#[derive(Clone)]
struct PerceptualCode {
    inner: core::PerceptualCode,
}

#[pymethods]
impl PerceptualCode {
    #[new]
    fn new(bits: Vec<bool>, class_label: String, sample_id: String) -> Self {
        Self {
            inner: core::PerceptualCode {
                bits: core::PackedBits::from_bools(&bits),
                class_label,
                sample_id,
            },
        }
    }

    #[getter]
    fn sample_id(&self) -> String {
        self.inner.sample_id.clone()
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    fn bits(&self) -> Vec<bool> {
        self.inner.bits.to_bools()
    }

    fn count_ones(&self) -> u64 {
        self.inner.bits.count_ones()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PerceptualCode(sample_id={:?}, class_label={:?}, bits={})",
            self.inner.sample_id,
            self.inner.class_label,
            self.inner.len()
        )
    }
}

/// Codes of one class as stored in a `.pccode` file.
#[pyclass(module = "percept", skip_from_py_object)]
#[derive(Clone)]
struct CodeSet {
    inner: core::CodeSet,
}

#[pymethods]
impl CodeSet {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::read_codes(open(path)?).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<u64> {
        save(path, |w| core::write_codes(&self.inner, w))
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    #[getter]
    fn codes(&self) -> Vec<PerceptualCode> {
        self.inner
            .codes
            .iter()
            .map(|c| PerceptualCode { inner: c.clone() })
            .collect()
    }

    fn get(&self, sample_id: &str) -> Option<PerceptualCode> {
        self.inner.find(sample_id).map(|c| PerceptualCode { inner: c.clone() })
    }

    fn __len__(&self) -> usize {
        self.inner.codes.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "CodeSet(class_label={:?}, codes={}, bits={})",
            self.inner.class_label,
            self.inner.codes.len(),
            self.inner.code_length()
        )
    }
}

fn options(k: usize, weighted: bool, weight_transform: &str, exclude_self: bool) -> PyResult<QueryOptions> {
    let mut o = QueryOptions::new(k).exclude_self(exclude_self);
    if weighted {
        o = o.weighted(parse::<WeightTransform>(weight_transform)?);
    }
    Ok(o)
}

/// Encoded samples of one class with bit popularity weights.
#[pyclass(module = "percept")]
struct Atlas {
    inner: core::Atlas,
}

#[pymethods]
impl Atlas {
    /// `metadata` maps sample id to a dict of attributes (e.g. `intra`).
    #[staticmethod]
    #[pyo3(signature = (codes, metadata = None))]
    fn build(codes: &CodeSet, metadata: Option<Meta>) -> PyResult<Self> {
        let meta = to_metadata(metadata);
        let inner = core::atlas::build_atlas_with_config(codes.inner.codes.clone(), &meta, codes.inner.config.clone())
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::load_atlas(open(path)?).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<u64> {
        save(path, |w| core::save_atlas(&self.inner, w))
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    #[getter]
    fn code_length(&self) -> usize {
        self.inner.code_length
    }

    #[getter]
    fn weights(&self) -> Vec<u64> {
        self.inner.weights.clone()
    }

    fn sample_ids(&self) -> Vec<String> {
        self.inner.entries.iter().map(|e| e.sample_id().to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `[(sample_id, distance, metadata), ...]`, nearest first.
    #[pyo3(signature = (code, k = 5, weighted = false, weight_transform = "identity", exclude_self = false))]
    fn query(
        &self,
        code: &PerceptualCode,
        k: usize,
        weighted: bool,
        weight_transform: &str,
        exclude_self: bool,
    ) -> PyResult<Vec<Hit>> {
        let opts = options(k, weighted, weight_transform, exclude_self)?;
        let r = core::query(&self.inner, &code.inner, opts).map_err(err)?;
        Ok(r.neighbors
            .into_iter()
            .map(|n| (n.sample_id, n.distance, n.metadata))
            .collect())
    }

    /// Leave-one-out accuracy of `codes`. Intra tags come from `intra`
    /// (sample id → tag) or else from the atlas entry metadata.
    #[pyo3(signature = (codes, k = 5, weighted = false, weight_transform = "identity", intra = None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        codes: &CodeSet,
        k: usize,
        weighted: bool,
        weight_transform: &str,
        intra: Option<HashMap<String, String>>,
    ) -> PyResult<EvalReport> {
        let opts = options(k, weighted, weight_transform, true)?;
        let atlas = &self.inner;
        let intra = intra.unwrap_or_default();
        let lookup = |id: &str| {
            intra.get(id).cloned().or_else(|| {
                atlas
                    .entry(id)
                    .and_then(|e| e.metadata.get(core::meta::INTRA_KEY).cloned())
            })
        };
        let test = &codes.inner.codes;
        let report = py.detach(|| core::evaluate(atlas, test, lookup, opts)).map_err(err)?;
        Ok(EvalReport { inner: report })
    }

    /// 2-D PCA of the codes.
    fn project(&self) -> PyResult<Projection> {
        Ok(Projection {
            inner: core::project(&self.inner).map_err(err)?,
        })
    }
}

#[pyclass(module = "percept")]
struct EvalReport {
    inner: core::EvalReport,
}

#[pymethods]
impl EvalReport {
    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn std(&self) -> f64 {
        self.inner.std
    }

    #[getter]
    fn per_query(&self) -> Vec<(String, f64)> {
        self.inner.per_query.clone()
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv(&[])
    }

    fn __repr__(&self) -> String {
        format!(
            "EvalReport(queries={}, mean={:.6}, std={:.6})",
            self.inner.per_query.len(),
            self.inner.mean,
            self.inner.std
        )
    }
}

#[pyclass(module = "percept")]
struct Projection {
    inner: core::Projection2D,
}

#[pymethods]
impl Projection {
    /// `[(sample_id, x, y, intra), ...]`
    #[getter]
    fn points(&self) -> Vec<(String, f64, f64, String)> {
        self.inner
            .points
            .iter()
            .map(|p| (p.sample_id.clone(), p.x, p.y, p.intra_tag.clone()))
            .collect()
    }

    #[getter]
    fn explained_variance(&self) -> (f64, f64) {
        (self.inner.explained_variance[0], self.inner.explained_variance[1])
    }

    fn centroids(&self) -> BTreeMap<String, (f64, f64)> {
        self.inner.centroids()
    }

    fn mean_within_spread(&self) -> f64 {
        self.inner.mean_within_spread()
    }

    fn to_svg(&self, title: &str) -> String {
        self.inner.to_svg(title)
    }
}

/// Histograms every neuron of `dump` and fits a mixture per neuron.
#[pyfunction]
#[pyo3(signature = (dump, *, bins = 64, components = 2, q = 1.0, tolerance = 1e-6, max_iters = 200))]
fn fit_bank(
    py: Python<'_>,
    dump: &ActivationDump,
    bins: usize,
    components: usize,
    q: f64,
    tolerance: f64,
    max_iters: usize,
) -> PyResult<ClassBank> {
    let config = PipelineConfig {
        bins,
        components,
        q,
        tolerance,
        max_iters,
        ..PipelineConfig::default()
    };
    let d = &dump.inner;
    let inner = py.detach(|| core::pipeline::fit_dump(d, &config)).map_err(err)?;
    Ok(ClassBank { inner })
}

/// Fits one mixture to raw values; returns `[(weight, mean, variance), ...]`
/// sorted by mean.
#[pyfunction]
#[pyo3(signature = (values, *, components = 2, bins = 64, tolerance = 1e-6, max_iters = 200))]
fn fit_gmm(
    values: Vec<f64>,
    components: usize,
    bins: usize,
    tolerance: f64,
    max_iters: usize,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let hist = core::NeuronHistogram::from_values(0, &values, bins).map_err(err)?;
    let gmm = core::fit_gmm(&hist, components, &core::EmConfig { tolerance, max_iters }).map_err(err)?;
    Ok(gmm.components.iter().map(|c| (c.weight, c.mean, c.variance)).collect())
}

#[pyfunction]
fn hamming(a: &PerceptualCode, b: &PerceptualCode) -> PyResult<u32> {
    core::hamming(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn weighted_hamming(a: &PerceptualCode, b: &PerceptualCode, weights: Vec<f64>) -> PyResult<f64> {
    core::weighted_hamming(&a.inner, &b.inner, &weights).map_err(err)
}

#[pyfunction]
fn p_acc(query_intra: &str, basis_intras: Vec<String>) -> f64 {
    core::p_acc(query_intra, &basis_intras)
}

/// Generates dumps from a TOML spec; returns `(dumps, metadata)`.
#[pyfunction]
fn synth(spec_toml: &str) -> PyResult<(Vec<ActivationDump>, Meta)> {
    let spec = core::SynthSpec::parse(spec_toml).map_err(err)?;
    let out = core::generate(&spec).map_err(err)?;
    Ok((
        out.dumps.into_iter().map(|inner| ActivationDump { inner }).collect(),
        from_metadata(&out.metadata),
    ))
}

/// TOML for `classes` classes of `intras` intra-classes each.
#[pyfunction]
#[pyo3(signature = (classes, intras, neurons, signature, shift, samples_per_intra, seed))]
fn balanced_spec(
    classes: usize,
    intras: usize,
    neurons: usize,
    signature: usize,
    shift: f64,
    samples_per_intra: usize,
    seed: u64,
) -> String {
    core::SynthSpec::balanced(classes, intras, neurons, signature, shift, samples_per_intra, seed).to_toml()
}

#[pyfunction]
fn read_meta_tsv(path: &str) -> PyResult<Meta> {
    let text = std::fs::read_to_string(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    Ok(from_metadata(&core::SampleMetadata::parse_tsv(&text).map_err(err)?))
}

#[pymodule]
fn percept(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PerceptError", m.py().get_type::<PerceptError>())?;
    m.add_class::<ActivationDump>()?;
    m.add_class::<ClassBank>()?;
    m.add_class::<PerceptualCode>()?;
    m.add_class::<CodeSet>()?;
    m.add_class::<Atlas>()?;
    m.add_class::<EvalReport>()?;
    m.add_class::<Projection>()?;
    m.add_function(wrap_pyfunction!(fit_bank, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_hamming, m)?)?;
    m.add_function(wrap_pyfunction!(p_acc, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_spec, m)?)?;
    m.add_function(wrap_pyfunction!(read_meta_tsv, m)?)?;
    Ok(())
}
