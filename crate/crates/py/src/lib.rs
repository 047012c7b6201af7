//! Python bindings: `import exon_detect`.
//!
//! Configuration and documents are Python classes; corpora are plain lists of
//! `Document`. Validation failures raise `TraceError`, scoring failures raise
//! `ScoreError` (or its subclass `DegenerateScore`), bad arguments raise `ValueError`.

use std::collections::BTreeMap;

use exon_core::eval::{evaluate as core_evaluate, EvalReport};
use exon_core::score::{self, Sign};
use exon_core::synth::DocLen;
use exon_core::{
    DetectorConfig, DocumentTrace, Label, LayerSelect, Mapping, ScoreBreakdown, ScoreError as CoreScoreError,
    ShiftCheck, SynthConfig, TauMode, TokenRecord,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    exon_detect,
    TraceError,
    PyException,
    "A trace file or document violates the format."
);
create_exception!(exon_detect, ScoreError, PyException, "A document cannot be scored.");
create_exception!(
    exon_detect,
    DegenerateScore,
    ScoreError,
    "Weighted cross-perplexity is zero."
);

fn score_err(e: CoreScoreError) -> PyErr {
    match e {
        CoreScoreError::InvalidConfig(m) => PyValueError::new_err(m),
        CoreScoreError::Degenerate { .. } => DegenerateScore::new_err(e.to_string()),
        other => ScoreError::new_err(other.to_string()),
    }
}

fn trace_err(e: exon_core::TraceError) -> PyErr {
    TraceError::new_err(e.to_string())
}

fn eval_err(e: exon_core::EvalError) -> PyErr {
    match e {
        exon_core::EvalError::Score(s) => score_err(s),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_label(s: &str) -> PyResult<Label> {
    match s {
        "human" => Ok(Label::Human),
        "ai" => Ok(Label::Ai),
        "unknown" => Ok(Label::Unknown),
        _ => Err(PyValueError::new_err(format!(
            "label must be human, ai or unknown, got {s:?}"
        ))),
    }
}

#[pyclass(name = "DetectorConfig", module = "exon_detect", skip_from_py_object)]
#[derive(Clone)]
struct PyDetectorConfig {
    inner: DetectorConfig,
}

#[pymethods]
impl PyDetectorConfig {
    #[new]
    #[pyo3(signature = (theta=0.15, alpha=10.0, mapping="nonlinear", layers="all", repair_term=true, tau=1.0))]
    fn new(theta: f64, alpha: f64, mapping: &str, layers: &str, repair_term: bool, tau: f64) -> PyResult<Self> {
        let inner = DetectorConfig {
            theta,
            alpha,
            mapping: mapping.parse::<Mapping>().map_err(PyValueError::new_err)?,
            layer_select: layers.parse::<LayerSelect>().map_err(PyValueError::new_err)?,
            repair_term,
            tau,
        };
        inner.validate().map_err(score_err)?;
        Ok(Self { inner })
    }

    /// Same settings with exon reweighting disabled.
    fn uniform(&self) -> Self {
        Self {
            inner: self.inner.uniform(),
        }
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn mapping(&self) -> String {
        self.inner.mapping.to_string()
    }
    #[getter]
    fn layers(&self) -> String {
        self.inner.layer_select.to_string()
    }
    #[getter]
    fn repair_term(&self) -> bool {
        self.inner.repair_term
    }
    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "DetectorConfig(theta={}, alpha={}, mapping='{}', layers='{}', repair_term={}, tau={})",
            c.theta,
            c.alpha,
            c.mapping,
            c.layer_select,
            if c.repair_term { "True" } else { "False" },
            c.tau
        )
    }
}

fn config_or_default(cfg: Option<PyRef<'_, PyDetectorConfig>>) -> DetectorConfig {
    cfg.map_or_else(DetectorConfig::default, |c| c.inner)
}

#[pyclass(name = "Token", module = "exon_detect", skip_from_py_object)]
#[derive(Clone)]
struct PyToken {
    inner: TokenRecord,
}

#[pymethods]
impl PyToken {
    #[new]
    fn new(lm: f64, lx: f64, lmax: f64, d: Vec<f64>) -> Self {
        Self {
            inner: TokenRecord::new(lm, lx, lmax, d),
        }
    }
    #[getter]
    fn lm(&self) -> f64 {
        self.inner.logp_m
    }
    #[getter]
    fn lx(&self) -> f64 {
        self.inner.logp_mt
    }
    #[getter]
    fn lmax(&self) -> f64 {
        self.inner.logp_m_max
    }
    #[getter]
    fn d(&self) -> Vec<f64> {
        self.inner.layer_cosdist.clone()
    }
    fn __repr__(&self) -> String {
        let t = &self.inner;
        format!(
            "Token(lm={}, lx={}, lmax={}, d={:?})",
            t.logp_m, t.logp_mt, t.logp_m_max, t.layer_cosdist
        )
    }
}

#[pyclass(name = "Document", module = "exon_detect", skip_from_py_object)]
#[derive(Clone)]
struct PyDocument {
    inner: DocumentTrace,
}

#[pymethods]
impl PyDocument {
    #[new]
    #[pyo3(signature = (doc_id, label, tokens, meta=None))]
    fn new(
        doc_id: String,
        label: &str,
        tokens: Vec<PyRef<'_, PyToken>>,
        meta: Option<BTreeMap<String, String>>,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: DocumentTrace {
                doc_id,
                label: parse_label(label)?,
                meta: meta.unwrap_or_default(),
                tokens: tokens.iter().map(|t| t.inner.clone()).collect(),
            },
        })
    }
    #[getter]
    fn doc_id(&self) -> String {
        self.inner.doc_id.clone()
    }
    #[getter]
    fn label(&self) -> &'static str {
        self.inner.label.as_str()
    }
    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.inner.meta.clone()
    }
    #[getter]
    fn tokens(&self) -> Vec<PyToken> {
        self.inner.tokens.iter().map(|t| PyToken { inner: t.clone() }).collect()
    }
    #[getter]
    fn layers(&self) -> Option<usize> {
        self.inner.layers()
    }
    fn truncated(&self, max_tokens: usize) -> Self {
        Self {
            inner: self.inner.truncated(max_tokens),
        }
    }
    fn __len__(&self) -> usize {
        self.inner.tokens.len()
    }
    fn __repr__(&self) -> String {
        format!(
            "Document(doc_id={:?}, label='{}', n_tokens={})",
            self.inner.doc_id,
            self.inner.label,
            self.inner.tokens.len()
        )
    }
}

fn docs_of(docs: &[PyRef<'_, PyDocument>]) -> Vec<DocumentTrace> {
    docs.iter().map(|d| d.inner.clone()).collect()
}

#[pyclass(name = "ScoreBreakdown", module = "exon_detect", frozen)]
struct PyBreakdown {
    inner: ScoreBreakdown,
}

fn sign_str(s: Sign) -> &'static str {
    match s {
        Sign::Negative => "negative",
        Sign::Zero => "zero",
        Sign::Positive => "positive",
    }
}

#[pymethods]
impl PyBreakdown {
    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }
    #[getter]
    fn r0(&self) -> f64 {
        self.inner.r0
    }
    #[getter]
    fn rw(&self) -> f64 {
        self.inner.rw()
    }
    #[getter]
    fn a0(&self) -> f64 {
        self.inner.a0
    }
    #[getter]
    fn b0(&self) -> f64 {
        self.inner.b0
    }
    #[getter]
    fn a_s(&self) -> f64 {
        self.inner.a_s
    }
    #[getter]
    fn b_s(&self) -> f64 {
        self.inner.b_s
    }
    #[getter]
    fn wppl_s(&self) -> f64 {
        self.inner.wppl_s
    }
    #[getter]
    fn wppl_shat(&self) -> Option<f64> {
        self.inner.wppl_shat
    }
    #[getter]
    fn wxppl(&self) -> f64 {
        self.inner.wxppl
    }
    #[getter]
    fn delta(&self) -> Vec<f64> {
        self.inner.delta.clone()
    }
    #[getter]
    fn delta_w(&self) -> Vec<f64> {
        self.inner.weights.delta_w.clone()
    }
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.w.clone()
    }
    #[getter]
    fn exonic_mask(&self) -> Vec<bool> {
        self.inner.weights.exonic_mask.clone()
    }
    #[getter]
    fn n_exonic(&self) -> usize {
        self.inner.weights.n_exonic()
    }

    /// `None` without exonic tokens, else `(shift_sign, exon_ratio_sign, agree)`.
    fn shift_check(&self) -> Option<(&'static str, &'static str, bool)> {
        match score::score_shift_check(&self.inner) {
            ShiftCheck::NotApplicable => None,
            ShiftCheck::Checked {
                shift,
                exon_ratio,
                agree,
            } => Some((sign_str(shift), sign_str(exon_ratio), agree)),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreBreakdown(score={}, r0={}, n_tokens={}, n_exonic={})",
            self.inner.score,
            self.inner.r0,
            self.inner.n_tokens(),
            self.inner.weights.n_exonic()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (token, layers="all"))]
fn token_discrepancy(token: PyRef<'_, PyToken>, layers: &str) -> PyResult<f64> {
    let sel = layers.parse::<LayerSelect>().map_err(PyValueError::new_err)?;
    score::token_discrepancy(&token.inner, sel).map_err(score_err)
}

#[pyfunction]
#[pyo3(signature = (delta, config=None))]
fn map_weight(delta: f64, config: Option<PyRef<'_, PyDetectorConfig>>) -> f64 {
    score::map_weight(delta, &config_or_default(config))
}

#[pyfunction]
fn normalize_weights(delta_w: Vec<f64>) -> PyResult<Vec<f64>> {
    score::normalize_weights(&delta_w).map_err(score_err)
}

#[pyfunction]
fn weighted_log_ppl(logp: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    score::weighted_log_ppl(&logp, &w).map_err(score_err)
}

#[pyfunction]
fn weighted_cross_ppl(logp_m: Vec<f64>, logp_mt: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    score::weighted_cross_ppl(&logp_m, &logp_mt, &w).map_err(score_err)
}

#[pyfunction]
#[pyo3(signature = (doc, config=None))]
fn score_document(doc: PyRef<'_, PyDocument>, config: Option<PyRef<'_, PyDetectorConfig>>) -> PyResult<PyBreakdown> {
    let cfg = config_or_default(config);
    score::score_document(&doc.inner, &cfg)
        .map(|inner| PyBreakdown { inner })
        .map_err(score_err)
}

/// `"human"` when `score > tau`, else `"ai"`.
#[pyfunction]
fn decide(score: f64, tau: f64) -> PyResult<&'static str> {
    Ok(match score::decide(score, tau).map_err(score_err)? {
        exon_core::Decision::Human => "human",
        exon_core::Decision::Ai => "ai",
    })
}

#[pyfunction]
#[pyo3(signature = (path, max_tokens=exon_core::MAX_TOKENS_DEFAULT))]
fn read_corpus(path: std::path::PathBuf, max_tokens: usize) -> PyResult<Vec<PyDocument>> {
    exon_core::read_corpus(path, max_tokens)
        .map_err(trace_err)?
        .map(|d| d.map(|inner| PyDocument { inner }).map_err(trace_err))
        .collect()
}

#[pyfunction]
fn write_corpus(docs: Vec<PyRef<'_, PyDocument>>, path: std::path::PathBuf) -> PyResult<()> {
    exon_core::write_corpus(&docs_of(&docs), path).map_err(trace_err)
}

/// Full invariant scan; returns the statistics as a dict.
#[pyfunction]
fn validate_corpus<'py>(py: Python<'py>, path: std::path::PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let s = exon_core::validate_corpus(path).map_err(trace_err)?;
    let d = PyDict::new(py);
    d.set_item("n_docs", s.n_docs)?;
    d.set_item("n_human", s.n_human)?;
    d.set_item("n_ai", s.n_ai)?;
    d.set_item("n_unknown", s.n_unknown)?;
    d.set_item("layers", s.layers)?;
    d.set_item("total_tokens", s.total_tokens)?;
    d.set_item("min_len", s.min_len)?;
    d.set_item("max_len", s.max_len)?;
    d.set_item("length_histogram", s.length_histogram.clone())?;
    let nf = PyDict::new(py);
    nf.set_item("lm", s.nonfinite.lm)?;
    nf.set_item("lx", s.nonfinite.lx)?;
    nf.set_item("lmax", s.nonfinite.lmax)?;
    nf.set_item("d", s.nonfinite.d)?;
    d.set_item("nonfinite", nf)?;
    d.set_item("unit_discrepancies", s.unit_discrepancies)?;
    let violations: Vec<String> = s.violations.iter().map(ToString::to_string).collect();
    d.set_item("violations", violations)?;
    Ok(d)
}

#[derive(FromPyObject)]
enum LengthArg {
    Fixed(usize),
    Range((usize, usize)),
}

#[pyfunction]
#[pyo3(signature = (seed=0, docs_per_class=500, length=LengthArg::Fixed(200), n_layers=4, sep=1.0, exon_rate=0.2, enrich=3.0))]
fn generate(
    seed: u64,
    docs_per_class: usize,
    length: LengthArg,
    n_layers: usize,
    sep: f64,
    exon_rate: f64,
    enrich: f64,
) -> PyResult<Vec<PyDocument>> {
    let cfg = SynthConfig {
        seed,
        n_docs_per_class: docs_per_class,
        doc_len: match length {
            LengthArg::Fixed(n) => DocLen::Fixed(n),
            LengthArg::Range((lo, hi)) => DocLen::Range(lo, hi),
        },
        n_layers,
        sep,
        exon_rate,
        enrich,
    };
    let docs = exon_core::generate(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(docs.into_iter().map(|inner| PyDocument { inner }).collect())
}

#[pyfunction]
fn auroc(scores_ai: Vec<f64>, scores_human: Vec<f64>) -> PyResult<f64> {
    exon_core::auroc(&scores_ai, &scores_human).map_err(eval_err)
}

fn labels_of(labels: &[String]) -> PyResult<Vec<Label>> {
    labels.iter().map(|l| parse_label(l)).collect()
}

#[pyfunction]
fn f1_at(scores: Vec<f64>, labels: Vec<String>, tau: f64) -> PyResult<f64> {
    exon_core::f1_at(&scores, &labels_of(&labels)?, tau).map_err(eval_err)
}

/// Threshold maximizing F1 on the given scores; returns `(tau, f1)`.
#[pyfunction]
fn calibrate_tau(scores: Vec<f64>, labels: Vec<String>) -> PyResult<(f64, f64)> {
    let c = exon_core::calibrate_tau(&scores, &labels_of(&labels)?).map_err(eval_err)?;
    Ok((c.tau, c.f1))
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("auroc", r.auroc)?;
    d.set_item("f1", r.f1)?;
    d.set_item("tau", r.tau)?;
    d.set_item("n_ai", r.n_pos)?;
    d.set_item("n_human", r.n_neg)?;
    d.set_item("n_unlabeled", r.n_unlabeled)?;
    d.set_item("n_degenerate", r.n_degenerate)?;
    Ok(d)
}

/// AUROC and F1 over labeled documents. `tau=None` calibrates in-sample,
/// or on a seeded `calibrate_split` fraction when given.
#[pyfunction]
#[pyo3(signature = (docs, config=None, tau=None, calibrate_split=None, seed=0))]
fn evaluate<'py>(
    py: Python<'py>,
    docs: Vec<PyRef<'py, PyDocument>>,
    config: Option<PyRef<'py, PyDetectorConfig>>,
    tau: Option<f64>,
    calibrate_split: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match (tau, calibrate_split) {
        (Some(t), _) => TauMode::Fixed(t),
        (None, Some(fraction)) => TauMode::Split { fraction, seed },
        (None, None) => TauMode::InSample,
    };
    let cfg = config_or_default(config);
    let corpus = docs_of(&docs);
    let report = py.detach(|| core_evaluate(&corpus, &cfg, mode)).map_err(eval_err)?;
    report_dict(py, &report)
}

#[pymodule]
pub fn exon_detect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("TraceError", py.get_type::<TraceError>())?;
    m.add("ScoreError", py.get_type::<ScoreError>())?;
    m.add("DegenerateScore", py.get_type::<DegenerateScore>())?;
    m.add_class::<PyDetectorConfig>()?;
    m.add_class::<PyToken>()?;
    m.add_class::<PyDocument>()?;
    m.add_class::<PyBreakdown>()?;
    m.add_function(wrap_pyfunction!(token_discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(map_weight, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_log_ppl, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_cross_ppl, m)?)?;
    m.add_function(wrap_pyfunction!(score_document, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(read_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(write_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(validate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(f1_at, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_tau, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
