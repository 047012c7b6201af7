//! Document traces and the line-delimited trace file format (v1).
//!
//! ```text
//! {"format":"exon-trace","version":1,"layers":4}
//! {"doc_id":"d0","label":"ai","meta":{},"tokens":[{"lm":-1.0e0,"lx":-1.2e0,"lmax":-5.0e-1,"d":[...]}]}
//! ```
//!
//! Line 1 is the header; every following line is one document. Reals are
//! written with 17 significant digits, so a write/read cycle is bit-exact.
//! An empty corpus is an empty file. Readers also accept the bare `NaN`,
//! `Infinity` and `-Infinity` literals that some JSON emitters produce, so
//! that validation can point at them instead of failing to parse the line.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::score::TokenRecord;

pub const FORMAT_NAME: &str = "exon-trace";
pub const FORMAT_VERSION: u32 = 1;
/// Default ingestion cap on tokens per document.
pub const MAX_TOKENS_DEFAULT: usize = 1024;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: bad header: {message}")]
    Header { line: usize, message: String },
    #[error("{0}")]
    Record(#[from] RecordError),
    #[error("cannot write trace: {0}")]
    Invalid(String),
}

impl TraceError {
    fn io(path: &Path, source: io::Error) -> Self {
        TraceError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One invariant violation, located as precisely as the input allows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub doc_id: Option<String>,
    /// Token index within the document.
    pub position: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(id) = &self.doc_id {
            write!(f, ", doc {id}")?;
        }
        if let Some(p) = self.position {
            write!(f, ", token {p}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// A document line that failed to parse or validate.
#[derive(Debug, Clone, Error)]
#[error("{}{}", .violations[0], if .violations.len() > 1 { format!(" (+{} more)", .violations.len() - 1) } else { String::new() })]
pub struct RecordError {
    pub line: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Ai,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Ai => "ai",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentTrace {
    pub doc_id: String,
    pub label: Label,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub tokens: Vec<TokenRecord>,
}

impl DocumentTrace {
    /// Layer count of the first token, if any.
    pub fn layers(&self) -> Option<usize> {
        self.tokens.first().map(|t| t.layer_cosdist.len())
    }

    /// Keeps the first `max_tokens` tokens.
    pub fn truncate(&mut self, max_tokens: usize) {
        self.tokens.truncate(max_tokens);
    }

    pub fn truncated(&self, max_tokens: usize) -> DocumentTrace {
        DocumentTrace {
            doc_id: self.doc_id.clone(),
            label: self.label,
            meta: self.meta.clone(),
            tokens: self.tokens[..max_tokens.min(self.tokens.len())].to_vec(),
        }
    }
}

/// Parsed line-1 header. The format name is checked on parse and not kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub layers: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireHeader {
    format: String,
    version: u32,
    layers: usize,
}

struct LenientF64;

impl<'de> serde::de::Visitor<'de> for LenientF64 {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number, NaN, Infinity or -Infinity")
    }

    fn visit_f64<E>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<f64, E> {
        match v {
            "NaN" => Ok(f64::NAN),
            "Infinity" => Ok(f64::INFINITY),
            "-Infinity" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("expected a number, got string \"{other}\""))),
        }
    }
}

struct LenientF64Seed;

impl<'de> serde::de::DeserializeSeed<'de> for LenientF64Seed {
    type Value = f64;

    fn deserialize<D: Deserializer<'de>>(self, de: D) -> Result<f64, D::Error> {
        de.deserialize_any(LenientF64)
    }
}

struct LenientF64Vec;

impl<'de> serde::de::Visitor<'de> for LenientF64Vec {
    type Value = Vec<f64>;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("an array of numbers")
    }

    fn visit_seq<A: serde::de::SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
        let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
        while let Some(x) = seq.next_element_seed(LenientF64Seed)? {
            out.push(x);
        }
        Ok(out)
    }
}

/// Accepts JSON numbers plus the quoted non-finite spellings.
pub(crate) fn lenient_f64<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
    de.deserialize_any(LenientF64)
}

pub(crate) fn lenient_f64_vec<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
    de.deserialize_seq(LenientF64Vec)
}

/// Quotes bare `NaN` / `Infinity` / `-Infinity` literals that sit outside strings.
fn quote_nonfinite(line: &str) -> Cow<'_, str> {
    if !(line.contains("NaN") || line.contains("Infinity")) {
        return Cow::Borrowed(line);
    }
    let bytes = line.as_bytes();
    let mut out = String::with_capacity(line.len() + 16);
    let (mut in_str, mut escaped) = (false, false);
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_str {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_str = false;
            }
        } else if c == b'"' {
            in_str = true;
        } else {
            let rest = &line[i..];
            if let Some(lit) = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|lit| rest.starts_with(lit))
            {
                out.push('"');
                out.push_str(lit);
                out.push('"');
                i += lit.len();
                continue;
            }
        }
        // Copy one full UTF-8 character.
        let ch_len = line[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&line[i..i + ch_len]);
        i += ch_len;
    }
    Cow::Owned(out)
}

/// Checks every token invariant of one document against the file's layer count.
pub fn check_document(doc: &DocumentTrace, layers: usize, line: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |position: Option<usize>, message: String| {
        out.push(Violation {
            line,
            doc_id: Some(doc.doc_id.clone()),
            position,
            message,
        })
    };
    if doc.tokens.is_empty() {
        push(None, "document has no tokens".into());
    }
    let mut layer_mismatch_reported = false;
    for (pos, t) in doc.tokens.iter().enumerate() {
        for (name, v) in [("lm", t.logp_m), ("lx", t.logp_mt), ("lmax", t.logp_m_max)] {
            if !v.is_finite() {
                push(Some(pos), format!("non-finite value in {name}"));
            } else if v > 0.0 {
                push(Some(pos), format!("log-probability must be ≤ 0 ({name} = {v})"));
            }
        }
        if t.logp_m.is_finite() && t.logp_m_max.is_finite() && t.logp_m > t.logp_m_max {
            push(Some(pos), format!("lm exceeds lmax ({} > {})", t.logp_m, t.logp_m_max));
        }
        if t.layer_cosdist.len() != layers && !layer_mismatch_reported {
            layer_mismatch_reported = true;
            push(
                Some(pos),
                format!(
                    "inconsistent layer count: {} values, header declares {layers}",
                    t.layer_cosdist.len()
                ),
            );
        }
        for (l, &d) in t.layer_cosdist.iter().enumerate() {
            if !d.is_finite() {
                push(Some(pos), format!("non-finite value in layer_cosdist[{l}]"));
            } else if !(0.0..=2.0).contains(&d) {
                push(Some(pos), format!("layer_cosdist[{l}] = {d} outside [0, 2]"));
            }
        }
    }
    out
}

fn parse_doc_line(raw: &str, line: usize) -> Result<DocumentTrace, RecordError> {
    let text = quote_nonfinite(raw);
    serde_json::from_str::<DocumentTrace>(&text).map_err(|e| {
        // Salvage the id for the diagnostic when the rest is broken.
        let doc_id = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.get("doc_id").and_then(|d| d.as_str()).map(str::to_owned));
        RecordError {
            line,
            violations: vec![Violation {
                line,
                doc_id,
                position: None,
                message: format!("malformed record: {e}"),
            }],
        }
    })
}

fn parse_header(raw: &str, line: usize) -> Result<Header, TraceError> {
    let h: WireHeader = serde_json::from_str(raw).map_err(|e| TraceError::Header {
        line,
        message: e.to_string(),
    })?;
    if h.format != FORMAT_NAME {
        return Err(TraceError::Header {
            line,
            message: format!("format is \"{}\", expected \"{FORMAT_NAME}\"", h.format),
        });
    }
    if h.version != FORMAT_VERSION {
        return Err(TraceError::Header {
            line,
            message: format!("unsupported version {}", h.version),
        });
    }
    if h.layers == 0 {
        return Err(TraceError::Header {
            line,
            message: "layers must be >= 1".into(),
        });
    }
    Ok(Header {
        version: h.version,
        layers: h.layers,
    })
}

/// Streaming reader: holds at most one document in memory at a time.
///
/// Yields `Err(RecordError)` for a bad line and keeps going; callers decide
/// whether to stop (see [`ReadMode`]).
pub struct TraceReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    header: Option<Header>,
    max_tokens: usize,
    path: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    /// Reads the header eagerly. An empty input is a valid empty corpus.
    pub fn new(reader: R, max_tokens: usize) -> Result<Self, TraceError> {
        Self::with_path(reader, max_tokens, "<stream>".into())
    }

    fn with_path(reader: R, max_tokens: usize, path: String) -> Result<Self, TraceError> {
        if max_tokens == 0 {
            return Err(TraceError::Invalid("max_tokens must be >= 1".into()));
        }
        let mut lines = reader.lines();
        let mut line_no = 0;
        let mut header = None;
        for l in lines.by_ref() {
            line_no += 1;
            let l = l.map_err(|source| TraceError::Io {
                path: path.clone(),
                source,
            })?;
            if l.trim().is_empty() {
                continue;
            }
            header = Some(parse_header(&l, line_no)?);
            break;
        }
        Ok(Self {
            lines,
            line_no,
            header,
            max_tokens,
            path,
            failed: false,
        })
    }

    /// `None` for an empty file.
    pub fn header(&self) -> Option<&Header> {
        self.header.as_ref()
    }

    pub fn layers(&self) -> Option<usize> {
        self.header.as_ref().map(|h| h.layers)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<DocumentTrace, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let layers = self.header.as_ref()?.layers;
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(source) => {
                    self.failed = true;
                    return Some(Err(TraceError::Io {
                        path: self.path.clone(),
                        source,
                    }));
                }
            };
            self.line_no += 1;
            if raw.trim().is_empty() {
                continue;
            }
            let line = self.line_no;
            let mut doc = match parse_doc_line(&raw, line) {
                Ok(d) => d,
                Err(e) => return Some(Err(e.into())),
            };
            doc.truncate(self.max_tokens);
            let violations = check_document(&doc, layers, line);
            if !violations.is_empty() {
                return Some(Err(RecordError { line, violations }.into()));
            }
            return Some(Ok(doc));
        }
    }
}

/// Opens a trace file for streaming. Documents longer than `max_tokens` keep their prefix.
pub fn read_corpus(path: impl AsRef<Path>, max_tokens: usize) -> Result<TraceReader<BufReader<File>>, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
    TraceReader::with_path(BufReader::new(file), max_tokens, path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Stop at the first bad record.
    Strict,
    /// Skip bad records, collecting their errors.
    Lenient,
}

/// Loads a whole corpus. In lenient mode bad records are returned alongside the good ones.
pub fn read_all(
    path: impl AsRef<Path>,
    max_tokens: usize,
    mode: ReadMode,
) -> Result<(Vec<DocumentTrace>, Vec<RecordError>), TraceError> {
    let mut docs = Vec::new();
    let mut bad = Vec::new();
    for item in read_corpus(path, max_tokens)? {
        match item {
            Ok(d) => docs.push(d),
            Err(TraceError::Record(e)) if mode == ReadMode::Lenient => bad.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok((docs, bad))
}

fn push_real(out: &mut String, x: f64) {
    // 17 significant digits round-trip every finite f64.
    let _ = write!(out, "{x:.16e}");
}

/// Serializes one document line (without the trailing newline), fields in the fixed v1 order.
pub fn encode_document(doc: &DocumentTrace) -> Result<String, TraceError> {
    let mut out = String::with_capacity(64 + doc.tokens.len() * 48);
    let json_str = |s: &str| serde_json::to_string(s).expect("strings always serialize");
    out.push_str("{\"doc_id\":");
    out.push_str(&json_str(&doc.doc_id));
    out.push_str(",\"label\":\"");
    out.push_str(doc.label.as_str());
    out.push_str("\",\"meta\":{");
    for (i, (k, v)) in doc.meta.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&json_str(k));
        out.push(':');
        out.push_str(&json_str(v));
    }
    out.push_str("},\"tokens\":[");
    for (i, t) in doc.tokens.iter().enumerate() {
        let finite = [t.logp_m, t.logp_mt, t.logp_m_max]
            .iter()
            .chain(&t.layer_cosdist)
            .all(|x| x.is_finite());
        if !finite {
            return Err(TraceError::Invalid(format!(
                "doc {} token {i}: non-finite value",
                doc.doc_id
            )));
        }
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"lm\":");
        push_real(&mut out, t.logp_m);
        out.push_str(",\"lx\":");
        push_real(&mut out, t.logp_mt);
        out.push_str(",\"lmax\":");
        push_real(&mut out, t.logp_m_max);
        out.push_str(",\"d\":[");
        for (j, d) in t.layer_cosdist.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            push_real(&mut out, *d);
        }
        out.push_str("]}");
    }
    out.push_str("]}");
    Ok(out)
}

/// Writes a corpus to any sink. The layer count comes from the first document.
pub fn write_corpus_to<'a, W: Write>(
    traces: impl IntoIterator<Item = &'a DocumentTrace>,
    sink: W,
) -> Result<(), TraceError> {
    let mut sink = BufWriter::new(sink);
    let io_err = |e| TraceError::Io {
        path: "<sink>".into(),
        source: e,
    };
    let mut layers = None;
    for doc in traces {
        let l = doc
            .layers()
            .ok_or_else(|| TraceError::Invalid(format!("doc {} has no tokens", doc.doc_id)))?;
        if doc.tokens.iter().any(|t| t.layer_cosdist.len() != l) || l == 0 {
            return Err(TraceError::Invalid(format!(
                "doc {}: inconsistent layer count",
                doc.doc_id
            )));
        }
        match layers {
            None => {
                layers = Some(l);
                writeln!(
                    sink,
                    "{{\"format\":\"{FORMAT_NAME}\",\"version\":{FORMAT_VERSION},\"layers\":{l}}}"
                )
                .map_err(io_err)?;
            }
            Some(expected) if expected != l => {
                return Err(TraceError::Invalid(format!(
                    "doc {}: inconsistent layer count ({l} vs {expected})",
                    doc.doc_id
                )))
            }
            Some(_) => {}
        }
        sink.write_all(encode_document(doc)?.as_bytes()).map_err(io_err)?;
        sink.write_all(b"\n").map_err(io_err)?;
    }
    sink.flush().map_err(io_err)
}

pub fn write_corpus<'a>(
    traces: impl IntoIterator<Item = &'a DocumentTrace>,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
    write_corpus_to(traces, file).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::io(path, source),
        other => other,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NonFiniteCounts {
    pub lm: usize,
    pub lx: usize,
    pub lmax: usize,
    pub d: usize,
}

/// Summary of a full validation scan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_human: usize,
    pub n_ai: usize,
    pub n_unknown: usize,
    /// Layer count declared by the header.
    pub layers: Option<usize>,
    pub total_tokens: usize,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    /// Document lengths bucketed by powers of two; the key is the bucket's lower bound.
    pub length_histogram: BTreeMap<usize, usize>,
    pub nonfinite: NonFiniteCounts,
    /// Layer distances exactly equal to 1.0, the value written for zero-norm hidden vectors.
    pub unit_discrepancies: usize,
    pub violations: Vec<Violation>,
}

impl CorpusStats {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn record_doc(&mut self, doc: &DocumentTrace) {
        self.n_docs += 1;
        match doc.label {
            Label::Human => self.n_human += 1,
            Label::Ai => self.n_ai += 1,
            Label::Unknown => self.n_unknown += 1,
        }
        let n = doc.tokens.len();
        self.total_tokens += n;
        self.min_len = Some(self.min_len.map_or(n, |m| m.min(n)));
        self.max_len = Some(self.max_len.map_or(n, |m| m.max(n)));
        let bucket = if n == 0 { 0 } else { 1 << n.ilog2() };
        *self.length_histogram.entry(bucket).or_default() += 1;
        for t in &doc.tokens {
            self.nonfinite.lm += usize::from(!t.logp_m.is_finite());
            self.nonfinite.lx += usize::from(!t.logp_mt.is_finite());
            self.nonfinite.lmax += usize::from(!t.logp_m_max.is_finite());
            for &d in &t.layer_cosdist {
                self.nonfinite.d += usize::from(!d.is_finite());
                self.unit_discrepancies += usize::from(d == 1.0);
            }
        }
    }
}

/// Full-file scan of every invariant. Only I/O failures and a bad header are fatal.
pub fn validate_corpus(path: impl AsRef<Path>) -> Result<CorpusStats, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
    validate_reader(BufReader::new(file)).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::io(path, source),
        other => other,
    })
}

pub fn validate_reader<R: BufRead>(reader: R) -> Result<CorpusStats, TraceError> {
    let mut stats = CorpusStats::default();
    let mut seen_ids = HashSet::new();
    let mut lines = reader.lines().enumerate();
    let mut layers = None;
    for (i, l) in lines.by_ref() {
        let l = l.map_err(|source| TraceError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if l.trim().is_empty() {
            continue;
        }
        layers = Some(parse_header(&l, i + 1)?.layers);
        break;
    }
    stats.layers = layers;
    let Some(layers) = layers else {
        return Ok(stats);
    };
    for (i, l) in lines {
        let line = i + 1;
        let l = l.map_err(|source| TraceError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if l.trim().is_empty() {
            continue;
        }
        match parse_doc_line(&l, line) {
            Ok(doc) => {
                stats.record_doc(&doc);
                if !seen_ids.insert(doc.doc_id.clone()) {
                    stats.violations.push(Violation {
                        line,
                        doc_id: Some(doc.doc_id.clone()),
                        position: None,
                        message: "duplicate doc_id".into(),
                    });
                }
                stats.violations.extend(check_document(&doc, layers, line));
            }
            Err(e) => stats.violations.extend(e.violations),
        }
    }
    Ok(stats)
}
