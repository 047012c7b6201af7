use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use exon_core::eval::{evaluate, length_robustness, sweep as run_sweep, EvalReport, LengthReport};
use exon_core::synth::DocLen;
use exon_core::trace::{read_all, write_corpus_to, ReadMode, RecordError};
use exon_core::{
    decide, generate, read_corpus, score_document, validate_corpus, DetectorConfig, DocumentTrace, EvalError,
    ScoreBreakdown, ScoreError, SynthConfig, TauMode, TraceError,
};
use rayon::prelude::*;
use serde_json::json;

use crate::output::{cell, emit_manifest, open_output, opt_real, real, ManifestBuilder};
use crate::{EvalArgs, Format, InputFlags, LengthsArgs, ScoreArgs, SweepArgs, SynthArgs, TauFlags, ValidateArgs};

pub struct Context {
    pub manifest: Option<PathBuf>,
}

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: e.into(),
        }
    }
    fn data(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: e.into(),
        }
    }
    fn internal(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: e.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Invalid(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Score(ScoreError::InvalidConfig(_)) | EvalError::Synth(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

const CHUNK: usize = 512;

fn check_config(cfg: &DetectorConfig, layers: Option<usize>) -> Outcome {
    cfg.validate().map_err(Failure::usage)?;
    if let Some(n) = layers {
        cfg.layer_select.range(n).map_err(Failure::usage)?;
    }
    Ok(())
}

fn report_bad(bad: &[RecordError]) {
    for r in bad {
        for v in &r.violations {
            eprintln!("invalid record: {v}");
        }
    }
}

/// Whole corpus in memory, failing with every diagnostic if any record is bad.
fn load(input: &InputFlags) -> Result<Vec<DocumentTrace>, Failure> {
    let (docs, bad) = read_all(&input.trace, input.max_tokens, ReadMode::Lenient)?;
    if !bad.is_empty() {
        report_bad(&bad);
        return Err(Failure::data(anyhow!(
            "{} invalid record(s) in {}",
            bad.len(),
            input.trace.display()
        )));
    }
    Ok(docs)
}

fn corpus_layers(docs: &[DocumentTrace]) -> Option<usize> {
    docs.first().and_then(DocumentTrace::layers)
}

fn tau_mode(t: &TauFlags) -> Result<TauMode, Failure> {
    Ok(match (t.tau, t.calibrate_split) {
        (Some(tau), _) if tau.is_nan() => return Err(Failure::usage(anyhow!("--tau must not be NaN"))),
        (Some(tau), _) => TauMode::Fixed(tau),
        (None, Some(fraction)) if !(fraction > 0.0 && fraction < 1.0) => {
            return Err(Failure::usage(anyhow!(
                "--calibrate-split must be in (0, 1), got {fraction}"
            )))
        }
        (None, Some(fraction)) => TauMode::Split { fraction, seed: t.seed },
        (None, None) => TauMode::InSample,
    })
}

fn finish(
    ctx: &Context,
    builder: ManifestBuilder,
    config: serde_json::Value,
    inputs: &[&Path],
    out: Option<&Path>,
) -> Outcome {
    let m = builder.finish(config, inputs, out).map_err(Failure::internal)?;
    emit_manifest(&m, ctx.manifest.as_deref(), out).map_err(Failure::internal)
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure::internal(anyhow::Error::new(e).context("cannot write output"))
}

const BREAKDOWN_COLUMNS: &str = "\tn_tokens\tn_exonic\twppl_s\twppl_shat\twxppl\tr0\ta0\tb0\ta_s\tb_s";

fn breakdown_cells(b: &ScoreBreakdown) -> String {
    format!(
        "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        b.n_tokens(),
        b.weights.n_exonic(),
        real(b.wppl_s),
        opt_real(b.wppl_shat),
        real(b.wxppl),
        real(b.r0),
        real(b.a0),
        real(b.b0),
        real(b.a_s),
        real(b.b_s),
    )
}

fn score_row(
    doc: &DocumentTrace,
    result: Result<ScoreBreakdown, ScoreError>,
    cfg: &DetectorConfig,
    breakdown: bool,
) -> Result<String, ScoreError> {
    let head = format!("{}\t{}", cell(&doc.doc_id), doc.label);
    match result {
        Ok(b) => {
            let decision = decide(b.score, cfg.tau)?;
            let extra = if breakdown { breakdown_cells(&b) } else { String::new() };
            Ok(format!("{head}\t{}\t{decision}{extra}", real(b.score)))
        }
        Err(ScoreError::Degenerate { breakdown: b }) => {
            eprintln!("doc {}: degenerate score (zero weighted cross-perplexity)", doc.doc_id);
            let extra = if breakdown { breakdown_cells(&b) } else { String::new() };
            Ok(format!("{head}\tNA\tundetermined{extra}"))
        }
        Err(e) => Err(e),
    }
}

pub fn score(ctx: &Context, a: ScoreArgs) -> Outcome {
    let builder = ManifestBuilder::start("score");
    let cfg = a.detector.config(a.tau);
    let reader = read_corpus(&a.input.trace, a.input.max_tokens)?;
    check_config(&cfg, reader.layers())?;
    let mut out = open_output(a.out.as_deref()).map_err(Failure::internal)?;

    let mut header = String::from("doc_id\tlabel\tscore\tdecision");
    if a.breakdown {
        header.push_str(BREAKDOWN_COLUMNS);
    }
    writeln!(out, "{header}").map_err(io_fail)?;

    // Bounded memory: documents are read, scored in parallel and written one chunk at a time.
    let mut reader = reader.peekable();
    let mut n_bad = 0usize;
    while reader.peek().is_some() {
        let mut chunk = Vec::with_capacity(CHUNK);
        for item in reader.by_ref().take(CHUNK) {
            match item {
                Ok(d) => chunk.push(d),
                Err(TraceError::Record(r)) => {
                    n_bad += 1;
                    report_bad(std::slice::from_ref(&r));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let rows: Vec<Result<String, ScoreError>> = chunk
            .par_iter()
            .map(|d| score_row(d, score_document(d, &cfg), &cfg, a.breakdown))
            .collect();
        for (row, doc) in rows.into_iter().zip(&chunk) {
            let row = row.map_err(|e| Failure::data(anyhow!("doc {}: {e}", doc.doc_id)))?;
            writeln!(out, "{row}").map_err(io_fail)?;
        }
    }
    out.flush().map_err(io_fail)?;
    drop(out);

    finish(
        ctx,
        builder,
        json!({ "detector": cfg, "max_tokens": a.input.max_tokens, "breakdown": a.breakdown }),
        &[&a.input.trace],
        a.out.as_deref(),
    )?;
    if n_bad > 0 {
        return Err(Failure::data(anyhow!(
            "{n_bad} invalid record(s) skipped in {}",
            a.input.trace.display()
        )));
    }
    Ok(())
}

fn write_report(out: &mut dyn Write, r: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "metric\tvalue")?;
    writeln!(out, "auroc\t{}", real(r.auroc))?;
    writeln!(out, "f1\t{}", real(r.f1))?;
    writeln!(out, "tau\t{}", real(r.tau))?;
    writeln!(out, "n_ai\t{}", r.n_pos)?;
    writeln!(out, "n_human\t{}", r.n_neg)?;
    writeln!(out, "n_unlabeled\t{}", r.n_unlabeled)?;
    writeln!(out, "n_degenerate\t{}", r.n_degenerate)
}

fn write_json(out: &mut dyn Write, v: &impl serde::Serialize) -> Outcome {
    serde_json::to_writer_pretty(&mut *out, v).map_err(Failure::internal)?;
    writeln!(out).map_err(io_fail)
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Outcome {
    let builder = ManifestBuilder::start("eval");
    let mode = tau_mode(&a.tau)?;
    let cfg = a.detector.config(a.tau.tau.unwrap_or(DetectorConfig::default().tau));
    let docs = load(&a.input)?;
    check_config(&cfg, corpus_layers(&docs))?;
    let report = evaluate(&docs, &cfg, mode)?;

    let mut out = open_output(a.out.as_deref()).map_err(Failure::internal)?;
    match a.format {
        Format::Table => write_report(&mut out, &report).map_err(io_fail)?,
        Format::Json => write_json(&mut out, &report)?,
    }
    out.flush().map_err(io_fail)?;
    drop(out);
    finish(
        ctx,
        builder,
        json!({ "detector": cfg, "tau_mode": mode, "max_tokens": a.input.max_tokens }),
        &[&a.input.trace],
        a.out.as_deref(),
    )
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> Outcome {
    let builder = ManifestBuilder::start("sweep");
    let mode = tau_mode(&a.tau)?;
    let base = DetectorConfig {
        repair_term: !a.no_repair,
        tau: a.tau.tau.unwrap_or(DetectorConfig::default().tau),
        ..DetectorConfig::default()
    };
    let mut grid = Vec::new();
    for &mapping in &a.mapping {
        for &layer_select in &a.layers {
            for &theta in &a.theta {
                for &alpha in &a.alpha {
                    grid.push(DetectorConfig {
                        theta,
                        alpha,
                        mapping,
                        layer_select,
                        ..base
                    });
                }
            }
        }
    }
    if grid.is_empty() {
        return Err(Failure::usage(anyhow!("empty sweep grid")));
    }
    let docs = load(&a.input)?;
    let report = run_sweep(&docs, &grid, mode)?;

    let mut out = open_output(a.out.as_deref()).map_err(Failure::internal)?;
    match a.format {
        Format::Table => {
            let w = &mut out;
            (|| -> std::io::Result<()> {
                writeln!(w, "theta\talpha\tmapping\tlayers\trepair\tauroc\tf1\ttau\terror")?;
                for c in report.per_config.as_deref().unwrap_or_default() {
                    writeln!(
                        w,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        real(c.theta),
                        real(c.alpha),
                        c.mapping,
                        c.layer_select,
                        c.repair_term,
                        opt_real(c.auroc),
                        opt_real(c.f1),
                        opt_real(c.tau),
                        c.error.as_deref().map_or_else(|| "-".into(), cell),
                    )?;
                }
                Ok(())
            })()
            .map_err(io_fail)?;
        }
        Format::Json => write_json(&mut out, &report)?,
    }
    out.flush().map_err(io_fail)?;
    drop(out);
    for c in report.per_config.as_deref().unwrap_or_default() {
        if let Some(e) = &c.error {
            eprintln!(
                "cell theta={} alpha={} layers={}: {e}",
                c.theta, c.alpha, c.layer_select
            );
        }
    }
    finish(
        ctx,
        builder,
        json!({ "grid": grid, "tau_mode": mode, "max_tokens": a.input.max_tokens }),
        &[&a.input.trace],
        a.out.as_deref(),
    )
}

pub fn lengths(ctx: &Context, a: LengthsArgs) -> Outcome {
    let builder = ManifestBuilder::start("lengths");
    let mode = tau_mode(&a.tau)?;
    let cfg = a.detector.config(a.tau.tau.unwrap_or(DetectorConfig::default().tau));
    let docs = load(&a.input)?;
    check_config(&cfg, corpus_layers(&docs))?;
    let rows: Vec<LengthReport> = length_robustness(&docs, &a.lengths, &cfg, mode)?;

    let mut out = open_output(a.out.as_deref()).map_err(Failure::internal)?;
    match a.format {
        Format::Table => {
            let w = &mut out;
            (|| -> std::io::Result<()> {
                writeln!(w, "length\tauroc\tf1\ttau\tn_ai\tn_human\tn_untruncated")?;
                for r in &rows {
                    writeln!(
                        w,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        r.length,
                        real(r.report.auroc),
                        real(r.report.f1),
                        real(r.report.tau),
                        r.report.n_pos,
                        r.report.n_neg,
                        r.n_untruncated
                    )?;
                }
                Ok(())
            })()
            .map_err(io_fail)?;
        }
        Format::Json => write_json(&mut out, &rows)?,
    }
    out.flush().map_err(io_fail)?;
    drop(out);
    finish(
        ctx,
        builder,
        json!({ "detector": cfg, "tau_mode": mode, "lengths": a.lengths, "max_tokens": a.input.max_tokens }),
        &[&a.input.trace],
        a.out.as_deref(),
    )
}

fn parse_len(s: &str) -> Result<DocLen, Failure> {
    let bad = || Failure::usage(anyhow!("--len expects N or MIN:MAX, got {s:?}"));
    match s.split_once(':') {
        Some((lo, hi)) => Ok(DocLen::Range(
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        )),
        None => Ok(DocLen::Fixed(s.trim().parse().map_err(|_| bad())?)),
    }
}

pub fn synth(ctx: &Context, a: SynthArgs) -> Outcome {
    let builder = ManifestBuilder::start("synth");
    let doc_len = parse_len(&a.len)?;
    let cfg = SynthConfig {
        seed: a.seed,
        n_docs_per_class: a.docs_per_class,
        doc_len,
        n_layers: a.n_layers,
        sep: a.sep,
        exon_rate: a.exon_rate,
        enrich: a.enrich,
    };
    let docs = generate(&cfg).map_err(Failure::usage)?;
    let mut out = open_output(Some(&a.out)).map_err(Failure::internal)?;
    write_corpus_to(&docs, &mut out).map_err(Failure::internal)?;
    out.flush().map_err(io_fail)?;
    drop(out);
    let len = match doc_len {
        DocLen::Fixed(n) => json!(n),
        DocLen::Range(lo, hi) => json!([lo, hi]),
    };
    finish(
        ctx,
        builder,
        json!({
            "seed": a.seed,
            "docs_per_class": a.docs_per_class,
            "len": len,
            "n_layers": a.n_layers,
            "sep": a.sep,
            "exon_rate": a.exon_rate,
            "enrich": a.enrich,
        }),
        &[],
        Some(&a.out),
    )
}

pub fn validate(ctx: &Context, a: ValidateArgs) -> Outcome {
    let builder = ManifestBuilder::start("validate");
    let stats = validate_corpus(&a.trace)?;
    let mut out = open_output(a.out.as_deref()).map_err(Failure::internal)?;
    match a.format {
        Format::Table => {
            let w = &mut out;
            (|| -> std::io::Result<()> {
                writeln!(w, "documents\t{}", stats.n_docs)?;
                writeln!(w, "human\t{}", stats.n_human)?;
                writeln!(w, "ai\t{}", stats.n_ai)?;
                writeln!(w, "unknown\t{}", stats.n_unknown)?;
                writeln!(
                    w,
                    "layers\t{}",
                    stats.layers.map_or_else(|| "NA".into(), |l| l.to_string())
                )?;
                writeln!(w, "tokens\t{}", stats.total_tokens)?;
                writeln!(
                    w,
                    "min_len\t{}",
                    stats.min_len.map_or_else(|| "NA".into(), |l| l.to_string())
                )?;
                writeln!(
                    w,
                    "max_len\t{}",
                    stats.max_len.map_or_else(|| "NA".into(), |l| l.to_string())
                )?;
                for (lo, n) in &stats.length_histogram {
                    writeln!(w, "len>={lo}\t{n}")?;
                }
                let nf = &stats.nonfinite;
                writeln!(w, "nonfinite\tlm={} lx={} lmax={} d={}", nf.lm, nf.lx, nf.lmax, nf.d)?;
                writeln!(w, "unit_discrepancies\t{}", stats.unit_discrepancies)?;
                writeln!(w, "violations\t{}", stats.violations.len())
            })()
            .map_err(io_fail)?;
        }
        Format::Json => write_json(&mut out, &stats)?,
    }
    out.flush().map_err(io_fail)?;
    drop(out);
    for v in &stats.violations {
        eprintln!("{v}");
    }
    finish(ctx, builder, json!({}), &[&a.trace], a.out.as_deref())?;
    if !stats.is_clean() {
        return Err(Failure::data(anyhow!(
            "{} violation(s) in {}",
            stats.violations.len(),
            a.trace.display()
        )));
    }
    Ok(())
}
