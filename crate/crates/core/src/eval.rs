//! AUROC, F1, threshold calibration and the sweep / length-robustness harness.
//!
//! Orientation: AI-generated is the positive class and scores *low*, so AUROC
//! is `P(score_ai < score_human) + P(tie) / 2`. Reversing score orientation
//! turns it into `1 - AUROC`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng::PortableRng;
use crate::score::{score_document, DetectorConfig, LayerSelect, Mapping, ScoreError};
use crate::synth::{truncate_corpus, SynthError};
use crate::trace::{DocumentTrace, Label};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn check_finite(scores: &[f64]) -> Result<(), EvalError> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(s) => Err(EvalError::Input(format!("non-finite score {s}"))),
        None => Ok(()),
    }
}

/// Mann-Whitney AUROC with half credit for ties, AI scores expected low.
pub fn auroc(scores_ai: &[f64], scores_human: &[f64]) -> Result<f64, EvalError> {
    if scores_ai.is_empty() || scores_human.is_empty() {
        return Err(EvalError::Input("AUROC needs at least one score per class".into()));
    }
    check_finite(scores_ai)?;
    check_finite(scores_human)?;

    let mut all: Vec<(f64, bool)> = scores_ai
        .iter()
        .map(|&s| (s, false))
        .chain(scores_human.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of 1-based mid-ranks of human scores; half-integers, exact in f64.
    let mut rank_sum_human = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let humans = all[i..j].iter().filter(|(_, h)| *h).count();
        rank_sum_human += mid_rank * humans as f64;
        i = j;
    }
    let n_h = scores_human.len() as f64;
    let n_a = scores_ai.len() as f64;
    let u_human = rank_sum_human - n_h * (n_h + 1.0) / 2.0;
    Ok(u_human / (n_a * n_h))
}

/// F1 of the AI class from confusion counts; 0 when precision + recall is 0.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

fn labeled<'a>(scores: &'a [f64], labels: &'a [Label]) -> impl Iterator<Item = (f64, bool)> + 'a {
    scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l != Label::Unknown)
        .map(|(&s, &l)| (s, l == Label::Ai))
}

/// F1 of the AI class when `score <= tau` predicts AI. Unknown labels are skipped.
pub fn f1_at(scores: &[f64], labels: &[Label], tau: f64) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Input("scores and labels differ in length".into()));
    }
    check_finite(scores)?;
    let (mut tp, mut fp, mut fn_, mut n) = (0, 0, 0, 0);
    for (s, is_ai) in labeled(scores, labels) {
        n += 1;
        match (s <= tau, is_ai) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if n == 0 {
        return Err(EvalError::Input("no labeled documents".into()));
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub tau: f64,
    pub f1: f64,
}

/// Picks the F1-maximizing threshold among midpoints of adjacent distinct scores
/// plus the `-inf` / `+inf` sentinels, preferring the smallest on ties.
pub fn calibrate_tau(scores: &[f64], labels: &[Label]) -> Result<Calibration, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Input("scores and labels differ in length".into()));
    }
    check_finite(scores)?;
    let mut pts: Vec<(f64, bool)> = labeled(scores, labels).collect();
    let n_ai = pts.iter().filter(|p| p.1).count();
    if n_ai == 0 || n_ai == pts.len() {
        return Err(EvalError::Input("calibration needs both AI and human documents".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    // tau = -inf predicts nothing as AI.
    let mut best = Calibration {
        tau: f64::NEG_INFINITY,
        f1: 0.0,
    };
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].0;
        while i < pts.len() && pts[i].0 == v {
            if pts[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Every score <= v is now predicted AI.
        let tau = match pts.get(i) {
            Some(&(next, _)) => {
                let mid = v + (next - v) / 2.0;
                if mid < next {
                    mid
                } else {
                    v
                }
            }
            None => f64::INFINITY,
        };
        let f1 = f1_from_counts(tp, fp, n_ai - tp);
        if f1 > best.f1 {
            best = Calibration { tau, f1 };
        }
    }
    Ok(best)
}

/// How the decision threshold for F1 is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    Fixed(f64),
    /// Calibrate on the evaluated documents themselves.
    InSample,
    /// Calibrate on a seeded random fraction, evaluate on the rest.
    Split {
        fraction: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub theta: f64,
    pub alpha: f64,
    pub mapping: Mapping,
    pub layer_select: LayerSelect,
    pub repair_term: bool,
    pub auroc: Option<f64>,
    pub f1: Option<f64>,
    pub tau: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub f1: f64,
    pub tau: f64,
    /// AI-generated documents evaluated.
    pub n_pos: usize,
    /// Human-written documents evaluated.
    pub n_neg: usize,
    pub n_unlabeled: usize,
    /// Documents with zero weighted cross-perplexity, left out of the metrics.
    pub n_degenerate: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_config: Option<Vec<SweepCell>>,
}

/// Scores every document in parallel; output order matches input order.
pub fn score_corpus(corpus: &[DocumentTrace], config: &DetectorConfig) -> Vec<Result<f64, ScoreError>> {
    corpus
        .par_iter()
        .map(|d| score_document(d, config).map(|b| b.score))
        .collect()
}

struct Scored {
    scores: Vec<f64>,
    labels: Vec<Label>,
    n_unlabeled: usize,
    n_degenerate: usize,
}

fn collect_scores(corpus: &[DocumentTrace], config: &DetectorConfig) -> Result<Scored, EvalError> {
    let mut out = Scored {
        scores: Vec::with_capacity(corpus.len()),
        labels: Vec::with_capacity(corpus.len()),
        n_unlabeled: 0,
        n_degenerate: 0,
    };
    for (doc, res) in corpus.iter().zip(score_corpus(corpus, config)) {
        if doc.label == Label::Unknown {
            out.n_unlabeled += 1;
            continue;
        }
        match res {
            Ok(s) => {
                out.scores.push(s);
                out.labels.push(doc.label);
            }
            Err(ScoreError::Degenerate { .. }) => out.n_degenerate += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn split_by_class(scores: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut ai = Vec::new();
    let mut human = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        match l {
            Label::Ai => ai.push(*s),
            Label::Human => human.push(*s),
            Label::Unknown => {}
        }
    }
    (ai, human)
}

/// Scores a labeled corpus and reports AUROC and F1.
pub fn evaluate(corpus: &[DocumentTrace], config: &DetectorConfig, tau_mode: TauMode) -> Result<EvalReport, EvalError> {
    let scored = collect_scores(corpus, config)?;
    if scored.scores.is_empty() {
        return Err(EvalError::Input(
            "no labeled documents to evaluate; use score for unlabeled corpora".into(),
        ));
    }
    let (scores, labels, tau) = match tau_mode {
        TauMode::Fixed(tau) => (scored.scores, scored.labels, tau),
        TauMode::InSample => {
            let tau = calibrate_tau(&scored.scores, &scored.labels)?.tau;
            (scored.scores, scored.labels, tau)
        }
        TauMode::Split { fraction, seed } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(EvalError::Input(format!(
                    "calibration fraction must be in (0, 1), got {fraction}"
                )));
            }
            let mut idx: Vec<usize> = (0..scored.scores.len()).collect();
            PortableRng::new(seed).shuffle(&mut idx);
            let n_cal = ((idx.len() as f64) * fraction).ceil() as usize;
            let pick = |ix: &[usize]| -> (Vec<f64>, Vec<Label>) {
                ix.iter().map(|&i| (scored.scores[i], scored.labels[i])).unzip()
            };
            let (cal_s, cal_l) = pick(&idx[..n_cal]);
            let (ev_s, ev_l) = pick(&idx[n_cal..]);
            let tau = calibrate_tau(&cal_s, &cal_l)?.tau;
            (ev_s, ev_l, tau)
        }
    };
    let (ai, human) = split_by_class(&scores, &labels);
    Ok(EvalReport {
        auroc: auroc(&ai, &human)?,
        f1: f1_at(&scores, &labels, tau)?,
        tau,
        n_pos: ai.len(),
        n_neg: human.len(),
        n_unlabeled: scored.n_unlabeled,
        n_degenerate: scored.n_degenerate,
        per_config: None,
    })
}

/// The threshold/slope grid of the sensitivity study.
pub fn default_grid(base: &DetectorConfig) -> Vec<DetectorConfig> {
    let mut grid = Vec::new();
    for theta in [0.05, 0.10, 0.15, 0.20] {
        for alpha in [2.0, 6.0, 10.0] {
            grid.push(DetectorConfig { theta, alpha, ..*base });
        }
    }
    grid
}

/// Evaluates every grid cell over the same corpus. Cell failures are recorded, not fatal.
///
/// The top-level metrics repeat the best-AUROC cell (first one on ties).
pub fn sweep(corpus: &[DocumentTrace], grid: &[DetectorConfig], tau_mode: TauMode) -> Result<EvalReport, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::Input("empty sweep grid".into()));
    }
    let results: Vec<Result<EvalReport, EvalError>> = grid.par_iter().map(|c| evaluate(corpus, c, tau_mode)).collect();
    let cells: Vec<SweepCell> = grid
        .iter()
        .zip(&results)
        .map(|(c, r)| SweepCell {
            theta: c.theta,
            alpha: c.alpha,
            mapping: c.mapping,
            layer_select: c.layer_select,
            repair_term: c.repair_term,
            auroc: r.as_ref().ok().map(|r| r.auroc),
            f1: r.as_ref().ok().map(|r| r.f1),
            tau: r.as_ref().ok().map(|r| r.tau),
            error: r.as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    let best = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(None::<&EvalReport>, |best, r| match best {
            Some(b) if b.auroc >= r.auroc => Some(b),
            _ => Some(r),
        });
    let Some(best) = best else {
        return Err(EvalError::Input(format!(
            "every sweep cell failed; first error: {}",
            cells[0].error.as_deref().unwrap_or("?")
        )));
    };
    Ok(EvalReport {
        per_config: Some(cells),
        ..best.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthReport {
    pub length: usize,
    pub report: EvalReport,
    /// Documents shorter than `length`, evaluated at full length.
    pub n_untruncated: usize,
}

/// Re-evaluates the corpus prefix-truncated to each length.
pub fn length_robustness(
    corpus: &[DocumentTrace],
    lengths: &[usize],
    config: &DetectorConfig,
    tau_mode: TauMode,
) -> Result<Vec<LengthReport>, EvalError> {
    truncate_corpus(corpus, lengths)?
        .into_iter()
        .map(|tc| {
            Ok(LengthReport {
                length: tc.length,
                report: evaluate(&tc.docs, config, tau_mode)?,
                n_untruncated: tc.untruncated.len(),
            })
        })
        .collect()
}
