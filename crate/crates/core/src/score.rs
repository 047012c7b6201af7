//! Token discrepancy, exonic weighting and the translation score for a single document.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{self, DocumentTrace};

/// Magnitudes below this, times `max(1, |R0|)`, count as zero when comparing signs of score shifts.
pub const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// The weighted cross-perplexity is zero, so no ratio exists. The breakdown
    /// carries every aggregate except `score` and `r0`, which are NaN.
    #[error("degenerate score: weighted cross-perplexity is zero")]
    Degenerate { breakdown: Box<ScoreBreakdown> },
    #[error("degenerate score: non-finite value {0}")]
    NonFinite(f64),
}

/// Per-position features of one observed token.
///
/// All log-probabilities are natural logs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TokenRecord {
    /// `log P_M(x_t | x_<t)`.
    #[serde(rename = "lm", deserialize_with = "trace::lenient_f64")]
    pub logp_m: f64,
    /// `log P_M~(x_t | x_<t)`.
    #[serde(rename = "lx", deserialize_with = "trace::lenient_f64")]
    pub logp_mt: f64,
    /// `max_v log P_M(v | x_<t)`.
    #[serde(rename = "lmax", deserialize_with = "trace::lenient_f64")]
    pub logp_m_max: f64,
    /// `1 - cos(h_t, h~_t)` for each hidden layer, first layer first.
    #[serde(rename = "d", deserialize_with = "trace::lenient_f64_vec")]
    pub layer_cosdist: Vec<f64>,
}

impl TokenRecord {
    pub fn new(logp_m: f64, logp_mt: f64, logp_m_max: f64, layer_cosdist: Vec<f64>) -> Self {
        Self {
            logp_m,
            logp_mt,
            logp_m_max,
            layer_cosdist,
        }
    }

    /// `a = -log P_M(x)`.
    #[inline]
    pub fn surprisal(&self) -> f64 {
        -self.logp_m
    }

    /// `b = -P_M(x) log P_M~(x)`.
    #[inline]
    pub fn cross_term(&self) -> f64 {
        -self.logp_m.exp() * self.logp_mt
    }
}

/// Which hidden layers feed the per-token discrepancy mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerSelect {
    All,
    /// The first `k` layers.
    Forward(usize),
    /// The last `k` layers.
    Reverse(usize),
}

impl LayerSelect {
    /// Resolves to a half-open layer index range for a trace with `n_layers` layers.
    pub fn range(self, n_layers: usize) -> Result<std::ops::Range<usize>, ScoreError> {
        if n_layers == 0 {
            return Err(ScoreError::InvalidTrace("empty layer_cosdist".into()));
        }
        match self {
            LayerSelect::All => Ok(0..n_layers),
            LayerSelect::Forward(k) | LayerSelect::Reverse(k) if k == 0 || k > n_layers => Err(
                ScoreError::InvalidTrace(format!("layer selection {self} needs 1..={n_layers} layers")),
            ),
            LayerSelect::Forward(k) => Ok(0..k),
            LayerSelect::Reverse(k) => Ok(n_layers - k..n_layers),
        }
    }
}

impl fmt::Display for LayerSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelect::All => f.write_str("all"),
            LayerSelect::Forward(k) => write!(f, "forward:{k}"),
            LayerSelect::Reverse(k) => write!(f, "reverse:{k}"),
        }
    }
}

impl FromStr for LayerSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(LayerSelect::All);
        }
        let (kind, k) = s
            .split_once(':')
            .ok_or_else(|| format!("bad layer spec `{s}` (expected all, forward:K or reverse:K)"))?;
        let k: usize = k.parse().map_err(|_| format!("bad layer count in `{s}`"))?;
        if k == 0 {
            return Err(format!("layer count must be >= 1 in `{s}`"));
        }
        match kind {
            "forward" => Ok(LayerSelect::Forward(k)),
            "reverse" => Ok(LayerSelect::Reverse(k)),
            _ => Err(format!("bad layer spec `{s}` (expected all, forward:K or reverse:K)")),
        }
    }
}

impl From<LayerSelect> for String {
    fn from(l: LayerSelect) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LayerSelect {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// How an above-threshold discrepancy becomes an additional weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mapping {
    /// `1 - exp(-alpha * (delta - theta)_+)`, bounded in `[0, 1)`.
    Nonlinear,
    /// `alpha * (delta - theta)_+`.
    Linear,
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mapping::Nonlinear => "nonlinear",
            Mapping::Linear => "linear",
        })
    }
}

impl FromStr for Mapping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nonlinear" => Ok(Mapping::Nonlinear),
            "linear" => Ok(Mapping::Linear),
            other => Err(format!("unknown mapping `{other}` (expected nonlinear or linear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Discrepancy threshold; tokens strictly above it are exonic.
    pub theta: f64,
    /// Mapping slope.
    pub alpha: f64,
    pub mapping: Mapping,
    pub layer_select: LayerSelect,
    /// Add the argmax-sequence log-perplexity to the numerator.
    pub repair_term: bool,
    /// Decision threshold: `score <= tau` is AI-generated.
    pub tau: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            alpha: 10.0,
            mapping: Mapping::Nonlinear,
            layer_select: LayerSelect::All,
            repair_term: true,
            tau: 1.0,
        }
    }
}

impl DetectorConfig {
    /// Same config with exon reweighting switched off (every token keeps the uniform weight).
    pub fn uniform(self) -> Self {
        Self {
            theta: f64::INFINITY,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(ScoreError::InvalidConfig(format!(
                "theta must be >= 0, got {}",
                self.theta
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ScoreError::InvalidConfig(format!(
                "alpha must be finite and > 0, got {}",
                self.alpha
            )));
        }
        if self.tau.is_nan() {
            return Err(ScoreError::InvalidConfig("tau must not be NaN".into()));
        }
        Ok(())
    }
}

/// Mean cosine distance over the selected layers of one token.
pub fn token_discrepancy(record: &TokenRecord, layer_select: LayerSelect) -> Result<f64, ScoreError> {
    let range = layer_select.range(record.layer_cosdist.len())?;
    let n = range.len() as f64;
    Ok(record.layer_cosdist[range].iter().sum::<f64>() / n)
}

/// Additional weight for a token with discrepancy `delta`. Exactly zero when `delta <= theta`.
pub fn map_weight(delta: f64, config: &DetectorConfig) -> f64 {
    let excess = (delta - config.theta).max(0.0);
    if excess == 0.0 {
        return 0.0;
    }
    match config.mapping {
        Mapping::Nonlinear => -(-config.alpha * excess).exp_m1(),
        Mapping::Linear => config.alpha * excess,
    }
}

/// `w_t = (1 + dw_t) / sum_i (1 + dw_i)`.
pub fn normalize_weights(delta_w: &[f64]) -> Result<Vec<f64>, ScoreError> {
    if delta_w.is_empty() {
        return Err(ScoreError::InvalidTrace("no tokens to weight".into()));
    }
    if let Some(bad) = delta_w.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(ScoreError::InvalidTrace(format!(
            "additional weight must be finite and >= 0, got {bad}"
        )));
    }
    let total: f64 = delta_w.iter().map(|d| 1.0 + d).sum();
    Ok(delta_w.iter().map(|d| (1.0 + d) / total).collect())
}

fn check_len(a: usize, b: usize) -> Result<(), ScoreError> {
    if a != b {
        return Err(ScoreError::InvalidTrace(format!(
            "length mismatch: {a} values vs {b} weights"
        )));
    }
    Ok(())
}

/// `-sum_t w_t * logp_t`.
pub fn weighted_log_ppl(logp: &[f64], w: &[f64]) -> Result<f64, ScoreError> {
    check_len(logp.len(), w.len())?;
    Ok(-logp.iter().zip(w).map(|(l, w)| w * l).sum::<f64>())
}

/// `-sum_t w_t * exp(logp_m_t) * logp_mt_t`, using only the observed token.
pub fn weighted_cross_ppl(logp_m: &[f64], logp_mt: &[f64], w: &[f64]) -> Result<f64, ScoreError> {
    check_len(logp_m.len(), w.len())?;
    check_len(logp_mt.len(), w.len())?;
    Ok(-logp_m
        .iter()
        .zip(logp_mt)
        .zip(w)
        .map(|((m, mt), w)| w * m.exp() * mt)
        .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub delta_w: Vec<f64>,
    pub w: Vec<f64>,
    pub exonic_mask: Vec<bool>,
}

impl WeightVector {
    pub fn n_exonic(&self) -> usize {
        self.exonic_mask.iter().filter(|&&m| m).count()
    }
}

/// Every intermediate quantity behind one document's score.
///
/// `a0`/`b0` are unweighted sums of `a_t = -logp_m` and `b_t = -exp(logp_m) logp_mt`;
/// `a_s`/`b_s` are the same sums over exonic tokens scaled by their additional weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub delta: Vec<f64>,
    pub weights: WeightVector,
    pub wppl_s: f64,
    pub wppl_shat: Option<f64>,
    pub wxppl: f64,
    pub r0: f64,
    pub a0: f64,
    pub b0: f64,
    pub a_s: f64,
    pub b_s: f64,
    pub score: f64,
}

impl ScoreBreakdown {
    pub fn n_tokens(&self) -> usize {
        self.delta.len()
    }

    /// `(A0 + A_S) / (B0 + B_S)`, the reweighted score written in aggregate form.
    pub fn rw(&self) -> f64 {
        (self.a0 + self.a_s) / (self.b0 + self.b_s)
    }
}

/// Scores one document.
pub fn score_document(trace: &DocumentTrace, config: &DetectorConfig) -> Result<ScoreBreakdown, ScoreError> {
    score_tokens(&trace.tokens, config)
}

/// Scores a bare token sequence.
pub fn score_tokens(tokens: &[TokenRecord], config: &DetectorConfig) -> Result<ScoreBreakdown, ScoreError> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(ScoreError::InvalidTrace("document has no tokens".into()));
    }
    let n_layers = tokens[0].layer_cosdist.len();
    let layers = config.layer_select.range(n_layers)?;

    let n = tokens.len();
    let mut delta = Vec::with_capacity(n);
    let mut delta_w = Vec::with_capacity(n);
    let mut exonic_mask = Vec::with_capacity(n);
    for (pos, tok) in tokens.iter().enumerate() {
        if tok.layer_cosdist.len() != n_layers {
            return Err(ScoreError::InvalidTrace(format!(
                "token {pos} has {} layers, expected {n_layers}",
                tok.layer_cosdist.len()
            )));
        }
        let d = tok.layer_cosdist[layers.clone()].iter().sum::<f64>() / layers.len() as f64;
        delta.push(d);
        delta_w.push(map_weight(d, config));
        exonic_mask.push(d > config.theta);
    }
    let w = normalize_weights(&delta_w)?;

    let logp_m: Vec<f64> = tokens.iter().map(|t| t.logp_m).collect();
    let logp_mt: Vec<f64> = tokens.iter().map(|t| t.logp_mt).collect();
    let wppl_s = weighted_log_ppl(&logp_m, &w)?;
    let wxppl = weighted_cross_ppl(&logp_m, &logp_mt, &w)?;
    let wppl_shat = if config.repair_term {
        let logp_max: Vec<f64> = tokens.iter().map(|t| t.logp_m_max).collect();
        Some(weighted_log_ppl(&logp_max, &w)?)
    } else {
        None
    };

    let (mut a0, mut b0, mut a_s, mut b_s) = (0.0, 0.0, 0.0, 0.0);
    for ((tok, &dw), &exonic) in tokens.iter().zip(&delta_w).zip(&exonic_mask) {
        let (a, b) = (tok.surprisal(), tok.cross_term());
        a0 += a;
        b0 += b;
        if exonic {
            a_s += dw * a;
            b_s += dw * b;
        }
    }

    let mut breakdown = ScoreBreakdown {
        delta,
        weights: WeightVector {
            delta_w,
            w,
            exonic_mask,
        },
        wppl_s,
        wppl_shat,
        wxppl,
        r0: f64::NAN,
        a0,
        b0,
        a_s,
        b_s,
        score: f64::NAN,
    };
    if wxppl == 0.0 || b0 == 0.0 {
        return Err(ScoreError::Degenerate {
            breakdown: Box::new(breakdown),
        });
    }
    breakdown.r0 = a0 / b0;
    breakdown.score = (wppl_s + wppl_shat.unwrap_or(0.0)) / wxppl;
    Ok(breakdown)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Human,
    Ai,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Human => "human",
            Decision::Ai => "ai",
        })
    }
}

/// `score > tau` is human-written; `score <= tau` is AI-generated.
pub fn decide(score: f64, tau: f64) -> Result<Decision, ScoreError> {
    if !score.is_finite() {
        return Err(ScoreError::NonFinite(score));
    }
    Ok(if score > tau { Decision::Human } else { Decision::Ai })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        Sign::within(x, SIGN_EPS)
    }

    /// Sign with everything in `(-eps, eps)` mapped to zero.
    pub fn within(x: f64, eps: f64) -> Sign {
        if x.abs() < eps {
            Sign::Zero
        } else if x > 0.0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ShiftCheck {
    /// No exonic mass (`b_s == 0`); the comparison is undefined.
    NotApplicable,
    Checked {
        /// `sign(R^W - R0)`.
        shift: Sign,
        /// `sign(A_S / B_S - R0)`.
        exon_ratio: Sign,
        agree: bool,
    },
}

/// Compares the direction of the reweighting shift with the exonic ratio's side of `R0`.
///
/// Works from the aggregates only, so the repair term plays no part.
pub fn score_shift_check(breakdown: &ScoreBreakdown) -> ShiftCheck {
    if breakdown.b_s == 0.0 || breakdown.b0 == 0.0 {
        return ShiftCheck::NotApplicable;
    }
    let r0 = breakdown.a0 / breakdown.b0;
    let eps = SIGN_EPS * r0.abs().max(1.0);
    let shift = Sign::within(breakdown.rw() - r0, eps);
    let exon_ratio = Sign::within(breakdown.a_s / breakdown.b_s - r0, eps);
    ShiftCheck::Checked {
        shift,
        exon_ratio,
        agree: shift == exon_ratio,
    }
}
