//! Training-free detection of AI-generated text by exon-aware token reweighting.
//!
//! The engine works on *traces*: per-token log-probabilities under a reference
//! model `M` and a paired model `M~`, the argmax log-probability under `M`, and
//! per-layer hidden-state cosine distances between the two models. Nothing in
//! this crate runs a language model.
//!
//! Pipeline for one document:
//!
//! 1. Each token gets a discrepancy `delta_t`, the mean of its per-layer cosine
//!    distances over the selected layers ([`score::token_discrepancy`]).
//! 2. Tokens with `delta_t > theta` are *exonic*; their discrepancy is mapped to
//!    an extra weight ([`score::map_weight`]) on top of a uniform base weight,
//!    then everything is normalized ([`score::normalize_weights`]).
//! 3. The translation score is the weighted log-perplexity (optionally plus the
//!    weighted log-perplexity of the argmax sequence) over the weighted
//!    cross-perplexity ([`score::score_document`]). Low scores mean AI-generated.
//!
//! Around that core sit the trace file format ([`trace`]), a deterministic
//! synthetic trace generator ([`synth`]) and the evaluation harness ([`eval`]).

pub mod eval;
pub mod rng;
pub mod score;
pub mod synth;
pub mod trace;

pub use eval::{auroc, calibrate_tau, f1_at, EvalError, EvalReport, TauMode};
pub use score::{
    decide, map_weight, normalize_weights, score_document, score_shift_check, token_discrepancy, weighted_cross_ppl,
    weighted_log_ppl, Decision, DetectorConfig, LayerSelect, Mapping, ScoreBreakdown, ScoreError, ShiftCheck,
    TokenRecord, WeightVector,
};
pub use synth::{generate, truncate_corpus, SynthConfig, SynthError};
pub use trace::{
    read_corpus, validate_corpus, write_corpus, CorpusStats, DocumentTrace, Label, TraceError, MAX_TOKENS_DEFAULT,
};
