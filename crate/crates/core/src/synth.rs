//! Deterministic synthetic dual-model traces with controllable class separation
//! and exonic-token enrichment.
//!
//! Generative model, per document of class `c` (`s = +1` for AI, `-1` for human):
//!
//! * A document-level offset `o ~ N(0, DOC_SD)` shifts the mean surprisal of
//!   every intronic token: `mu_in = max(MU_BASE + o - s * sep * INTRON_SHIFT, MU_FLOOR)`.
//! * Each token is exonic with probability `exon_rate`. Exonic tokens get every
//!   layer distance from `U[0.2, 0.8)`, intronic ones from `U[0, 0.1)`.
//! * An exonic token is label-consistent with probability `enrich / (1 + enrich)`
//!   (direction `r = +1`) and inconsistent otherwise (`r = -1`). Its mean surprisal
//!   ignores the document offset: `mu_ex = max(MU_BASE - r * s * sep * EXON_SHIFT, MU_FLOOR)`.
//!   Lower surprisal pulls a token's `a/b` contribution down, the AI side of the score.
//! * Surprisal `a = mu * Exp(1)`; `logp_m = -a`.
//! * `logp_mt = -max(a + CROSS_SD * N(0,1), 0)`.
//! * `logp_m_max = -min(a, ARGMAX_MEAN * Exp(1))`, so `logp_m <= logp_m_max` by construction.
//!
//! With `sep = 0` both classes share one distribution regardless of `enrich`.
//!
//! Draw order per document: offset, then per token: exonic flag, consistency
//! flag (exonic only), surprisal, cross noise, argmax draw, layer distances.
//! Documents alternate AI, human, AI, ... and the stream is one [`PortableRng`]
//! seeded with `seed`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rng::PortableRng;
use crate::score::TokenRecord;
use crate::trace::{DocumentTrace, Label};

const MU_BASE: f64 = 2.0;
const MU_FLOOR: f64 = 0.2;
const DOC_SD: f64 = 0.35;
const INTRON_SHIFT: f64 = 0.12;
const EXON_SHIFT: f64 = 0.5;
const CROSS_SD: f64 = 0.3;
const ARGMAX_MEAN: f64 = 0.5;

/// Layer-distance ranges for planted tokens.
pub const INTRON_D: (f64, f64) = (0.0, 0.1);
pub const EXON_D: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocLen {
    Fixed(usize),
    /// Inclusive range, drawn uniformly per document.
    Range(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_docs_per_class: usize,
    pub doc_len: DocLen,
    pub n_layers: usize,
    /// Class separability; 0 makes the classes indistinguishable.
    pub sep: f64,
    /// Fraction of tokens planted as exonic.
    pub exon_rate: f64,
    /// Odds of label-consistent over label-inconsistent exonic tokens.
    pub enrich: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_docs_per_class: 500,
            doc_len: DocLen::Fixed(200),
            n_layers: 4,
            sep: 1.0,
            exon_rate: 0.2,
            enrich: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1".into());
        }
        match self.doc_len {
            DocLen::Fixed(0) => return bad("doc_len must be >= 1".into()),
            DocLen::Range(lo, hi) if lo == 0 || lo > hi => return bad(format!("doc_len range {lo}..={hi} is invalid")),
            _ => {}
        }
        if !(self.sep.is_finite() && self.sep >= 0.0) {
            return bad(format!("sep must be finite and >= 0, got {}", self.sep));
        }
        if !(0.0..=1.0).contains(&self.exon_rate) {
            return bad(format!("exon_rate must be in [0, 1], got {}", self.exon_rate));
        }
        if !(self.enrich.is_finite() && self.enrich >= 1.0) {
            return bad(format!("enrich must be finite and >= 1, got {}", self.enrich));
        }
        Ok(())
    }
}

/// Generates `2 * n_docs_per_class` documents, alternating AI and human.
pub fn generate(config: &SynthConfig) -> Result<Vec<DocumentTrace>, SynthError> {
    config.validate()?;
    let mut rng = PortableRng::new(config.seed);
    let p_consistent = config.enrich / (1.0 + config.enrich);
    let n = 2 * config.n_docs_per_class;
    let mut docs = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Ai } else { Label::Human };
        let s = if label == Label::Ai { 1.0 } else { -1.0 };
        let len = match config.doc_len {
            DocLen::Fixed(n) => n,
            DocLen::Range(lo, hi) => lo + rng.below((hi - lo + 1) as u64) as usize,
        };
        let offset = DOC_SD * rng.normal();
        let mu_in = (MU_BASE + offset - s * config.sep * INTRON_SHIFT).max(MU_FLOOR);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let exonic = rng.bernoulli(config.exon_rate);
            let mu = if exonic {
                let r = if rng.bernoulli(p_consistent) { 1.0 } else { -1.0 };
                (MU_BASE - r * s * config.sep * EXON_SHIFT).max(MU_FLOOR)
            } else {
                mu_in
            };
            let a = mu * rng.exponential();
            let cross = (a + CROSS_SD * rng.normal()).max(0.0);
            let argmax = a.min(ARGMAX_MEAN * rng.exponential());
            let (lo, hi) = if exonic { EXON_D } else { INTRON_D };
            let d = (0..config.n_layers).map(|_| rng.range(lo, hi)).collect();
            tokens.push(TokenRecord::new(-a, -cross, -argmax, d));
        }
        docs.push(DocumentTrace {
            doc_id: format!("synth-{}-{i:06}", config.seed),
            label,
            meta: BTreeMap::from([
                ("generator".to_string(), "exon-synth".to_string()),
                ("seed".to_string(), config.seed.to_string()),
                ("sep".to_string(), config.sep.to_string()),
            ]),
            tokens,
        });
    }
    Ok(docs)
}

/// A corpus cut down to one target length.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedCorpus {
    pub length: usize,
    pub docs: Vec<DocumentTrace>,
    /// Ids of documents shorter than `length`, passed through unchanged.
    pub untruncated: Vec<String>,
}

/// Prefix-truncates every document to each requested length.
pub fn truncate_corpus(corpus: &[DocumentTrace], lengths: &[usize]) -> Result<Vec<TruncatedCorpus>, SynthError> {
    if let Some(bad) = lengths.iter().find(|&&l| l == 0) {
        return Err(SynthError::Config(format!("truncation length must be >= 1, got {bad}")));
    }
    Ok(lengths
        .iter()
        .map(|&length| TruncatedCorpus {
            length,
            docs: corpus.iter().map(|d| d.truncated(length)).collect(),
            untruncated: corpus
                .iter()
                .filter(|d| d.tokens.len() < length)
                .map(|d| d.doc_id.clone())
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{check_document, write_corpus_to};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_docs_per_class: 20,
            doc_len: DocLen::Range(5, 40),
            n_layers: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let bytes = |c: &SynthConfig| {
            let mut buf = Vec::new();
            write_corpus_to(&generate(c).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&small(9)), bytes(&small(9)));
        assert_ne!(bytes(&small(9)), bytes(&small(10)));
    }

    #[test]
    fn records_satisfy_invariants() {
        for seed in 0..5 {
            let c = SynthConfig {
                sep: 3.0,
                exon_rate: 0.5,
                ..small(seed)
            };
            for (i, d) in generate(&c).unwrap().iter().enumerate() {
                assert!(check_document(d, 3, i + 2).is_empty());
                let len = d.tokens.len();
                assert!((5..=40).contains(&len));
            }
        }
    }

    #[test]
    fn planted_discrepancies_straddle_default_threshold() {
        let c = SynthConfig {
            exon_rate: 0.3,
            ..small(1)
        };
        let mut n_exonic = 0;
        for d in generate(&c).unwrap() {
            for t in &d.tokens {
                let mean = t.layer_cosdist.iter().sum::<f64>() / 3.0;
                assert!(!(0.1..0.2).contains(&mean));
                n_exonic += usize::from(mean >= 0.2);
            }
        }
        assert!(n_exonic > 0);
    }

    #[test]
    fn labels_alternate_and_balance() {
        let docs = generate(&small(2)).unwrap();
        assert_eq!(docs.len(), 40);
        assert_eq!(docs.iter().filter(|d| d.label == Label::Ai).count(), 20);
        assert_eq!(docs[0].label, Label::Ai);
        assert_eq!(docs[1].label, Label::Human);
    }

    #[test]
    fn config_errors() {
        let base = small(0);
        for bad in [
            SynthConfig { n_layers: 0, ..base },
            SynthConfig {
                doc_len: DocLen::Fixed(0),
                ..base
            },
            SynthConfig {
                doc_len: DocLen::Range(10, 5),
                ..base
            },
            SynthConfig { sep: -1.0, ..base },
            SynthConfig { exon_rate: 1.5, ..base },
            SynthConfig { enrich: 0.5, ..base },
        ] {
            assert!(generate(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn truncation_lengths() {
        let c = SynthConfig {
            doc_len: DocLen::Fixed(200),
            ..small(4)
        };
        let docs = generate(&c).unwrap();
        let cut = truncate_corpus(&docs, &[50, 100, 200, 1]).unwrap();
        for (tc, want) in cut.iter().zip([50, 100, 200, 1]) {
            assert!(tc.docs.iter().all(|d| d.tokens.len() == want));
            assert!(tc.untruncated.is_empty());
            assert_eq!(tc.docs[3].tokens[..], docs[3].tokens[..want]);
        }
        let cut = truncate_corpus(&docs, &[300]).unwrap();
        assert_eq!(cut[0].untruncated.len(), docs.len());
        assert!(truncate_corpus(&docs, &[0]).is_err());
    }
}
