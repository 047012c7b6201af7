//! Straight-line reference implementation of the scorer, kept independent of the
//! library's code path. Only the input types are shared.

#![allow(dead_code)]

use exon_core::TokenRecord;

pub struct NaiveConfig {
    pub theta: f64,
    pub alpha: f64,
    pub linear: bool,
    /// (from_end, k); `None` means all layers.
    pub layers: Option<(bool, usize)>,
    pub repair: bool,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        NaiveConfig {
            theta: 0.15,
            alpha: 10.0,
            linear: false,
            layers: None,
            repair: true,
        }
    }
}

pub fn naive_score(tokens: &[TokenRecord], c: &NaiveConfig) -> f64 {
    let n_layers = tokens[0].layer_cosdist.len();
    let (lo, hi) = match c.layers {
        None => (0, n_layers),
        Some((false, k)) => (0, k),
        Some((true, k)) => (n_layers - k, n_layers),
    };
    let mut extra = Vec::new();
    for t in tokens {
        let mut s = 0.0;
        for l in lo..hi {
            s += t.layer_cosdist[l];
        }
        let delta = s / (hi - lo) as f64;
        let pos = if delta - c.theta > 0.0 { delta - c.theta } else { 0.0 };
        extra.push(if c.linear {
            c.alpha * pos
        } else {
            1.0 - (-c.alpha * pos).exp()
        });
    }
    let mut denom = 0.0;
    for e in &extra {
        denom += 1.0 + e;
    }
    let mut ppl = 0.0;
    let mut ppl_hat = 0.0;
    let mut xppl = 0.0;
    for (t, e) in tokens.iter().zip(&extra) {
        let w = (1.0 + e) / denom;
        ppl -= w * t.logp_m;
        ppl_hat -= w * t.logp_m_max;
        xppl -= w * t.logp_m.exp() * t.logp_mt;
    }
    if c.repair {
        (ppl + ppl_hat) / xppl
    } else {
        ppl / xppl
    }
}

/// Unweighted `sum(a) / sum(b)`.
pub fn naive_r0(tokens: &[TokenRecord]) -> f64 {
    let a: f64 = tokens.iter().map(|t| -t.logp_m).sum();
    let b: f64 = tokens.iter().map(|t| -t.logp_m.exp() * t.logp_mt).sum();
    a / b
}

/// O(n^2) pairwise AUROC, AI expected low.
pub fn pairwise_auroc(ai: &[f64], human: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in ai {
        for h in human {
            if a < h {
                wins += 1.0;
            } else if a == h {
                wins += 0.5;
            }
        }
    }
    wins / (ai.len() * human.len()) as f64
}
