mod common;

use common::pairwise_auroc;
use exon_core::eval::{default_grid, evaluate, length_robustness, sweep};
use exon_core::rng::PortableRng;
use exon_core::synth::{generate, DocLen, SynthConfig};
use exon_core::{auroc, calibrate_tau, f1_at, DetectorConfig, Label, LayerSelect, TauMode};
use proptest::prelude::*;

/// Scores drawn from a coarse lattice so ties are common.
fn score_set(rng: &mut PortableRng) -> (Vec<f64>, Vec<f64>) {
    let n_ai = 1 + rng.below(40) as usize;
    let n_h = 1 + rng.below(40) as usize;
    let levels = 1 + rng.below(12);
    let mut draw = |shift: f64| (rng.below(levels) as f64) * 0.25 + shift;
    let ai: Vec<f64> = (0..n_ai).map(|_| draw(0.0)).collect();
    let human: Vec<f64> = (0..n_h).map(|_| draw(0.3)).collect();
    (ai, human)
}

#[test]
fn auroc_matches_pairwise_with_ties() {
    let mut rng = PortableRng::new(2024);
    for _ in 0..200 {
        let (ai, human) = score_set(&mut rng);
        let fast = auroc(&ai, &human).unwrap();
        assert!((fast - pairwise_auroc(&ai, &human)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn reversing_orientation_flips_auroc(
        ai in prop::collection::vec(-5.0f64..5.0, 1..30),
        human in prop::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let a = auroc(&ai, &human).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let flipped = auroc(&neg(&ai), &neg(&human)).unwrap();
        prop_assert!((a + flipped - 1.0).abs() < 1e-12);
        // A strictly decreasing transform plus a label swap leaves AUROC alone.
        let dec = |v: &[f64]| v.iter().map(|x| (-x).exp()).collect::<Vec<_>>();
        prop_assert!((auroc(&dec(&human), &dec(&ai)).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn calibration_beats_every_candidate(
        pts in prop::collection::vec((0u8..20, any::<bool>()), 2..40),
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64 / 4.0).collect();
        let labels: Vec<Label> = pts.iter().map(|p| if p.1 { Label::Ai } else { Label::Human }).collect();
        prop_assume!(labels.contains(&Label::Ai) && labels.contains(&Label::Human));
        let c = calibrate_tau(&scores, &labels).unwrap();
        prop_assert_eq!(f1_at(&scores, &labels, c.tau).unwrap(), c.f1);
        let mut uniq = scores.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
        cands.extend(uniq.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        for t in cands {
            prop_assert!(f1_at(&scores, &labels, t).unwrap() <= c.f1);
        }
    }

    #[test]
    fn boundary_score_counts_as_ai(tau in -3.0f64..3.0) {
        prop_assert_eq!(f1_at(&[tau, tau + 1.0], &[Label::Ai, Label::Human], tau).unwrap(), 1.0);
    }
}

fn corpus(seed: u64, sep: f64) -> Vec<exon_core::DocumentTrace> {
    generate(&SynthConfig {
        seed,
        n_docs_per_class: 100,
        doc_len: DocLen::Fixed(80),
        n_layers: 4,
        sep,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn one_cell_sweep_equals_single_eval() {
    let c = corpus(1, 1.0);
    let cfg = DetectorConfig::default();
    let single = evaluate(&c, &cfg, TauMode::InSample).unwrap();
    let swept = sweep(&c, &[cfg], TauMode::InSample).unwrap();
    let cell = &swept.per_config.as_ref().unwrap()[0];
    assert_eq!(cell.auroc, Some(single.auroc));
    assert_eq!(cell.f1, Some(single.f1));
    assert_eq!(swept.auroc, single.auroc);
}

#[test]
fn default_grid_has_twelve_populated_cells() {
    let c = corpus(2, 1.0);
    let grid = default_grid(&DetectorConfig::default());
    assert_eq!(grid.len(), 12);
    let report = sweep(&c, &grid, TauMode::InSample).unwrap();
    let cells = report.per_config.unwrap();
    assert_eq!(cells.len(), 12);
    assert!(cells.iter().all(|c| c.auroc.is_some() && c.error.is_none()));
    let thetas: Vec<f64> = cells.iter().map(|c| c.theta).collect();
    assert_eq!(&thetas[..3], &[0.05, 0.05, 0.05]);
    assert_eq!(
        cells.iter().map(|c| c.alpha).take(3).collect::<Vec<_>>(),
        [2.0, 6.0, 10.0]
    );
}

#[test]
fn bad_layer_cell_is_recorded_and_sweep_continues() {
    let c = corpus(3, 1.0);
    let base = DetectorConfig::default();
    let grid = [
        base,
        DetectorConfig {
            layer_select: LayerSelect::Reverse(16),
            ..base
        },
        DetectorConfig {
            layer_select: LayerSelect::Reverse(2),
            ..base
        },
    ];
    let cells = sweep(&c, &grid, TauMode::InSample).unwrap().per_config.unwrap();
    assert!(cells[0].error.is_none());
    assert!(cells[1].error.as_deref().unwrap().contains("reverse:16"));
    assert!(cells[1].auroc.is_none());
    assert!(cells[2].auroc.is_some());
}

#[test]
fn full_length_robustness_equals_baseline() {
    let c = corpus(4, 1.0);
    let cfg = DetectorConfig::default();
    let base = evaluate(&c, &cfg, TauMode::InSample).unwrap();
    let rows = length_robustness(&c, &[80, 1], &cfg, TauMode::InSample).unwrap();
    assert_eq!(rows[0].report, base);
    assert!((0.0..=1.0).contains(&rows[1].report.auroc));
    assert_eq!(rows[1].n_untruncated, 0);
}

#[test]
fn split_calibration_is_deterministic_and_disjoint() {
    let c = corpus(5, 2.0);
    let cfg = DetectorConfig::default();
    let mode = TauMode::Split { fraction: 0.3, seed: 9 };
    let a = evaluate(&c, &cfg, mode).unwrap();
    let b = evaluate(&c, &cfg, mode).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_pos + a.n_neg, 140);
    assert!(evaluate(&c, &cfg, TauMode::Split { fraction: 1.0, seed: 9 }).is_err());
}

#[test]
fn unlabeled_corpus_is_rejected() {
    let mut c = corpus(6, 1.0);
    for d in &mut c {
        d.label = Label::Unknown;
    }
    assert!(evaluate(&c, &DetectorConfig::default(), TauMode::Fixed(1.0)).is_err());
}

#[test]
fn indistinguishable_classes_give_chance_auroc() {
    let c = generate(&SynthConfig {
        seed: 7,
        n_docs_per_class: 500,
        doc_len: DocLen::Fixed(50),
        sep: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    for cfg in [DetectorConfig::default(), DetectorConfig::default().uniform()] {
        let r = evaluate(&c, &cfg, TauMode::InSample).unwrap();
        assert!((0.45..=0.55).contains(&r.auroc), "{}", r.auroc);
    }
}

#[test]
fn uniform_auroc_grows_with_separation() {
    let medians: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&sep| {
            let mut v: Vec<f64> = (0..5)
                .map(|s| {
                    evaluate(
                        &corpus(100 + s, sep),
                        &DetectorConfig::default().uniform(),
                        TauMode::InSample,
                    )
                    .unwrap()
                    .auroc
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v[2]
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}
