use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn exon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exon"))
        .args(args)
        .env_remove("EXON_JOBS")
        .output()
        .expect("spawn exon")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const HEADER: &str = r#"{"format":"exon-trace","version":1,"layers":2}"#;

/// (lm, lx, lmax, [d0, d1]) per token.
type Tok = (f64, f64, f64, [f64; 2]);

const DOC_A: [Tok; 3] = [
    (-0.5, -1.0, -0.2, [0.05, 0.15]),
    (-2.0, -2.5, -0.1, [0.60, 0.40]),
    (-1.0, -0.7, -1.0, [0.30, 0.00]),
];
const DOC_B: [Tok; 2] = [(-3.0, -1.5, -0.3, [0.00, 0.10]), (-0.2, -0.4, -0.2, [0.90, 0.70])];

fn doc_line(id: &str, label: &str, toks: &[Tok]) -> String {
    let toks: Vec<String> = toks
        .iter()
        .map(|(lm, lx, lmax, d)| format!(r#"{{"lm":{lm},"lx":{lx},"lmax":{lmax},"d":[{},{}]}}"#, d[0], d[1]))
        .collect();
    format!(
        r#"{{"doc_id":"{id}","label":"{label}","meta":{{}},"tokens":[{}]}}"#,
        toks.join(",")
    )
}

fn fixture(dir: &TempDir) -> PathBuf {
    let text = format!(
        "{HEADER}\n{}\n{}\n",
        doc_line("a", "ai", &DOC_A),
        doc_line("b", "human", &DOC_B)
    );
    write(dir, "fixture.jsonl", &text)
}

/// Direct transcription of the score definition, written independently of the library.
fn expected(toks: &[Tok], theta: f64, alpha: f64, repair: bool) -> f64 {
    let extra: Vec<f64> = toks
        .iter()
        .map(|t| {
            let delta = (t.3[0] + t.3[1]) / 2.0;
            if delta > theta {
                1.0 - (-alpha * (delta - theta)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = extra.iter().map(|e| 1.0 + e).sum();
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, e) in toks.iter().zip(&extra) {
        let w = (1.0 + e) / total;
        num -= w * t.0;
        if repair {
            num -= w * t.2;
        }
        den -= w * t.0.exp() * t.1;
    }
    num / den
}

fn parse_rows(tsv: &str) -> Vec<Vec<String>> {
    tsv.lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn empty_corpus_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "empty.jsonl", "");
    let o = exon(&["score", s(&p)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "doc_id\tlabel\tscore\tdecision\n");
}

#[test]
fn fixture_scores_match_hand_computation() {
    let dir = TempDir::new().unwrap();
    let p = fixture(&dir);
    let o = exon(&["score", s(&p)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    for (row, (id, toks)) in rows.iter().zip([("a", &DOC_A[..]), ("b", &DOC_B[..])]) {
        assert_eq!(row[0], id);
        let got: f64 = row[2].parse().unwrap();
        let want = expected(toks, 0.15, 10.0, true);
        assert!((got - want).abs() < 1e-12, "{id}: {got} vs {want}");
        assert_eq!(row[3], if got > 1.0 { "human" } else { "ai" });
    }
}

#[test]
fn no_exons_without_repair_reports_uniform_ratio() {
    let dir = TempDir::new().unwrap();
    let p = fixture(&dir);
    let o = exon(&["score", s(&p), "--theta", "3.0", "--no-repair", "--breakdown"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_rows(&stdout(&o));
    for (row, toks) in rows.iter().zip([&DOC_A[..], &DOC_B[..]]) {
        let score: f64 = row[2].parse().unwrap();
        let r0: f64 = row[9].parse().unwrap();
        assert_eq!(row[5], "0");
        assert_eq!(row[7], "NA");
        let a0: f64 = toks.iter().map(|t| -t.0).sum();
        let b0: f64 = toks.iter().map(|t| -t.0.exp() * t.1).sum();
        assert!((score - a0 / b0).abs() < 1e-12);
        assert!((score - r0).abs() < 1e-12);
    }
}

#[test]
fn zero_cross_perplexity_is_undetermined() {
    let dir = TempDir::new().unwrap();
    let zero: [Tok; 1] = [(-1.0, 0.0, -0.5, [0.1, 0.1])];
    let text = format!("{HEADER}\n{}\n", doc_line("z", "ai", &zero));
    let p = write(&dir, "zero.jsonl", &text);
    let o = exon(&["score", s(&p)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(parse_rows(&stdout(&o))[0][2..], ["NA", "undetermined"]);
}

#[test]
fn synth_is_deterministic_and_validates() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = exon(&[
            "synth",
            "--seed",
            "9",
            "--docs-per-class",
            "20",
            "--len",
            "10:30",
            "--out",
            s(p),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = exon(&["validate", s(&a), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["n_docs"], 40);
    assert_eq!(stats["n_ai"], 20);
    assert_eq!(stats["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn corrupted_line_is_reported_with_its_number() {
    let dir = TempDir::new().unwrap();
    let text = format!("{HEADER}\n{}\n{{\"doc_id\": oops\n", doc_line("a", "ai", &DOC_A));
    let p = write(&dir, "bad.jsonl", &text);
    let o = exon(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = exon(&["score", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"));
    assert_eq!(parse_rows(&stdout(&o)).len(), 1);
}

#[test]
fn mixed_layer_counts_are_flagged() {
    let dir = TempDir::new().unwrap();
    let three = r#"{"doc_id":"m","label":"ai","meta":{},"tokens":[{"lm":-1,"lx":-1,"lmax":-1,"d":[0.1,0.2,0.3]}]}"#;
    let text = format!("{HEADER}\n{}\n{three}\n", doc_line("a", "ai", &DOC_A));
    let p = write(&dir, "mixed.jsonl", &text);
    let o = exon(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("layer count"), "{err}");
}

#[test]
fn eval_refuses_unlabeled_corpus() {
    let dir = TempDir::new().unwrap();
    let text = format!("{HEADER}\n{}\n", doc_line("u", "unknown", &DOC_A));
    let p = write(&dir, "u.jsonl", &text);
    let o = exon(&["eval", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("score"), "{}", stderr(&o));
}

#[test]
fn eval_matches_between_formats() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.jsonl");
    assert!(
        exon(&["synth", "--docs-per-class", "30", "--len", "40", "--out", s(&p)])
            .status
            .success()
    );
    let table = stdout(&exon(&["eval", s(&p), "--tau", "10"]));
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&exon(&["eval", s(&p), "--tau", "10", "--format", "json"]))).unwrap();
    let auroc_line = table.lines().find(|l| l.starts_with("auroc\t")).unwrap();
    assert_eq!(
        auroc_line.split('\t').nth(1).unwrap().parse::<f64>().unwrap(),
        json["auroc"].as_f64().unwrap()
    );
    assert_eq!(json["tau"], 10.0);
}

#[test]
fn sweep_survives_a_bad_cell() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.jsonl");
    assert!(
        exon(&["synth", "--docs-per-class", "20", "--len", "30", "--out", s(&p)])
            .status
            .success()
    );
    let o = exon(&[
        "sweep",
        s(&p),
        "--theta",
        "0.1",
        "--alpha",
        "2,10",
        "--layers",
        "all,forward:7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_rows(&stdout(&o));
    assert_eq!(rows.len(), 4);
    let bad: Vec<_> = rows.iter().filter(|r| r[3] == "forward:7").collect();
    assert!(bad.iter().all(|r| r[5] == "NA" && r[8].contains("forward:7")));
    assert!(rows.iter().filter(|r| r[3] == "all").all(|r| r[5] != "NA"));
}

#[test]
fn default_sweep_grid_has_twelve_cells() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.jsonl");
    assert!(
        exon(&["synth", "--docs-per-class", "10", "--len", "20", "--out", s(&p)])
            .status
            .success()
    );
    let o = exon(&["sweep", s(&p)]);
    assert!(o.status.success());
    assert_eq!(parse_rows(&stdout(&o)).len(), 12);
}

#[test]
fn manifest_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let p = fixture(&dir);
    let out = dir.path().join("scores.tsv");
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let o = exon(&["score", s(&p), "--out", s(&out)]);
        assert!(o.status.success());
        let text = std::fs::read_to_string(dir.path().join("scores.tsv.manifest.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["timing"]["elapsed_seconds"].as_f64().unwrap() >= 0.0);
        v.as_object_mut().unwrap().remove("timing");
        manifests.push(v);
    }
    assert_eq!(manifests[0], manifests[1]);
    let m = &manifests[0];
    assert_eq!(m["command"], "score");
    assert_eq!(m["config"]["detector"]["theta"], 0.15);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let explicit = dir.path().join("m.json");
    let o = exon(&["score", s(&p), "--manifest", s(&explicit)]);
    assert!(o.status.success());
    assert!(explicit.exists());
}

#[test]
fn jobs_do_not_change_output() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.jsonl");
    assert!(
        exon(&["synth", "--docs-per-class", "300", "--len", "20", "--out", s(&p)])
            .status
            .success()
    );
    let one = stdout(&exon(&["score", s(&p), "--jobs", "1"]));
    let four = stdout(&exon(&["score", s(&p), "--jobs", "4"]));
    assert_eq!(one, four);
    assert_eq!(parse_rows(&one).len(), 600);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(exon(&["score"]).status.code(), Some(1));
    assert_eq!(exon(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exon(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let p = fixture(&dir);
    assert_eq!(exon(&["score", s(&p), "--alpha", "0"]).status.code(), Some(1));
    assert_eq!(exon(&["score", s(&p), "--layers", "reverse:3"]).status.code(), Some(1));
    assert_eq!(exon(&["synth", "--len", "x", "--out", "-"]).status.code(), Some(1));
}

fn synth_to(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let p = dir.path().join(name);
    let mut args = vec!["synth", "--out", s(&p)];
    args.extend_from_slice(extra);
    let o = exon(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

fn eval_json(args: &[&str]) -> serde_json::Value {
    let mut full = vec!["eval", "--format", "json"];
    full.extend_from_slice(args);
    let o = exon(&full);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn widely_separated_corpus_is_perfectly_ranked() {
    let dir = TempDir::new().unwrap();
    let p = synth_to(
        &dir,
        "p.jsonl",
        &["--sep", "20", "--docs-per-class", "100", "--len", "100"],
    );
    assert_eq!(eval_json(&[s(&p)])["auroc"], 1.0);
}

#[test]
fn exon_weighting_beats_uniform_on_enriched_corpus() {
    let dir = TempDir::new().unwrap();
    let p = synth_to(
        &dir,
        "e.jsonl",
        &[
            "--seed",
            "1",
            "--enrich",
            "10",
            "--exon-rate",
            "0.3",
            "--docs-per-class",
            "200",
            "--len",
            "100",
        ],
    );
    let weighted = eval_json(&[s(&p)])["auroc"].as_f64().unwrap();
    let uniform = eval_json(&[s(&p), "--uniform"])["auroc"].as_f64().unwrap();
    assert!(weighted > uniform, "{weighted} vs {uniform}");
}

#[test]
fn single_cell_sweep_equals_eval() {
    let dir = TempDir::new().unwrap();
    let p = synth_to(&dir, "c.jsonl", &["--docs-per-class", "40", "--len", "50"]);
    let single = eval_json(&[s(&p), "--theta", "0.1", "--alpha", "6"]);
    let o = exon(&["sweep", s(&p), "--theta", "0.1", "--alpha", "6", "--format", "json"]);
    assert!(o.status.success());
    let swept: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let cell = &swept["per_config"][0];
    assert_eq!(cell["auroc"], single["auroc"]);
    assert_eq!(cell["f1"], single["f1"]);
    assert_eq!(cell["tau"], single["tau"]);
}

#[test]
fn split_calibration_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let p = synth_to(&dir, "c.jsonl", &["--docs-per-class", "50", "--len", "40"]);
    let run = |seed: &str| stdout(&exon(&["eval", s(&p), "--calibrate-split", "0.3", "--seed", seed]));
    assert_eq!(run("4"), run("4"));
    assert_eq!(
        exon(&["eval", s(&p), "--calibrate-split", "1.5"]).status.code(),
        Some(1)
    );
}
