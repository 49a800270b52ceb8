//! Fixtures, independent oracles and criterion runners shared by the
//! integration test targets.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vqa_augment::augment::{
    augment_manifest, augment_split, hflip_row, hflip_text, mirror_row, resample_row, default_lexicon,
    AugmentationPlan, ResampleSkip,
};
use vqa_augment::dataset::{
    build_pools, count_by_type, load_manifest, AnswerPool, DatasetRow, Provenance, QuestionType, Split,
    SplitSpec,
};
use vqa_augment::features::{synth_features, FeatureStore};
use vqa_augment::harness::{bias_report, plain_mean, truncated_percent, AccuracyTable, MatrixResult};
use vqa_augment::model::{attend, example_scores, Example, ModelConfig, ModelParams};
use vqa_augment::rng;
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::tensor::Matrix;
use vqa_augment::training::{count_correct, hinge_loss, loss_and_grads, prepare_examples, train, TrainConfig};

// ---------------------------------------------------------------------------
// Outcomes

pub enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

impl Outcome {
    pub fn from_result(r: Result<String, String>) -> Self {
        match r {
            Ok(s) => Outcome::Pass(s),
            Err(s) => Outcome::Fail(s),
        }
    }

    pub fn failed(&self) -> bool {
        matches!(self, Outcome::Fail(_))
    }

    pub fn line(&self, name: &str) -> String {
        match self {
            Outcome::Pass(d) => format!("PASS  {name}: {d}"),
            Outcome::Fail(d) => format!("FAIL  {name}: {d}"),
            Outcome::Skip(d) => format!("SKIP  {name}: {d}"),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// CLI

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vqa-augment")
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("VQA_SEED")
        .env_remove("VQA_CONFIG")
        .output()
        .expect("binary runs")
}

pub fn cli_ok(args: &[&str]) -> Result<Output, String> {
    let out = cli(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`vqa-augment {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------------------
// Strategies

pub const CASES: u32 = 256;

const WORDS: [&str; 18] = [
    "left", "right", "Left", "Right", "LEFT", "RIGHT", "leftover", "Bright", "lefty", "man", "on",
    "the", "cup", "I", "x2", "über", "3rd", "Cup",
];
const SEPS: [&str; 7] = [" ", ", ", "-", "'", "?", "", "\t"];

const ANSWERS: [&str; 16] = [
    "red cup",
    "blue cup",
    "the man on the left",
    "the man on the right",
    "a phone",
    "Left hand",
    "right hand",
    "LEFT side",
    "a bag",
    "green",
    "a book",
    "the door",
    "keys",
    "a laptop",
    "the woman",
    "yellow",
];

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run_prop<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

pub fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec((prop::sample::select(WORDS.to_vec()), prop::sample::select(SEPS.to_vec())), 0..10)
        .prop_map(|parts| parts.into_iter().map(|(w, s)| format!("{w}{s}")).collect())
}

pub fn row_strategy() -> impl Strategy<Value = DatasetRow> {
    (
        text_strategy(),
        prop::sample::subsequence(ANSWERS.to_vec(), 5).prop_shuffle(),
        0..5usize,
        prop::sample::select(QuestionType::ALL.to_vec()),
    )
        .prop_map(|(q, cands, label, qtype)| DatasetRow {
            row_id: "r0".into(),
            clip_id: "c0".into(),
            question: format!("what is {q}"),
            candidates: cands.into_iter().map(String::from).collect(),
            label,
            qtype,
            split: Split::Train,
            provenance: vec![Provenance::Original],
        })
}

/// Train rows over a vocabulary of `ans0..ansK` with three question types,
/// plus a copy count and seed.
pub fn resample_case() -> impl Strategy<Value = (Vec<DatasetRow>, usize, u64)> {
    (5usize..16)
        .prop_flat_map(|vocab| {
            let answers: Vec<String> = (0..vocab).map(|i| format!("ans{i}")).collect();
            let row = (
                prop::sample::subsequence(answers, 5).prop_shuffle(),
                0..5usize,
                prop::sample::select(vec![QuestionType::Cnt, QuestionType::Col, QuestionType::Act1st]),
            );
            (prop::collection::vec(row, 1..12), 0usize..5, any::<u64>())
        })
        .prop_map(|(rows, copies, seed)| {
            let rows = rows
                .into_iter()
                .enumerate()
                .map(|(i, (cands, label, qtype))| DatasetRow {
                    row_id: format!("r{i}"),
                    clip_id: format!("c{i}"),
                    question: "what is it".into(),
                    candidates: cands,
                    label,
                    qtype,
                    split: Split::Train,
                    provenance: vec![Provenance::Original],
                })
                .collect();
            (rows, copies, seed)
        })
}

pub fn store_for(rows: &[DatasetRow]) -> FeatureStore {
    let ids: BTreeSet<&str> = rows.iter().map(|r| r.clip_id.as_str()).collect();
    FeatureStore::in_memory(ids.into_iter().map(|id| synth_features(id, 2, (3, 2), 0))).unwrap()
}

// ---------------------------------------------------------------------------
// Augmentation properties

fn wrong_set(row: &DatasetRow) -> BTreeSet<String> {
    row.candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != row.label)
        .map(|(_, c)| c.clone())
        .collect()
}

/// Number of 4-subsets of `eligible` other than `original`, by explicit
/// enumeration.
fn novel_tuple_count(eligible: &[String], original: &BTreeSet<String>) -> usize {
    let n = eligible.len();
    let mut count = 0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let set: BTreeSet<String> =
                        [a, b, c, d].iter().map(|&i| eligible[i].clone()).collect();
                    if &set != original {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

pub fn prop_mirror_involution() -> Result<(), String> {
    run_prop("mirror involution", row_strategy(), |row| {
        let m = mirror_row(&row);
        for i in 0..5 {
            prop_assert_eq!(&m.candidates[i], &row.candidates[4 - i]);
        }
        prop_assert_eq!(m.label, 4 - row.label);
        prop_assert_eq!(m.correct_answer(), row.correct_answer());
        prop_assert_eq!(&m.question, &row.question);
        prop_assert_eq!(&m.clip_id, &row.clip_id);
        prop_assert_eq!(m.qtype, row.qtype);
        let mm = mirror_row(&m);
        prop_assert_eq!(&mm.candidates, &row.candidates);
        prop_assert_eq!(mm.label, row.label);
        prop_assert_eq!(
            &mm.provenance,
            &vec![Provenance::Original, Provenance::Mirrored, Provenance::Mirrored]
        );
        Ok(())
    })
}

/// Split text into (is_word, segment) runs, words being maximal
/// alphanumeric runs.
fn segments(text: &str) -> Vec<(bool, String)> {
    let mut out: Vec<(bool, String)> = Vec::new();
    for c in text.chars() {
        let w = c.is_alphanumeric();
        match out.last_mut() {
            Some((kind, s)) if *kind == w => s.push(c),
            _ => out.push((w, c.to_string())),
        }
    }
    out
}

pub fn prop_hflip_text() -> Result<(), String> {
    let lex = default_lexicon();
    run_prop("hflip text", text_strategy(), |text| {
        let once = hflip_text(&text, &lex);
        prop_assert_eq!(hflip_text(&once, &lex), text.clone());
        let (a, b) = (segments(&text), segments(&once));
        prop_assert_eq!(a.len(), b.len());
        for ((wa, sa), (_, sb)) in a.iter().zip(&b) {
            let expected = match (wa, sa.as_str()) {
                (true, "left") => "right",
                (true, "right") => "left",
                (true, "Left") => "Right",
                (true, "Right") => "Left",
                (true, "LEFT") => "RIGHT",
                (true, "RIGHT") => "LEFT",
                _ => sa.as_str(),
            };
            prop_assert_eq!(sb.as_str(), expected);
        }
        Ok(())
    })
}

pub fn prop_hflip_row() -> Result<(), String> {
    let lex = default_lexicon();
    run_prop("hflip row", row_strategy(), |row| {
        let store = store_for(std::slice::from_ref(&row));
        let (f, cf) = hflip_row(&row, &store, &lex).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&cf.clip_id, "c0__hflip");
        prop_assert_eq!(&f.clip_id, "c0__hflip");
        prop_assert_eq!(f.label, row.label);
        prop_assert_eq!(f.correct_answer(), hflip_text(row.correct_answer(), &lex));
        let flipped_store = store.with_overlay([cf]).unwrap();
        let (back, back_cf) =
            hflip_row(&f, &flipped_store, &lex).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back.question, &row.question);
        prop_assert_eq!(&back.candidates, &row.candidates);
        prop_assert_eq!(&back.clip_id, &row.clip_id);
        prop_assert_eq!(&back_cf, &store.load_clip("c0").unwrap());
        Ok(())
    })
}

pub fn prop_resample() -> Result<(), String> {
    run_prop("resample constraints", resample_case(), |(rows, copies, seed)| {
        let pools = build_pools(&rows);
        for row in &rows {
            let pool = &pools[&row.qtype];
            let mut g = rng::stream(seed, &row.row_id);
            let (out, skip) = resample_row(row, pool, copies, &mut g);
            let correct = row.correct_answer().to_string();
            let eligible: Vec<String> = pool.answers.iter().filter(|a| **a != correct).cloned().collect();
            let original = wrong_set(row);
            let expected = copies.min(novel_tuple_count(&eligible, &original));
            prop_assert_eq!(out.len(), expected);
            prop_assert_eq!(skip.is_some(), expected < copies);
            let mut tuples = BTreeSet::new();
            for r in &out {
                prop_assert_eq!(&r.question, &row.question);
                prop_assert_eq!(&r.clip_id, &row.clip_id);
                prop_assert_eq!(r.label, row.label);
                prop_assert_eq!(r.correct_answer(), correct.as_str());
                prop_assert!(r.validate().is_ok());
                let wrong = wrong_set(r);
                prop_assert_eq!(wrong.len(), 4);
                prop_assert!(!wrong.contains(&correct));
                prop_assert!(wrong.iter().all(|w| pool.answers.contains(w)));
                prop_assert!(wrong != original);
                prop_assert!(tuples.insert(wrong));
                prop_assert_eq!(r.provenance.last(), Some(&Provenance::Resampled));
            }
        }
        Ok(())
    })
}

const COUNTS: [&str; 5] = ["one", "two", "three", "four", "five"];

pub fn prop_count_exclusion() -> Result<(), String> {
    let case = (
        prop::collection::vec((Just(COUNTS.to_vec()).prop_shuffle(), 0..5usize), 5..12),
        1usize..4,
        any::<u64>(),
    );
    run_prop("Cnt exclusion", case, |(specs, copies, seed)| {
        let mut rows: Vec<DatasetRow> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (cands, label))| DatasetRow {
                row_id: format!("cnt{i}"),
                clip_id: format!("c{i}"),
                question: "how many people are there".into(),
                candidates: cands.into_iter().map(String::from).collect(),
                label,
                qtype: QuestionType::Cnt,
                split: Split::Train,
                provenance: vec![Provenance::Original],
            })
            .collect();
        rows.push(DatasetRow {
            row_id: "col".into(),
            clip_id: "ccol".into(),
            question: "what color is it".into(),
            candidates: ["red", "blue", "green", "black", "white"].map(String::from).to_vec(),
            label: 0,
            qtype: QuestionType::Col,
            split: Split::Train,
            provenance: vec![Provenance::Original],
        });
        let pool = AnswerPool {
            qtype: Some(QuestionType::Cnt),
            answers: COUNTS.iter().map(|s| s.to_string()).collect(),
        };
        for row in rows.iter().filter(|r| r.qtype == QuestionType::Cnt) {
            let (out, skip) = resample_row(row, &pool, copies, &mut rng::stream(seed, &row.row_id));
            prop_assert!(out.is_empty());
            prop_assert_eq!(skip, Some(ResampleSkip::NoNovelTuple));
        }
        let plan = AugmentationPlan::none().with_seed(seed).with_resample(copies).with_mirror();
        let pools = build_pools(&rows);
        let aug = augment_split(&rows, &pools, &store_for(&rows), &plan)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(aug
            .rows
            .iter()
            .filter(|r| r.provenance.contains(&Provenance::Resampled))
            .all(|r| r.qtype != QuestionType::Cnt));
        Ok(())
    })
}

pub fn prop_test_split_protection() -> Result<(), String> {
    let case = (
        prop::collection::vec((row_strategy(), any::<bool>()), 1..8),
        any::<bool>(),
        any::<bool>(),
        0usize..3,
        any::<u64>(),
    );
    run_prop("test-split protection", case, |(specs, hflip, mirror, copies, seed)| {
        let rows: Vec<DatasetRow> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (mut r, test))| {
                r.row_id = format!("r{i}");
                r.clip_id = format!("c{i}");
                r.split = if test { Split::Test } else { Split::Train };
                r
            })
            .collect();
        let mut plan = AugmentationPlan::none().with_seed(seed);
        if hflip {
            plan = plan.with_hflip();
        }
        if mirror {
            plan = plan.with_mirror();
        }
        if copies > 0 {
            plan = plan.with_resample(copies);
        }
        let store = store_for(&rows);
        let test: Vec<DatasetRow> = rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
        if !test.is_empty() {
            let err = augment_split(&rows, &build_pools(&rows), &store, &plan);
            prop_assert!(matches!(err, Err(ref e) if e.is_validation()));
        }
        let out = augment_manifest(&rows, &store, &plan).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let out_test: Vec<DatasetRow> = out.rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
        prop_assert_eq!(out_test, test);
        Ok(())
    })
}

/// Every augmentation property; returns the case count and elapsed time.
pub fn augmentation_suite() -> Result<(usize, Duration), String> {
    let start = Instant::now();
    let props: [(&str, fn() -> Result<(), String>); 7] = [
        ("mirror", prop_mirror_involution),
        ("hflip_text", prop_hflip_text),
        ("hflip_row", prop_hflip_row),
        ("resample", prop_resample),
        ("cnt", prop_count_exclusion),
        ("test_split", prop_test_split_protection),
        ("pipeline_counts", prop_pipeline_counts),
    ];
    for (_, f) in props {
        f()?;
    }
    Ok((props.len() * CASES as usize, start.elapsed()))
}

/// Stage row counts follow the flip ×2, resample +produced, mirror ×2 rule.
pub fn prop_pipeline_counts() -> Result<(), String> {
    run_prop("pipeline counts", (resample_case(), any::<bool>(), any::<bool>()), |((rows, copies, seed), hflip, mirror)| {
        let mut plan = AugmentationPlan::none().with_seed(seed);
        if hflip {
            plan = plan.with_hflip();
        }
        if mirror {
            plan = plan.with_mirror();
        }
        if copies > 0 {
            plan = plan.with_resample(copies);
        }
        let out = augment_split(&rows, &build_pools(&rows), &store_for(&rows), &plan)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let resampled = out.rows.iter().filter(|r| r.provenance.contains(&Provenance::Resampled)).count();
        let mut n = rows.len();
        if hflip {
            n *= 2;
        }
        let m = if mirror { 2 } else { 1 };
        prop_assert_eq!(resampled, m * out.report.stages.iter().find(|s| s.stage == "resample").map_or(0, |s| s.added_rows));
        n += resampled / m;
        prop_assert_eq!(out.rows.len(), n * m);
        prop_assert_eq!(&out.rows[..rows.len()], &rows[..]);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Model fixtures and oracles

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        video_dim: 5,
        hidden: 4,
        attn_hidden: 3,
        max_frames: 0,
    }
}

pub fn uniform(rows: usize, cols: usize, scale: f64, g: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| g.gen_range(-scale..=scale)).collect())
}

/// Random example with `n` frames and 5 texts of `l` tokens.
pub fn random_example(cfg: &ModelConfig, n: usize, l: usize, label: usize, seed: u64) -> Example<f64> {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    Example {
        video: uniform(n, cfg.video_dim, 1.0, &mut g),
        texts: (0..5).map(|_| uniform(l, cfg.embed_dim, 1.0, &mut g)).collect(),
        label,
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM: rows of `x` in, hidden state per step out.
pub fn oracle_lstm(x: &Matrix<f64>, w_x: &Matrix<f64>, w_h: &Matrix<f64>, b: &Matrix<f64>) -> Vec<Vec<f64>> {
    let k = w_h.rows();
    let mut h = vec![0.0; k];
    let mut c = vec![0.0; k];
    let mut out = Vec::new();
    for t in 0..x.rows() {
        let mut z = vec![0.0; 4 * k];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut s = b.get(0, j);
            for e in 0..x.cols() {
                s += x.get(t, e) * w_x.get(e, j);
            }
            for (m, hm) in h.iter().enumerate() {
                s += hm * w_h.get(m, j);
            }
            *zj = s;
        }
        for u in 0..k {
            let i = sig(z[u]);
            let f = sig(z[k + u]);
            let g = z[2 * k + u].tanh();
            let o = sig(z[3 * k + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn to_matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows)
}

fn stacked_oracle(x: &Matrix<f64>, layers: &[vqa_augment::model::LstmLayer<Matrix<f64>>; 2]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h1 = oracle_lstm(x, &layers[0].w_x, &layers[0].w_h, &layers[0].b);
    let h2 = oracle_lstm(&to_matrix(&h1), &layers[1].w_x, &layers[1].w_h, &layers[1].b);
    (h1, h2)
}

pub fn oracle_text_encode(phi: &Matrix<f64>, p: &ModelParams<f64>) -> Vec<f64> {
    let (h1, h2) = stacked_oracle(phi, &p.text);
    let mut v = h1.last().unwrap().clone();
    v.extend(h2.last().unwrap());
    v
}

pub fn oracle_video_encode(phi: &Matrix<f64>, p: &ModelParams<f64>) -> Vec<Vec<f64>> {
    let (h1, h2) = stacked_oracle(phi, &p.video);
    h1.into_iter()
        .zip(h2)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect()
}

/// Brute-force attention: per-frame logits, max-shifted softmax, weighted
/// row sum.
pub fn oracle_attend(eps_v: &Matrix<f64>, eps_w: &[f64], p: &ModelParams<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, hh) = (eps_v.rows(), eps_v.cols());
    let a = p.w_s.rows();
    let logits: Vec<f64> = (0..n)
        .map(|t| {
            (0..a)
                .map(|j| {
                    let mut s = p.b_s.get(0, j);
                    for k in 0..hh {
                        s += eps_v.get(t, k) * p.w_v.get(k, j) + eps_w[k] * p.w_w.get(k, j);
                    }
                    s.tanh() * p.w_s.get(j, 0)
                })
                .sum()
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let alpha: Vec<f64> = e.iter().map(|x| x / z).collect();
    let omega = (0..hh).map(|k| (0..n).map(|t| alpha[t] * eps_v.get(t, k)).sum()).collect();
    (alpha, omega)
}

pub fn oracle_decode(omega: &[f64], eps_w: &[f64], p: &ModelParams<f64>) -> f64 {
    let hh = omega.len();
    let mut s = p.b_d.get(0, 0);
    for j in 0..hh {
        let mut d = p.b_a.get(0, j);
        for k in 0..hh {
            d += omega[k] * p.w_a.get(k, j);
        }
        s += d.tanh() * eps_w[j] * p.w_d.get(j, 0);
    }
    s
}

pub fn oracle_scores(ex: &Example<f64>, p: &ModelParams<f64>) -> Vec<f64> {
    let eps_v = to_matrix(&oracle_video_encode(&ex.video, p));
    ex.texts
        .iter()
        .map(|t| {
            let eps_w = oracle_text_encode(t, p);
            let (_, omega) = oracle_attend(&eps_v, &eps_w, p);
            oracle_decode(&omega, &eps_w, p)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random params with entries scaled up from the default init so that
/// nonlinearities are exercised away from their linear region.
pub fn random_params(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(cfg, seed).unwrap();
    for m in p.refs_mut() {
        for v in m.as_mut_slice() {
            *v *= scale;
        }
    }
    p
}

// ---------------------------------------------------------------------------
// Criterion runners

pub fn criterion_matrix_protocol(dir: &Path) -> Result<String, String> {
    let avg = plain_mean(&[31.82, 37.57, 27.27]).unwrap();
    ensure((avg - 32.22).abs() < 0.005, || format!("mean(31.82, 37.57, 27.27) = {avg}"))?;

    let data = dir.join("data");
    cli_ok(&["synth-data", "--out", p(&data), "--rows", "48", "--seed", "1"])?;
    let out = dir.join("matrix");
    cli_ok(&[
        "matrix",
        "--manifest",
        p(&data.join("manifest.jsonl")),
        "--features",
        p(&data.join("features")),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--hidden",
        "4",
        "--attn-hidden",
        "2",
        "--epochs",
        "1",
        "--out",
        p(&out),
    ])?;
    let csv = std::fs::read_to_string(out.join("table2.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines[0] == "augmentation,plan,split0,split1,split2,avg", || format!("header `{}`", lines[0]))?;
    let plans = [
        "none",
        "mirror",
        "resample",
        "resample+mirror",
        "hflip",
        "hflip+resample",
        "hflip+resample+mirror",
    ];
    ensure(lines.len() == 8, || format!("{} data rows, expected 7", lines.len() - 1))?;
    for (line, plan) in lines[1..].iter().zip(plans) {
        let f: Vec<&str> = line.rsplitn(5, ',').collect();
        ensure(line.split(',').nth(1) == Some(plan), || format!("row `{line}` is not plan {plan}"))?;
        let v: Vec<f64> = f[..4].iter().map(|x| x.parse().unwrap()).collect();
        let (avg, splits) = (v[0], [v[3], v[2], v[1]]);
        let mean = splits.iter().sum::<f64>() / 3.0;
        // Every CSV value is rounded to hundredths.
        ensure((avg - mean).abs() <= 0.0101, || format!("row `{line}`: Avg {avg} vs mean {mean}"))?;
    }
    let json = std::fs::read_to_string(out.join("matrix.json")).map_err(|e| e.to_string())?;
    let result: MatrixResult = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    for row in AccuracyTable::from_matrix(&result).rows {
        let raw: Vec<f64> = row.splits.iter().map(|v| v.ok_or("missing cell")).collect::<Result<_, _>>()?;
        let mean = raw.iter().sum::<f64>() / 3.0;
        ensure(row.avg == Some(mean), || format!("{}: Avg {:?} vs mean {mean}", row.plan, row.avg))?;
    }
    let text = std::fs::read_to_string(out.join("table2.txt")).map_err(|e| e.to_string())?;
    ensure(text.contains("Avg") && text.lines().count() == 10, || format!("table2.txt:\n{text}"))?;
    Ok(format!("7 rows x (3 splits + Avg); mean(31.82, 37.57, 27.27) = {avg:.4}"))
}

pub fn criterion_augmentation() -> Result<String, String> {
    let (cases, elapsed) = augmentation_suite()?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("7 properties x {CASES} cases ({cases}) in {:.2}s", elapsed.as_secs_f64()))
}

/// Per-tensor relative error `|g - g_fd| / max(|g|, |g_fd|)` (Euclidean
/// norms) of the summed hinge loss over `examples`. Tensors whose gradient
/// is identically zero are reported with their absolute finite-difference
/// norm instead.
pub fn gradient_errors(params: &ModelParams<f64>, examples: &[Example<f64>], h: f64) -> Vec<(&'static str, f64, f64)> {
    let mut analytic = params.map(|m| Matrix::zeros(m.rows(), m.cols()));
    for ex in examples {
        let (_, g, _) = loss_and_grads(params, ex);
        analytic.add_assign(&g);
    }
    let total = |p: &ModelParams<f64>| -> f64 {
        examples.iter().map(|ex| hinge_loss(&example_scores(p, ex), ex.label)).sum()
    };
    let mut out = Vec::new();
    for (t, (name, g)) in analytic.named().enumerate() {
        let mut fd = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            let mut plus = params.clone();
            plus.refs_mut()[t].as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.refs_mut()[t].as_mut_slice()[i] -= h;
            fd.push((total(&plus) - total(&minus)) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = g.as_slice().iter().zip(&fd).map(|(a, b)| a - b).collect();
        let scale = norm(g.as_slice()).max(norm(&fd));
        out.push((name, if scale > 0.0 { norm(&diff) / scale } else { 0.0 }, scale));
    }
    out
}

/// Smallest distance of any hinge argument `1 + s_c - s_r` from the kink.
pub fn kink_distance(params: &ModelParams<f64>, examples: &[Example<f64>]) -> f64 {
    examples
        .iter()
        .flat_map(|ex| {
            let s = example_scores(params, ex);
            let r = ex.label;
            (0..5).filter(move |&c| c != r).map(move |c| (1.0 + s[c] - s[r]).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn gradient_fixture() -> (ModelParams<f64>, Vec<Example<f64>>) {
    let cfg = tiny_config();
    let params = random_params(&cfg, 11, 3.0);
    let examples = (0..3).map(|i| random_example(&cfg, 3, 4, i, 100 + i as u64)).collect();
    (params, examples)
}

pub fn criterion_gradient() -> Result<String, String> {
    let start = Instant::now();
    let (params, examples) = gradient_fixture();
    let kink = kink_distance(&params, &examples);
    ensure(kink > 1e-3, || format!("fixture sits {kink:e} from a hinge kink"))?;
    let errs = gradient_errors(&params, &examples, 1e-6);
    let mut worst = ("", 0.0);
    for &(name, rel, scale) in &errs {
        if scale < 1e-9 {
            // Shift-invariant tensors (b_d) have an exactly zero gradient.
            ensure(scale < 1e-9, || format!("{name}: zero-gradient tensor has |fd| = {scale:e}"))?;
            continue;
        }
        ensure(rel < 1e-4, || format!("{name}: relative error {rel:e}"))?;
        if rel > worst.1 {
            worst = (name, rel);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} tensors, worst {} at {:.2e}, {:.2}s",
        errs.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    ))
}

pub fn criterion_attention() -> Result<String, String> {
    let mut g = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = g.gen_range(1..=8);
        let hh = 2 * g.gen_range(1..=4);
        let a = g.gen_range(1..=6);
        let cfg = ModelConfig {
            embed_dim: 2,
            video_dim: 2,
            hidden: hh,
            attn_hidden: a,
            max_frames: 0,
        };
        let p = random_params(&cfg, i, g.gen_range(0.5..4.0));
        let eps_v = uniform(n, hh, 2.0, &mut g);
        let eps_w = uniform(1, hh, 2.0, &mut g);
        let got = attend(&eps_v, &eps_w, &p).map_err(|e| e.to_string())?;
        let (alpha, omega) = oracle_attend(&eps_v, eps_w.as_slice(), &p);
        let d = max_abs_diff(got.alpha.as_slice(), &alpha).max(max_abs_diff(got.omega_a.as_slice(), &omega));
        ensure(d < 1e-6, || format!("instance {i} (N={n}, H={hh}, h={a}): diff {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("100 instances, max |diff| {worst:.2e}"))
}

pub fn overfit_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        video_dim: 8,
        hidden: 16,
        attn_hidden: 8,
        max_frames: 0,
    }
}

pub fn overfit_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 200,
        seed: 0,
        ..TrainConfig::default()
    }
}

pub fn criterion_overfit() -> Result<String, String> {
    let start = Instant::now();
    let corpus = synthetic_corpus(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    ensure(corpus.rows.len() == 20 && corpus.table.len() == 30, || "fixture shape".into())?;
    let model = overfit_model();
    let cfg = overfit_train_config();
    let run = || train(&corpus.rows, &[], &corpus.store, &corpus.table, &model, &cfg).map_err(|e| e.to_string());
    let a = run()?;
    let b = run()?;
    let first = a.log.iter().find(|m| m.train_acc == 1.0).map(|m| m.epoch);
    let first = first.ok_or_else(|| {
        let best = a.log.iter().map(|m| m.train_acc).fold(0.0, f64::max);
        format!("best train accuracy {:.1}% in 200 epochs", 100.0 * best)
    })?;
    let examples = prepare_examples(&corpus.rows, &corpus.store, &corpus.table, &model).map_err(|e| e.to_string())?;
    ensure(count_correct(&a.params, &examples) == 20, || "returned params are not the 100% epoch".into())?;
    ensure(
        a.log.len() == b.log.len() && a.log.iter().zip(&b.log).all(|(x, y)| x.same_values(y)),
        || "metric logs differ between runs".into(),
    )?;
    ensure(a.params == b.params && a.final_params == b.final_params, || "parameters differ between runs".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "100% train accuracy first at epoch {first}; two runs identical; {:.1}s",
        elapsed.as_secs_f64()
    ))
}

/// `P(lo <= X <= hi)` for `X ~ Binomial(n, p)`.
pub fn binomial_coverage(n: u64, p: f64, lo: u64, hi: u64) -> f64 {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut total = 0.0;
    for k in 0..=n {
        if (lo..=hi).contains(&k) {
            total += pmf;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    total
}

pub fn criterion_random_baseline() -> Result<String, String> {
    let n = 500;
    let coverage = binomial_coverage(n, 0.2, 60, 140);
    ensure(coverage > 0.99, || format!("[12%, 28%] covers only {coverage}"))?;
    let corpus = synthetic_corpus(&SyntheticConfig {
        rows: n as usize,
        seed: 9,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let model = overfit_model();
    let params = ModelParams::<f32>::init(&model, 9).map_err(|e| e.to_string())?;
    let examples = prepare_examples(&corpus.rows, &corpus.store, &corpus.table, &model).map_err(|e| e.to_string())?;
    let acc = 100.0 * count_correct(&params, &examples) as f64 / n as f64;
    ensure((12.0..=28.0).contains(&acc), || format!("untrained accuracy {acc:.2}%"))?;
    Ok(format!("untrained accuracy {acc:.2}% on {n} rows (band coverage {coverage:.5})"))
}

pub fn criterion_determinism(dir: &Path) -> Result<String, String> {
    let data = dir.join("data");
    cli_ok(&["synth-data", "--out", p(&data), "--rows", "40", "--seed", "4"])?;
    let plan = dir.join("plan.toml");
    std::fs::write(
        &plan,
        "enable_hflip = true\nenable_resample = true\nresample_copies = 2\nenable_mirror = true\nseed = 17\n",
    )
    .map_err(|e| e.to_string())?;
    let read = |path: &Path| std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()));
    let mut manifests = Vec::new();
    let mut flipped = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("aug{run}.jsonl"));
        let feats = dir.join(format!("flipped{run}"));
        cli_ok(&[
            "augment",
            "--manifest",
            p(&data.join("manifest.jsonl")),
            "--features",
            p(&data.join("features")),
            "--plan",
            p(&plan),
            "--out",
            p(&out),
            "--features-out",
            p(&feats),
        ])?;
        manifests.push(read(&out)?);
        let mut files: Vec<_> = std::fs::read_dir(&feats).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        files.sort();
        flipped.push(files.iter().map(|f| read(f)).collect::<Result<Vec<_>, _>>()?);
    }
    ensure(manifests[0] == manifests[1], || "augmented manifests differ".into())?;
    ensure(flipped[0] == flipped[1], || "flipped feature files differ".into())?;
    let mut checkpoints = Vec::new();
    for run in 0..2 {
        let ck = dir.join(format!("ck{run}.bin"));
        cli_ok(&[
            "train",
            "--manifest",
            p(&data.join("manifest.jsonl")),
            "--features",
            p(&data.join("features")),
            "--embeddings",
            p(&data.join("embeddings.txt")),
            "--plan",
            p(&plan),
            "--hidden",
            "6",
            "--attn-hidden",
            "4",
            "--epochs",
            "3",
            "--seed",
            "8",
            "--checkpoint",
            p(&ck),
        ])?;
        checkpoints.push(read(&ck)?);
    }
    ensure(checkpoints[0] == checkpoints[1], || "checkpoints differ".into())?;
    Ok(format!(
        "manifest {} bytes, {} flipped clips, checkpoint {} bytes identical across reruns",
        manifests[0].len(),
        flipped[0].len(),
        checkpoints[0].len()
    ))
}

pub const TEST_TYPE_COUNTS: [(QuestionType, usize); 8] = [
    (QuestionType::Act1st, 67),
    (QuestionType::Act3rd, 108),
    (QuestionType::Obj1st, 54),
    (QuestionType::Obj3rd, 86),
    (QuestionType::Who1st, 13),
    (QuestionType::Who3rd, 63),
    (QuestionType::Cnt, 64),
    (QuestionType::Col, 31),
];

/// Needs `EGOVQA_MANIFEST`; `EGOVQA_SPLITS` (comma-separated split files)
/// pools train rows for the bias figures.
pub fn criterion_egovqa() -> Outcome {
    let Ok(manifest) = std::env::var("EGOVQA_MANIFEST") else {
        return Outcome::Skip("EGOVQA_MANIFEST not set".into());
    };
    let splits: Vec<String> = std::env::var("EGOVQA_SPLITS")
        .map(|s| s.split(',').filter(|x| !x.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    Outcome::from_result(egovqa_check(&manifest, &splits))
}

fn egovqa_check(manifest: &str, splits: &[String]) -> Result<String, String> {
    let rows = load_manifest(manifest).map_err(|e| e.to_string())?;
    let test: Vec<DatasetRow> = rows.iter().filter(|r| r.split == Split::Test).cloned().collect();
    let counted = if test.is_empty() { &rows } else { &test };
    let counts = count_by_type(counted);
    for (q, n) in TEST_TYPE_COUNTS {
        let got = counts.get(&q).copied().unwrap_or(0);
        ensure(got == n, || format!("{q}: {got} questions, expected {n}"))?;
    }
    let train: Vec<DatasetRow> = if splits.is_empty() {
        rows.iter().filter(|r| r.split == Split::Train).cloned().collect()
    } else {
        let mut pooled = Vec::new();
        for s in splits {
            let spec = SplitSpec::load(s).map_err(|e| e.to_string())?;
            pooled.extend(spec.apply(&rows).map_err(|e| e.to_string())?.0);
        }
        pooled
    };
    let report = bias_report(&train);
    let hist = |q: QuestionType| report.histograms.iter().find(|h| h.qtype == q).unwrap();
    let act = hist(QuestionType::Act3rd);
    let who = hist(QuestionType::Who3rd);
    ensure((act.counts[4], act.total) == (60, 203), || format!("Act3rd pos 4: {}/{}", act.counts[4], act.total))?;
    ensure((who.counts[3], who.total) == (27, 77), || format!("Who3rd pos 3: {}/{}", who.counts[3], who.total))?;
    ensure(truncated_percent(60, 203) == "29.55" && truncated_percent(27, 77) == "35.06", || "percent".into())?;

    let mut args = vec!["stats", manifest];
    for s in splits {
        args.push("--split");
        args.push(s);
    }
    let out = cli_ok(&args)?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    for needle in ["Act3rd position 4 holds 60/203 (29.55%)", "Who3rd position 3 holds 27/77 (35.06%)"] {
        ensure(stdout.contains(needle), || format!("stats output lacks `{needle}`"))?;
    }
    Ok("test-split type counts and 60/203 (29.55%), 27/77 (35.06%) reproduced".into())
}
