//! Seeded synthetic corpora standing in for real clips, questions and word
//! vectors at desk scale.

use rand::seq::index;
use rand::Rng;

use crate::dataset::{DatasetRow, Provenance, QuestionType, Split, NUM_CANDIDATES};
use crate::error::Result;
use crate::features::{synth_features, ClipFeatures, FeatureStore};
use crate::rng;
use crate::tensor::Matrix;
use crate::text::{tokenize, EmbeddingTable};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub rows: usize,
    /// Total vocabulary size, split evenly between question and answer words.
    /// Must be at least 8.
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Word vectors are drawn uniformly from `[-embed_scale, embed_scale]`.
    pub embed_scale: f32,
    pub frames: usize,
    pub feature_dims: (usize, usize),
    /// Fraction of rows (rounded down) assigned to the test split.
    pub test_fraction: f64,
    /// Scale of the answer cue added to every frame: the embedding of the
    /// first token of the correct answer, written into the leading feature
    /// columns. 0 gives pure-noise clips.
    pub cue: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 20,
            vocab_size: 30,
            embed_dim: 8,
            embed_scale: 3.0,
            frames: 4,
            feature_dims: (4, 4),
            test_fraction: 0.0,
            cue: 1.0,
            seed: 0,
        }
    }
}

pub struct SyntheticCorpus {
    pub rows: Vec<DatasetRow>,
    pub table: EmbeddingTable,
    pub store: FeatureStore,
}

impl SyntheticCorpus {
    pub fn train_rows(&self) -> Vec<DatasetRow> {
        self.rows.iter().filter(|r| r.split == Split::Train).cloned().collect()
    }

    pub fn test_rows(&self) -> Vec<DatasetRow> {
        self.rows.iter().filter(|r| r.split == Split::Test).cloned().collect()
    }
}

/// Vocabulary `left`, `right`, then `q00..` question words and `a00..`
/// answer words.
pub fn vocabulary(size: usize) -> (Vec<String>, Vec<String>) {
    assert!(size >= 8, "synthetic vocabulary needs at least 8 tokens");
    let rest = size - 2;
    let n_q = rest / 2;
    let n_a = rest - n_q;
    let question = ["left".to_string(), "right".to_string()]
        .into_iter()
        .chain((0..n_q).map(|i| format!("q{i:02}")))
        .collect();
    let answer = (0..n_a).map(|i| format!("a{i:02}")).collect();
    (question, answer)
}

pub fn synthetic_rows(config: &SyntheticConfig) -> Vec<DatasetRow> {
    let (qwords, awords) = vocabulary(config.vocab_size);
    let plain_q = &qwords[2..];
    let n_test = (config.rows as f64 * config.test_fraction).floor() as usize;
    (0..config.rows)
        .map(|i| {
            let mut g = rng::stream_n(config.seed, "synthetic/row", i as u64);
            let mut question: Vec<&str> = (0..3).map(|_| plain_q[g.gen_range(0..plain_q.len())].as_str()).collect();
            if g.gen_bool(0.3) {
                question.push(if g.gen_bool(0.5) { "left" } else { "right" });
            }
            let mut candidates: Vec<String> = Vec::with_capacity(NUM_CANDIDATES);
            while candidates.len() < NUM_CANDIDATES {
                let n = if g.gen_bool(0.5) { 1 } else { 2 };
                let ans: Vec<&str> = index::sample(&mut g, awords.len(), n)
                    .into_iter()
                    .map(|k| awords[k].as_str())
                    .collect();
                let ans = ans.join(" ");
                if !candidates.contains(&ans) {
                    candidates.push(ans);
                }
            }
            if g.gen_bool(0.2) {
                let side = if g.gen_bool(0.5) { "left" } else { "right" };
                let k = g.gen_range(0..NUM_CANDIDATES);
                let with_side = format!("{} {side}", candidates[k]);
                if !candidates.contains(&with_side) {
                    candidates[k] = with_side;
                }
            }
            DatasetRow {
                row_id: format!("syn{i:05}"),
                clip_id: format!("clip{i:05}"),
                question: question.join(" "),
                candidates,
                label: g.gen_range(0..NUM_CANDIDATES),
                qtype: QuestionType::ALL[i % QuestionType::ALL.len()],
                split: if i >= config.rows - n_test { Split::Test } else { Split::Train },
                provenance: vec![Provenance::Original],
            }
        })
        .collect()
}

/// Uniform `[-scale, scale]` vectors for every vocabulary token.
pub fn synthetic_embeddings(vocab_size: usize, dim: usize, scale: f32, seed: u64) -> EmbeddingTable {
    let (q, a) = vocabulary(vocab_size);
    let tokens: Vec<String> = q.into_iter().chain(a).collect();
    let mut g = rng::stream(seed, "synthetic/embeddings");
    let data = (0..tokens.len() * dim).map(|_| g.gen_range(-scale..=scale)).collect();
    EmbeddingTable::new(tokens.clone(), Matrix::from_vec(tokens.len(), dim, data))
        .expect("generated vocabulary is unique")
}

pub fn synthetic_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let rows = synthetic_rows(config);
    let table = synthetic_embeddings(config.vocab_size, config.embed_dim, config.embed_scale, config.seed);
    let store = FeatureStore::in_memory(rows.iter().map(|r| {
        let mut cf = synth_features(&r.clip_id, config.frames, config.feature_dims, config.seed);
        if config.cue != 0.0 {
            let token = tokenize(r.correct_answer()).into_iter().next();
            if let Some(v) = token.as_deref().and_then(|t| table.lookup(t)) {
                add_cue(&mut cf, v, config.cue);
            }
        }
        cf
    }))?;
    Ok(SyntheticCorpus { rows, table, store })
}

fn add_cue(cf: &mut ClipFeatures, v: &[f32], scale: f32) {
    let d_a = cf.appearance.cols();
    for t in 0..cf.frames() {
        for (j, &x) in v.iter().enumerate() {
            let m = if j < d_a { &mut cf.appearance } else { &mut cf.motion };
            let c = if j < d_a { j } else { j - d_a };
            if c < m.cols() {
                m.set(t, c, m.get(t, c) + scale * x);
            }
        }
    }
}
