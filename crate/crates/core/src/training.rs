//! Pairwise hinge loss, Adam and the training loop.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::DatasetRow;
use crate::error::{Error, Result};
use crate::features::{ClipFeatures, FeatureStore};
use crate::model::{example_scores, forward_scores, predict, prepare_example, Example, ModelConfig, ModelParams, PARAM_NAMES};
use crate::rng;
use crate::tensor::{Matrix, Scalar};
use crate::text::EmbeddingTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0 (found {})",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// `sum_{c != r} max(0, 1 + s_c - s_r)`.
pub fn hinge_loss<T: Scalar>(scores: &[T], right: usize) -> T {
    let sr = scores[right];
    scores
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != right)
        .map(|(_, &sc)| (T::one() + sc - sr).max(T::zero()))
        .sum()
}

/// Gradient of [`hinge_loss`] with respect to the scores. Terms exactly at
/// the hinge (`1 + s_c - s_r = 0`) contribute zero.
pub fn hinge_grad<T: Scalar>(scores: &[T], right: usize) -> Vec<T> {
    let sr = scores[right];
    let mut g = vec![T::zero(); scores.len()];
    for (c, &sc) in scores.iter().enumerate() {
        if c != right && T::one() + sc - sr > T::zero() {
            g[c] = g[c] + T::one();
            g[right] = g[right] - T::one();
        }
    }
    g
}

/// Loss, parameter gradients and candidate scores for one example.
pub fn loss_and_grads<T: Scalar>(params: &ModelParams<T>, ex: &Example<T>) -> (T, ModelParams<T>, Vec<T>) {
    let width = params.text[0].w_h.rows();
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let score_vars = forward_scores(&mut tape, &vars, ex, width);
    let scores: Vec<T> = score_vars.iter().map(|&v| tape.value(v).get(0, 0)).collect();
    let loss = hinge_loss(&scores, ex.label);
    let dscores = hinge_grad(&scores, ex.label);
    let seeds: Vec<(_, Matrix<T>)> = score_vars
        .iter()
        .zip(&dscores)
        .map(|(&v, &g)| (v, Matrix::filled(1, 1, g)))
        .collect();
    let mut grads = tape.backward(&seeds);
    let (var_refs, param_refs) = (vars.refs(), params.refs());
    let grad_params = ModelParams::from_array(std::array::from_fn(|i| {
        grads
            .take(*var_refs[i])
            .unwrap_or_else(|| Matrix::zeros(param_refs[i].rows(), param_refs[i].cols()))
    }));
    (loss, grad_params, scores)
}

/// Summed loss and gradients averaged over the batch. Per-example work runs
/// in parallel; the reduction is sequential in batch order.
pub fn batch_loss_and_grads<T: Scalar>(params: &ModelParams<T>, batch: &[&Example<T>]) -> (T, ModelParams<T>) {
    let parts: Vec<(T, ModelParams<T>, Vec<T>)> =
        batch.par_iter().map(|ex| loss_and_grads(params, ex)).collect();
    let mut total = T::zero();
    let mut sum: Option<ModelParams<T>> = None;
    for (loss, g, _) in parts {
        total = total + loss;
        match &mut sum {
            Some(s) => s.add_assign(&g),
            None => sum = Some(g),
        }
    }
    let n = T::lit(batch.len().max(1) as f64);
    let grads = sum.map_or_else(|| params.map(|m| Matrix::zeros(m.rows(), m.cols())), |s| s.scale(T::one() / n));
    (total, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = params.map(|m| Matrix::zeros(m.rows(), m.cols()));
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update:
///
/// ```text
/// m = β1 m + (1 - β1) g
/// v = β2 v + (1 - β2) g²
/// θ -= lr · (m / (1 - β1^t)) / (sqrt(v / (1 - β2^t)) + ε)
/// ```
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    for ((name, g), p) in grads.named().zip(params.refs()) {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at flat index {i} (value {:?})",
                g.as_slice()[i]
            )));
        }
    }
    state.step += 1;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    let bc1 = T::one() - b1.powi(state.step as i32);
    let bc2 = T::one() - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .refs_mut()
        .into_iter()
        .zip(grads.refs())
        .zip(state.m.refs_mut())
        .zip(state.v.refs_mut())
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Build model inputs for every row, loading each clip once.
pub fn prepare_examples(rows: &[DatasetRow], store: &FeatureStore, table: &EmbeddingTable, config: &ModelConfig) -> Result<Vec<Example<f32>>> {
    let mut cache: HashMap<&str, ClipFeatures> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if !cache.contains_key(row.clip_id.as_str()) {
            cache.insert(row.clip_id.as_str(), store.load_clip(&row.clip_id)?);
        }
        out.push(prepare_example(row, &cache[row.clip_id.as_str()], table, config)?);
    }
    Ok(out)
}

/// Number of examples whose highest-scoring candidate is the label.
pub fn count_correct<T: Scalar>(params: &ModelParams<T>, examples: &[Example<T>]) -> usize {
    examples
        .par_iter()
        .map(|ex| usize::from(predict(&example_scores(params, ex)) == ex.label))
        .sum()
}

fn fraction(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-question loss over the epoch's updates.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Seconds since training started.
    pub wallclock: f64,
}

impl EpochMetrics {
    /// Same values ignoring wallclock.
    pub fn same_values(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.test_acc.map(f64::to_bits) == other.test_acc.map(f64::to_bits)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best test accuracy (train accuracy
    /// when there is no test set); the initial parameters when no epoch ran.
    pub params: ModelParams<f32>,
    pub final_params: ModelParams<f32>,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochMetrics>,
}

/// Train on prepared examples, calling `on_epoch` after each epoch.
pub fn train_examples(
    train: &[Example<f32>],
    test: &[Example<f32>],
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training rows".into()));
    }
    let mut params = ModelParams::<f32>::init(model, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_key: Option<(f64, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream_n(config.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0f64;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example<f32>> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_loss_and_grads(&params, &batch);
            let diverged = |what, last_good: &ModelParams<f32>| Error::Diverged {
                epoch,
                step,
                what,
                last_good: Box::new(last_good.clone()),
            };
            if !loss.is_finite() {
                return Err(diverged("loss", &params));
            }
            if !grads.is_finite() {
                return Err(diverged("gradient", &params));
            }
            loss_sum += f64::from(loss);
            let mut next = params.clone();
            adam_step(&mut next, &grads, &mut state, config)?;
            if !next.is_finite() {
                return Err(diverged("parameters", &params));
            }
            params = next;
        }
        let train_acc = fraction(count_correct(&params, train), train.len());
        let test_acc = (!test.is_empty()).then(|| fraction(count_correct(&params, test), test.len()));
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc,
            test_acc,
            wallclock: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics)?;
        let score = test_acc.unwrap_or(train_acc);
        if best_key.is_none_or(|(s, _)| score > s) {
            best_key = Some((score, epoch));
            best = params.clone();
        }
        log.push(metrics);
    }

    Ok(TrainOutcome {
        params: best,
        final_params: params,
        best_epoch: best_key.map(|(_, e)| e),
        log,
    })
}

/// Train from rows. Augmentation, if any, must already have been applied to
/// `train_rows`.
pub fn train(
    train_rows: &[DatasetRow],
    test_rows: &[DatasetRow],
    store: &FeatureStore,
    table: &EmbeddingTable,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_rows, test_rows, store, table, model, config, |_| Ok(()))
}

pub fn train_with(
    train_rows: &[DatasetRow],
    test_rows: &[DatasetRow],
    store: &FeatureStore,
    table: &EmbeddingTable,
    model: &ModelConfig,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let train = prepare_examples(train_rows, store, table, model)?;
    let test = prepare_examples(test_rows, store, table, model)?;
    train_examples(&train, &test, model, config, on_epoch)
}

/// Parameter names paired with per-tensor values, for diagnostics.
pub fn named_norms<T: Scalar>(p: &ModelParams<T>) -> Vec<(&'static str, T)> {
    PARAM_NAMES
        .into_iter()
        .zip(p.refs())
        .map(|(n, m)| (n, m.frobenius_norm()))
        .collect()
}
