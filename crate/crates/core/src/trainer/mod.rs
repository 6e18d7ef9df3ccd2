//! Splitting, mini-batch training, evaluation and grid search.

mod baseline;
mod grid;

pub use baseline::{tfidf_logreg, BaselineReport, LogisticRegression, SparseVec, TfIdf, BASELINE_C_GRID, TFIDF_MAX_FEATURES};
pub use grid::{band_bucket, grid_search, rank, read_grid_csv, render_report, write_grid_csv, GridPoint, GridSpec};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::LayerGraph;
use crate::checkpoint::ModelState;
use crate::corpus::{IndexedDocument, RawDocument, TokenizedDocument};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{bce_loss, AdamConfig, Tensor2};

pub trait Labeled {
    fn label(&self) -> u8;
}

impl Labeled for RawDocument {
    fn label(&self) -> u8 {
        self.label
    }
}

impl Labeled for TokenizedDocument {
    fn label(&self) -> u8 {
        self.label
    }
}

impl Labeled for IndexedDocument {
    fn label(&self) -> u8 {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// RNG stream for init, shuffling and dropout; grid points use their index.
    pub stream: u64,
    pub adam: AdamConfig,
    pub fractions: SplitFractions,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 60,
            epochs: 3,
            seed: 1337,
            stream: 0,
            adam: AdamConfig::default(),
            fractions: SplitFractions::default(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.fractions;
        if [f.train, f.dev, f.test].iter().any(|v| !(0.0..=1.0).contains(v)) || (f.train + f.dev + f.test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {}/{}/{} must be in [0, 1] and sum to 1",
                f.train, f.dev, f.test
            )));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Stratified split into train/dev/test index lists, each sorted ascending.
///
/// Each class is shuffled on its own; the classes are then interleaved so that
/// the item at rank `i` of a class of size `c` sits at position `(i + 1/2) / c`.
/// Dev takes the first `floor(dev * N)` interleaved items, test the next
/// `floor(test * N)`, train the remainder.
pub fn split_indices(labels: &[u8], fractions: SplitFractions, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    if n < 10 {
        return Err(Error::NoData(format!("corpus of {n} documents is too small to split (need >= 10)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &l) in labels.iter().enumerate() {
        classes[l as usize].push(i);
    }
    let mut keyed = Vec::with_capacity(n);
    for (class, members) in classes.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let size = members.len() as u128;
        for (rank, &doc) in members.iter().enumerate() {
            keyed.push(((2 * rank as u128 + 1), size, class, doc));
        }
    }
    // exact comparison of (2i+1)/(2c) across classes
    keyed.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)).then(a.2.cmp(&b.2)));
    let dev_n = (fractions.dev * n as f64 + 1e-9).floor() as usize;
    let test_n = (fractions.test * n as f64 + 1e-9).floor() as usize;
    let order: Vec<usize> = keyed.into_iter().map(|k| k.3).collect();
    let mut dev = order[..dev_n].to_vec();
    let mut test = order[dev_n..dev_n + test_n].to_vec();
    let mut train = order[dev_n + test_n..].to_vec();
    if train.is_empty() {
        return Err(Error::NoData("training split is empty".into()));
    }
    dev.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, dev, test))
}

pub fn split<T: Labeled + Clone>(corpus: &[T], cfg: &TrainConfig) -> Result<Splits<T>> {
    cfg.validate()?;
    let labels: Vec<u8> = corpus.iter().map(Labeled::label).collect();
    let (train, dev, test) = split_indices(&labels, cfg.fractions, cfg.seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| corpus[i].clone()).collect();
    Ok(Splits {
        train: pick(train),
        dev: pick(dev),
        test: pick(test),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    /// Wall-clock seconds; left out of serialized output so reports stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

/// Fraction of documents whose thresholded probability matches the label; p = 0.5 counts as positive.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::NoData(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let hits = probs.iter().zip(labels).filter(|&(&p, &y)| (p >= 0.5) == (y == 1)).count();
    Ok(hits as f64 / probs.len() as f64)
}

pub fn evaluate(graph: &LayerGraph, state: &ModelState, table: &EmbeddingTable, docs: &[IndexedDocument]) -> Result<Metrics> {
    evaluate_params(graph, &state.params, table, docs)
}

fn evaluate_params(graph: &LayerGraph, params: &[Tensor2], table: &EmbeddingTable, docs: &[IndexedDocument]) -> Result<Metrics> {
    let start = Instant::now();
    if docs.is_empty() {
        return Err(Error::NoData("evaluation set is empty".into()));
    }
    let refs: Vec<&[usize]> = docs.iter().map(|d| d.indices.as_slice()).collect();
    let labels: Vec<u8> = docs.iter().map(|d| d.label).collect();
    let probs = graph.predict(params, table, &refs)?;
    let loss = probs.iter().zip(&labels).map(|(&p, &y)| bce_loss(p, y as f64).0).sum::<f64>() / probs.len() as f64;
    Ok(Metrics {
        accuracy: accuracy(&probs, &labels)?,
        loss,
        count: docs.len(),
        history: Vec::new(),
        best_epoch: None,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn train(
    graph: &LayerGraph,
    table: &EmbeddingTable,
    train_docs: &[IndexedDocument],
    dev_docs: &[IndexedDocument],
    cfg: &TrainConfig,
) -> Result<(ModelState, Metrics)> {
    train_with_progress(graph, table, train_docs, dev_docs, cfg, |_| {})
}

/// Trains and returns the state from the epoch with the best dev accuracy
/// (earliest on ties; the last epoch when `dev_docs` is empty). The returned
/// state is rounded to f32, which is what a checkpoint stores.
pub fn train_with_progress(
    graph: &LayerGraph,
    table: &EmbeddingTable,
    train_docs: &[IndexedDocument],
    dev_docs: &[IndexedDocument],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(ModelState, Metrics)> {
    let start = Instant::now();
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(Error::NoData("no training documents".into()));
    }
    let spec = graph.spec.clone();
    let mut rng = cfg.rng();
    let params = graph.init_params(&mut rng);
    let mut state = ModelState::new(spec, params, cfg.adam);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let docs: Vec<&[usize]> = chunk.iter().map(|&i| train_docs[i].indices.as_slice()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_docs[i].label).collect();
            let (loss, grads) =
                graph.batch_loss_and_grad(&state.params, table, &docs, &labels, Some(&mut rng as &mut dyn RngCore))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            state.adam.step(&mut state.params, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let dev = if dev_docs.is_empty() {
            None
        } else {
            Some(evaluate_params(graph, &state.params, table, dev_docs)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_accuracy: dev.as_ref().map_or(f64::NAN, |m| m.accuracy),
            dev_loss: dev.as_ref().map_or(f64::NAN, |m| m.loss),
        };
        progress(&record);
        let score = dev.map_or(epoch as f64, |m| m.accuracy);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, state.clone()));
        }
        history.push(record);
    }

    let (_, best_epoch, mut state) = best.expect("at least one epoch");
    state.round_to_f32();
    let mut metrics = if dev_docs.is_empty() {
        Metrics {
            accuracy: f64::NAN,
            loss: history[best_epoch - 1].train_loss,
            count: 0,
            history: Vec::new(),
            best_epoch: None,
            seconds: 0.0,
        }
    } else {
        evaluate_params(graph, &state.params, table, dev_docs)?
    };
    metrics.history = history;
    metrics.best_epoch = Some(best_epoch);
    metrics.seconds = start.elapsed().as_secs_f64();
    Ok((state, metrics))
}
