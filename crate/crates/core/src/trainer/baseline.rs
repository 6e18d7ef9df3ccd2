//! Bag-of-words tf-idf features with an L2-regularized logistic regression.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{accuracy, split, Metrics, TrainConfig};
use crate::corpus::TokenizedDocument;
use crate::error::{Error, Result};
use crate::nn::{bce_loss, sigmoid};

/// Vocabulary cap: the most frequent training tokens.
pub const TFIDF_MAX_FEATURES: usize = 50_000;

/// Inverse regularization strengths tried on the dev split.
pub const BASELINE_C_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Sparse row: sorted feature indices with their values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    fn dot(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| w[i as usize] * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
}

impl TfIdf {
    /// Vocabulary and document frequencies from training documents only.
    /// idf = ln((1 + N) / (1 + df)) + 1.
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a [String]>, max_features: usize) -> Result<Self> {
        let mut counts: HashMap<&str, (u64, u64)> = HashMap::new();
        let mut n_docs = 0u64;
        for doc in docs {
            n_docs += 1;
            let mut seen: Vec<&str> = Vec::with_capacity(doc.len());
            for tok in doc {
                counts.entry(tok.as_str()).or_default().0 += 1;
                seen.push(tok);
            }
            seen.sort_unstable();
            seen.dedup();
            for tok in seen {
                counts.get_mut(tok).expect("counted above").1 += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::NoData("no documents to fit tf-idf on".into()));
        }
        let mut terms: Vec<(&str, u64, u64)> = counts.into_iter().map(|(t, (c, df))| (t, c, df)).collect();
        terms.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        terms.truncate(max_features);
        terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let n = n_docs as f64;
        let idf = terms.iter().map(|t| ((1.0 + n) / (1.0 + t.2 as f64)).ln() + 1.0).collect();
        let vocab = terms.iter().enumerate().map(|(i, t)| (t.0.to_string(), i as u32)).collect();
        Ok(TfIdf { vocab, idf })
    }

    pub fn features(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.vocab.get(token).map(|&i| self.idf[i as usize])
    }

    /// Raw term counts times idf, L2-normalized. Unknown tokens are ignored.
    pub fn transform(&self, doc: &[String]) -> SparseVec {
        let mut idx: Vec<u32> = doc.iter().filter_map(|t| self.vocab.get(t.as_str()).copied()).collect();
        idx.sort_unstable();
        let mut out = SparseVec::default();
        for i in idx {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().expect("paired") += self.idf[i as usize];
            } else {
                out.indices.push(i);
                out.values.push(self.idf[i as usize]);
            }
        }
        let norm = out.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.values.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LogisticRegression {
    /// Minimizes `mean log-loss + ||w||^2 / (2 C N)` (the bias is not penalized)
    /// by accelerated gradient descent with adaptive restart, until the largest
    /// gradient entry falls below `tol` or `max_iter` is reached.
    pub fn fit(xs: &[SparseVec], ys: &[u8], features: usize, c: f64, tol: f64, max_iter: usize) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::NoData(format!("{} rows for {} labels", xs.len(), ys.len())));
        }
        if !(c > 0.0) {
            return Err(Error::Config(format!("inverse regularization {c} must be positive")));
        }
        let n = xs.len() as f64;
        let reg = 1.0 / (c * n);
        let max_sq = xs.iter().map(|x| x.values.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
        let step = 1.0 / (0.25 * (max_sq + 1.0) + reg);

        let dim = features + 1;
        let gradient = |theta: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (x, &y) in xs.iter().zip(ys) {
                let r = (sigmoid(x.dot(theta) + theta[features]) - y as f64) / n;
                for (&i, v) in x.indices.iter().zip(&x.values) {
                    g[i as usize] += r * v;
                }
                g[features] += r;
            }
            for j in 0..features {
                g[j] += reg * theta[j];
            }
        };
        let mut theta = vec![0.0; dim];
        let mut prev = theta.clone();
        let mut look = theta.clone();
        let mut g = vec![0.0; dim];
        let mut t = 1.0f64;
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            gradient(&look, &mut g);
            prev.copy_from_slice(&theta);
            for j in 0..dim {
                theta[j] = look[j] - step * g[j];
            }
            // restart momentum when it points uphill
            let uphill: f64 = g.iter().zip(theta.iter().zip(&prev)).map(|(g, (a, b))| g * (a - b)).sum();
            if uphill > 0.0 {
                t = 1.0;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            for j in 0..dim {
                look[j] = theta[j] + momentum * (theta[j] - prev[j]);
            }
            t = t_next;
            if iterations % 10 == 0 {
                gradient(&theta, &mut g);
                if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol {
                    break;
                }
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: 0,
                batch: iterations,
                loss: f64::NAN,
            });
        }
        let bias = theta.pop().expect("bias slot");
        Ok(LogisticRegression {
            weights: theta,
            bias,
            iterations,
        })
    }

    pub fn predict(&self, x: &SparseVec) -> f64 {
        sigmoid(x.dot(&self.weights) + self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub test: Metrics,
    pub chosen_c: f64,
    /// Dev accuracy for every value in the C grid.
    pub dev_accuracy: Vec<(f64, f64)>,
    pub features: usize,
}

fn metrics_of(model: &LogisticRegression, xs: &[SparseVec], ys: &[u8]) -> Result<Metrics> {
    let probs: Vec<f64> = xs.iter().map(|x| model.predict(x)).collect();
    let loss = probs.iter().zip(ys).map(|(&p, &y)| bce_loss(p, y as f64).0).sum::<f64>() / probs.len().max(1) as f64;
    Ok(Metrics {
        accuracy: accuracy(&probs, ys)?,
        loss,
        count: ys.len(),
        history: Vec::new(),
        best_epoch: None,
        seconds: 0.0,
    })
}

/// Splits like the neural models, fits tf-idf on train, picks C on dev and reports test metrics.
pub fn tfidf_logreg(corpus: &[TokenizedDocument], cfg: &TrainConfig) -> Result<BaselineReport> {
    let start = Instant::now();
    if corpus.is_empty() {
        return Err(Error::NoData("empty corpus".into()));
    }
    let parts = split(corpus, cfg)?;
    let tfidf = TfIdf::fit(parts.train.iter().map(|d| d.tokens.as_slice()), TFIDF_MAX_FEATURES)?;
    let encode = |docs: &[TokenizedDocument]| -> (Vec<SparseVec>, Vec<u8>) {
        (docs.iter().map(|d| tfidf.transform(&d.tokens)).collect(), docs.iter().map(|d| d.label).collect())
    };
    let (xtr, ytr) = encode(&parts.train);
    let (xdv, ydv) = encode(&parts.dev);
    let (xte, yte) = encode(&parts.test);

    let mut best: Option<(f64, f64, LogisticRegression)> = None;
    let mut dev_accuracy = Vec::new();
    for c in BASELINE_C_GRID {
        let model = LogisticRegression::fit(&xtr, &ytr, tfidf.features(), c, 1e-6, 20_000)?;
        let acc = if xdv.is_empty() { 0.0 } else { metrics_of(&model, &xdv, &ydv)?.accuracy };
        dev_accuracy.push((c, acc));
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, c, model));
        }
    }
    let (_, chosen_c, model) = best.expect("non-empty C grid");
    let mut test = metrics_of(&model, &xte, &yte)?;
    test.seconds = start.elapsed().as_secs_f64();
    Ok(BaselineReport {
        test,
        chosen_c,
        dev_accuracy,
        features: tfidf.features(),
    })
}
