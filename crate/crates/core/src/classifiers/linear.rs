use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, softmax, LinearConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::vectorizer::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Softmax cross-entropy (multinomial logistic regression).
    CrossEntropy,
    /// Sum of one-vs-rest hinge losses.
    Hinge,
}

impl Loss {
    fn name(self) -> &'static str {
        match self {
            Loss::CrossEntropy => "lr",
            Loss::Hinge => "svm",
        }
    }
}

/// `features x classes` weight matrix (feature-major) plus per-class bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub n_features: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearWeights {
    pub fn zeros(n_features: usize, n_classes: usize) -> Self {
        LinearWeights {
            n_features,
            n_classes,
            weights: vec![0.0; n_features * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        &self.weights[feature * self.n_classes..(feature + 1) * self.n_classes]
    }

    /// Decision value per class.
    pub fn scores(&self, x: &SparseVector) -> Vec<f64> {
        let mut s = self.bias.clone();
        for (j, v) in x.iter() {
            for (sc, w) in s.iter_mut().zip(self.row(j)) {
                *sc += v * w;
            }
        }
        s
    }

    pub(super) fn is_consistent(&self, v: usize, c: usize) -> bool {
        self.n_features == v
            && self.n_classes == c
            && self.weights.len() == v * c
            && self.bias.len() == c
            && self.weights.iter().chain(&self.bias).all(|p| p.is_finite())
    }

    fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Loss of one example and its derivative with respect to the class scores.
pub fn example_loss(loss: Loss, scores: &[f64], y: usize) -> (f64, Vec<f64>) {
    match loss {
        Loss::CrossEntropy => {
            let mut d = softmax(scores);
            d[y] -= 1.0;
            (log_sum_exp(scores) - scores[y], d)
        }
        Loss::Hinge => {
            let mut total = 0.0;
            let d = scores
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let sign = if c == y { 1.0 } else { -1.0 };
                    let margin = sign * s;
                    if margin < 1.0 {
                        total += 1.0 - margin;
                        -sign
                    } else {
                        0.0
                    }
                })
                .collect();
            (total, d)
        }
    }
}

/// Mean data-term gradient over a batch, touching only rows of features that
/// occur in it.
pub(crate) struct BatchGradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub bias: Vec<f64>,
    pub loss: f64,
}

pub(crate) fn batch_gradient<'a>(
    loss: Loss,
    w: &LinearWeights,
    batch: impl ExactSizeIterator<Item = &'a (SparseVector, usize)>,
) -> BatchGradient {
    let n = batch.len() as f64;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut bias = vec![0.0; w.n_classes];
    let mut total = 0.0;
    for (x, y) in batch {
        let (l, d) = example_loss(loss, &w.scores(x), *y);
        total += l;
        for (b, dc) in bias.iter_mut().zip(&d) {
            *b += dc / n;
        }
        for (j, v) in x.iter() {
            let row = rows.entry(j).or_insert_with(|| vec![0.0; w.n_classes]);
            for (r, dc) in row.iter_mut().zip(&d) {
                *r += v * dc / n;
            }
        }
    }
    BatchGradient { rows, bias, loss: total / n }
}

/// Mean loss plus `lambda / 2 * |W|^2` (bias unregularized).
pub fn objective(loss: Loss, w: &LinearWeights, data: &[(SparseVector, usize)], lambda: f64) -> f64 {
    let data_term: f64 =
        data.iter().map(|(x, y)| example_loss(loss, &w.scores(x), *y).0).sum::<f64>() / data.len() as f64;
    data_term + 0.5 * lambda * w.squared_norm()
}

/// Gradient of [`objective`] with respect to every weight and bias.
pub fn gradient(loss: Loss, w: &LinearWeights, data: &[(SparseVector, usize)], lambda: f64) -> LinearWeights {
    let g = batch_gradient(loss, w, data.iter());
    let mut out = LinearWeights::zeros(w.n_features, w.n_classes);
    for (o, wv) in out.weights.iter_mut().zip(&w.weights) {
        *o = lambda * wv;
    }
    for (j, row) in g.rows {
        for (c, v) in row.into_iter().enumerate() {
            out.weights[j * w.n_classes + c] += v;
        }
    }
    out.bias = g.bias;
    out
}

pub(super) fn fit(
    loss: Loss,
    data: &[(SparseVector, usize)],
    n_features: usize,
    n_classes: usize,
    cfg: &LinearConfig,
    seed: u64,
    trace: bool,
) -> Result<(LinearWeights, Vec<f64>)> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || cfg.lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("bad {} settings: {cfg:?}", loss.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = LinearWeights::zeros(n_features, n_classes);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let eta = match cfg.schedule {
                LrSchedule::InvSqrt => cfg.learning_rate / (step as f64).sqrt(),
                LrSchedule::Constant => cfg.learning_rate,
            };
            let g = batch_gradient(loss, &w, chunk.iter().map(|&i| &data[i]));
            running += g.loss * chunk.len() as f64;
            if cfg.lambda > 0.0 {
                let shrink = 1.0 - eta * cfg.lambda;
                w.weights.iter_mut().for_each(|v| *v *= shrink);
            }
            for (j, row) in g.rows {
                let dst = &mut w.weights[j * n_classes..(j + 1) * n_classes];
                for (d, gv) in dst.iter_mut().zip(row) {
                    *d -= eta * gv;
                }
            }
            for (b, gv) in w.bias.iter_mut().zip(g.bias) {
                *b -= eta * gv;
            }
        }
        let epoch_loss = if trace { objective(loss, &w, data, cfg.lambda) } else { running };
        if !epoch_loss.is_finite() || w.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteLoss { kind: loss.name().into(), epoch });
        }
        if trace {
            losses.push(epoch_loss);
        }
    }
    Ok((w, losses))
}
