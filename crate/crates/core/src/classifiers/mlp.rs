use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, softmax, MlpConfig};
use crate::error::{Error, Result};
use crate::vectorizer::SparseVector;

/// One-hidden-layer ReLU network. `w1` is `features x hidden` and `w2` is
/// `hidden x classes`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub n_features: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub struct Forward {
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl MlpWeights {
    pub fn zeros(n_features: usize, hidden: usize, n_classes: usize) -> Self {
        MlpWeights {
            n_features,
            hidden,
            n_classes,
            w1: vec![0.0; n_features * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * n_classes],
            b2: vec![0.0; n_classes],
        }
    }

    /// Uniform in `+-sqrt(6 / fan_in)` for both layers, zero biases.
    pub fn init(n_features: usize, hidden: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut w = MlpWeights::zeros(n_features, hidden, n_classes);
        let a1 = (6.0 / n_features.max(1) as f64).sqrt();
        let a2 = (6.0 / hidden.max(1) as f64).sqrt();
        w.w1.iter_mut().for_each(|v| *v = rng.gen_range(-a1..a1));
        w.w2.iter_mut().for_each(|v| *v = rng.gen_range(-a2..a2));
        w
    }

    pub fn forward(&self, x: &SparseVector) -> Forward {
        let h = self.hidden;
        let mut pre = self.b1.clone();
        for (j, v) in x.iter() {
            for (p, w) in pre.iter_mut().zip(&self.w1[j * h..(j + 1) * h]) {
                *p += v * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
        let mut logits = self.b2.clone();
        for (k, hk) in hidden.iter().enumerate() {
            if *hk == 0.0 {
                continue;
            }
            let row = &self.w2[k * self.n_classes..(k + 1) * self.n_classes];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += hk * w;
            }
        }
        Forward { pre_activation: pre, hidden, logits }
    }

    pub(super) fn is_consistent(&self, v: usize, c: usize) -> bool {
        let h = self.hidden;
        self.n_features == v
            && self.n_classes == c
            && self.w1.len() == v * h
            && self.b1.len() == h
            && self.w2.len() == h * c
            && self.b2.len() == c
            && [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

pub(crate) struct BatchGradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub loss: f64,
}

pub(crate) fn batch_gradient<'a>(
    w: &MlpWeights,
    batch: impl ExactSizeIterator<Item = &'a (SparseVector, usize)>,
) -> BatchGradient {
    let (h, c) = (w.hidden, w.n_classes);
    let n = batch.len() as f64;
    let mut g = BatchGradient {
        rows: BTreeMap::new(),
        b1: vec![0.0; h],
        w2: vec![0.0; h * c],
        b2: vec![0.0; c],
        loss: 0.0,
    };
    let mut d_pre = vec![0.0; h];
    for (x, y) in batch {
        let f = w.forward(x);
        g.loss += log_sum_exp(&f.logits) - f.logits[*y];
        let mut d_out = softmax(&f.logits);
        d_out[*y] -= 1.0;
        d_out.iter_mut().for_each(|d| *d /= n);

        for (b, d) in g.b2.iter_mut().zip(&d_out) {
            *b += d;
        }
        for k in 0..h {
            let row = &w.w2[k * c..(k + 1) * c];
            let grad_row = &mut g.w2[k * c..(k + 1) * c];
            let mut back = 0.0;
            for ((gw, wv), d) in grad_row.iter_mut().zip(row).zip(&d_out) {
                *gw += f.hidden[k] * d;
                back += wv * d;
            }
            d_pre[k] = if f.pre_activation[k] > 0.0 { back } else { 0.0 };
        }
        for (b, d) in g.b1.iter_mut().zip(&d_pre) {
            *b += d;
        }
        for (j, v) in x.iter() {
            let row = g.rows.entry(j).or_insert_with(|| vec![0.0; h]);
            for (r, d) in row.iter_mut().zip(&d_pre) {
                *r += v * d;
            }
        }
    }
    g.loss /= n;
    g
}

/// Mean cross-entropy over `data`.
pub fn objective(w: &MlpWeights, data: &[(SparseVector, usize)]) -> f64 {
    data.iter()
        .map(|(x, y)| {
            let f = w.forward(x);
            log_sum_exp(&f.logits) - f.logits[*y]
        })
        .sum::<f64>()
        / data.len() as f64
}

/// Dense gradient of [`objective`].
pub fn gradient(w: &MlpWeights, data: &[(SparseVector, usize)]) -> MlpWeights {
    let g = batch_gradient(w, data.iter());
    let mut out = MlpWeights::zeros(w.n_features, w.hidden, w.n_classes);
    for (j, row) in g.rows {
        out.w1[j * w.hidden..(j + 1) * w.hidden].copy_from_slice(&row);
    }
    out.b1 = g.b1;
    out.w2 = g.w2;
    out.b2 = g.b2;
    out
}

fn momentum_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
}

/// Applies `missed` momentum-only updates (zero gradient) in closed form.
fn catch_up(params: &mut [f64], velocity: &mut [f64], missed: u64, lr: f64, mu: f64) {
    if missed == 0 {
        return;
    }
    let decay = mu.powi(missed as i32);
    let travel = if mu == 1.0 { missed as f64 } else { mu * (1.0 - decay) / (1.0 - mu) };
    for (p, v) in params.iter_mut().zip(velocity.iter_mut()) {
        *p -= lr * travel * *v;
        *v *= decay;
    }
}

pub(super) fn fit(
    data: &[(SparseVector, usize)],
    n_features: usize,
    n_classes: usize,
    cfg: &MlpConfig,
    seed: u64,
    trace: bool,
) -> Result<(MlpWeights, Vec<f64>)> {
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.momentum)
    {
        return Err(Error::InvalidConfig(format!("bad mlp settings: {cfg:?}")));
    }
    let (h, lr, mu) = (cfg.hidden, cfg.learning_rate, cfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = MlpWeights::init(n_features, h, n_classes, &mut rng);
    let mut v = MlpWeights::zeros(n_features, h, n_classes);
    // Input rows only see gradient when their feature occurs in a batch; the
    // momentum-only updates in between are applied lazily.
    let mut synced = vec![0u64; n_features];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    let mut losses = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut touched: Vec<usize> =
                chunk.iter().flat_map(|&i| data[i].0.indices().iter().copied()).collect();
            touched.sort_unstable();
            touched.dedup();
            for &j in &touched {
                let r = j * h..(j + 1) * h;
                catch_up(&mut w.w1[r.clone()], &mut v.w1[r], step - 1 - synced[j], lr, mu);
                synced[j] = step - 1;
            }

            let g = batch_gradient(&w, chunk.iter().map(|&i| &data[i]));
            running += g.loss * chunk.len() as f64;
            for (j, row) in g.rows {
                let r = j * h..(j + 1) * h;
                momentum_step(&mut w.w1[r.clone()], &mut v.w1[r], &row, lr, mu);
                synced[j] = step;
            }
            momentum_step(&mut w.b1, &mut v.b1, &g.b1, lr, mu);
            momentum_step(&mut w.w2, &mut v.w2, &g.w2, lr, mu);
            momentum_step(&mut w.b2, &mut v.b2, &g.b2, lr, mu);
        }
        for j in 0..n_features {
            let r = j * h..(j + 1) * h;
            catch_up(&mut w.w1[r.clone()], &mut v.w1[r], step - synced[j], lr, mu);
            synced[j] = step;
        }
        let epoch_loss = if trace { objective(&w, data) } else { running };
        if !epoch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { kind: "mlp".into(), epoch });
        }
        if trace {
            losses.push(epoch_loss);
        }
    }
    Ok((w, losses))
}
