//! Trainable multiclass classifiers over sparse feature vectors.
//!
//! Every model maps a [`SparseVector`] to a confidence distribution over the
//! head resolver groups:
//!
//! * `nb`: multinomial naive Bayes with additive smoothing, consuming feature
//!   values as fractional counts;
//! * `lr`: softmax regression, cross-entropy plus L2, mini-batch SGD;
//! * `svm`: one-vs-rest linear SVMs, L2-regularized hinge loss, stochastic
//!   subgradient descent, confidences from a softmax over the margins;
//! * `mlp`: one ReLU hidden layer, softmax output, SGD with momentum.
//!
//! Training is single-threaded and fully determined by the seed.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorizer::SparseVector;

pub mod gradcheck;
pub mod linear;
pub mod mlp;
pub mod nb;

pub use gradcheck::{gradient_check, GradCheckInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb,
    Lr,
    Svm,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Nb, ModelKind::Lr, ModelKind::Svm, ModelKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nb => "nb",
            ModelKind::Lr => "lr",
            ModelKind::Svm => "svm",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

/// Bijection between head resolver-group labels and class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelCodec {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelCodec {
    fn from(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelCodec { labels, index }
    }
}

impl From<LabelCodec> for Vec<String> {
    fn from(c: LabelCodec) -> Self {
        c.labels
    }
}

impl LabelCodec {
    /// Sorted, de-duplicated codec over `labels`.
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = labels.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        v.into()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn encode(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn decode(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbConfig {
    pub alpha: f64,
}

impl Default for NbConfig {
    fn default() -> Self {
        NbConfig { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr / sqrt(t)` at the t-th update.
    #[default]
    InvSqrt,
    Constant,
}

/// Settings for the softmax-regression and linear-SVM trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            lambda: 1e-4,
            learning_rate: 0.1,
            schedule: LrSchedule::InvSqrt,
            epochs: 20,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 256, learning_rate: 0.01, momentum: 0.9, epochs: 30, batch_size: 64 }
    }
}

/// Training settings for every model kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub nb: NbConfig,
    pub lr: LinearConfig,
    pub svm: LinearConfig,
    pub mlp: MlpConfig,
}

/// The settings a model was actually trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperRecord {
    Nb(NbConfig),
    Linear(LinearConfig),
    Mlp(MlpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Params {
    Nb(nb::NbTables),
    Linear(linear::LinearWeights),
    Mlp(mlp::MlpWeights),
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub codec: LabelCodec,
    pub n_features: usize,
    pub params: Params,
    pub hyperparams: HyperRecord,
    pub train_seed: u64,
}

/// Per-class confidences for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub distribution: Vec<f64>,
    pub top_index: usize,
    pub top_label: String,
    pub top_confidence: f64,
}

impl ScoredPrediction {
    /// Wraps a normalized distribution; ties go to the lowest index.
    pub fn from_distribution(distribution: Vec<f64>, codec: &LabelCodec) -> Self {
        let mut top = 0;
        for (i, p) in distribution.iter().enumerate() {
            if *p > distribution[top] {
                top = i;
            }
        }
        ScoredPrediction {
            top_index: top,
            top_label: codec.decode(top).to_string(),
            top_confidence: distribution[top],
            distribution,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln(sum(exp(z)))` without overflow.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-epoch objective values recorded by [`train_traced`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Full training-set objective after each epoch (empty for `nb`).
    pub epoch_losses: Vec<f64>,
}

fn validate_data(data: &[(SparseVector, usize)], n_features: usize, n_classes: usize) -> Result<()> {
    if data.is_empty() || n_classes == 0 {
        return Err(Error::NoTrainingData);
    }
    let mut seen = vec![false; n_classes];
    for (x, y) in data {
        if *y >= n_classes {
            return Err(Error::ClassOutOfRange { index: *y, classes: n_classes });
        }
        if x.min_dim() > n_features {
            return Err(Error::ShapeMismatch(format!(
                "feature index {} outside {n_features} features",
                x.min_dim() - 1
            )));
        }
        seen[*y] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(c) => Err(Error::EmptyClass(c)),
        None => Ok(()),
    }
}

pub fn train(
    kind: ModelKind,
    data: &[(SparseVector, usize)],
    n_features: usize,
    codec: &LabelCodec,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<Model> {
    train_impl(kind, data, n_features, codec, hyperparams, seed, false).map(|o| o.model)
}

/// Like [`train`], additionally evaluating the full objective after every epoch.
pub fn train_traced(
    kind: ModelKind,
    data: &[(SparseVector, usize)],
    n_features: usize,
    codec: &LabelCodec,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<TrainOutcome> {
    train_impl(kind, data, n_features, codec, hyperparams, seed, true)
}

fn train_impl(
    kind: ModelKind,
    data: &[(SparseVector, usize)],
    n_features: usize,
    codec: &LabelCodec,
    hyperparams: &Hyperparams,
    seed: u64,
    trace: bool,
) -> Result<TrainOutcome> {
    let n_classes = codec.len();
    validate_data(data, n_features, n_classes)?;
    let (params, hyper, epoch_losses) = match kind {
        ModelKind::Nb => {
            let tables = nb::fit(data, n_features, n_classes, &hyperparams.nb)?;
            (Params::Nb(tables), HyperRecord::Nb(hyperparams.nb), Vec::new())
        }
        ModelKind::Lr | ModelKind::Svm => {
            let (loss, cfg) = if kind == ModelKind::Lr {
                (linear::Loss::CrossEntropy, hyperparams.lr)
            } else {
                (linear::Loss::Hinge, hyperparams.svm)
            };
            let (w, losses) = linear::fit(loss, data, n_features, n_classes, &cfg, seed, trace)?;
            (Params::Linear(w), HyperRecord::Linear(cfg), losses)
        }
        ModelKind::Mlp => {
            let (w, losses) = mlp::fit(data, n_features, n_classes, &hyperparams.mlp, seed, trace)?;
            (Params::Mlp(w), HyperRecord::Mlp(hyperparams.mlp), losses)
        }
    };
    let model = Model {
        kind,
        codec: codec.clone(),
        n_features,
        params,
        hyperparams: hyper,
        train_seed: seed,
    };
    Ok(TrainOutcome { model, epoch_losses })
}

pub fn predict(model: &Model, x: &SparseVector) -> Result<ScoredPrediction> {
    if x.min_dim() > model.n_features {
        return Err(Error::ShapeMismatch(format!(
            "input has feature {} but model has {} features",
            x.min_dim() - 1,
            model.n_features
        )));
    }
    let distribution = match &model.params {
        Params::Nb(t) => t.posterior(x),
        Params::Linear(w) => softmax(&w.scores(x)),
        Params::Mlp(w) => softmax(&w.forward(x).logits),
    };
    Ok(ScoredPrediction::from_distribution(distribution, &model.codec))
}

impl Model {
    pub fn predict(&self, x: &SparseVector) -> Result<ScoredPrediction> {
        predict(self, x)
    }

    /// True when every parameter is finite and shapes agree with the codec
    /// and feature count.
    pub fn is_consistent(&self) -> bool {
        let (v, c) = (self.n_features, self.codec.len());
        match &self.params {
            Params::Nb(t) => t.is_consistent(v, c),
            Params::Linear(w) => w.is_consistent(v, c),
            Params::Mlp(w) => w.is_consistent(v, c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codec(n: usize) -> LabelCodec {
        LabelCodec::new((0..n).map(|i| format!("G{i}")))
    }

    /// Two-class, two-feature set with a margin of 1.0 around x0 = x1.
    pub(crate) fn separable(n: usize, seed: u64) -> Vec<(SparseVector, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let along: f64 = rng.gen_range(-2.0..2.0);
                let offset: f64 = rng.gen_range(0.5..2.0) * if class == 0 { 1.0 } else { -1.0 };
                // rotate so the separating direction is (1, -1)/sqrt2
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let x0 = (along + offset) * s;
                let x1 = (along - offset) * s;
                (SparseVector::from_dense(&[x0, x1]), class)
            })
            .collect()
    }

    fn accuracy(model: &Model, data: &[(SparseVector, usize)]) -> f64 {
        let correct = data.iter().filter(|(x, y)| predict(model, x).unwrap().top_index == *y).count();
        correct as f64 / data.len() as f64
    }

    #[test]
    fn codec_is_sorted_bijection() {
        let c = LabelCodec::new(["b", "a", "b"]);
        assert_eq!(c.labels(), ["a", "b"]);
        assert_eq!(c.encode("b"), Some(1));
        assert_eq!(c.decode(0), "a");
        assert_eq!(c.encode("zz"), None);
    }

    #[test]
    fn separable_set_is_learned_by_every_gradient_model() {
        let data = separable(200, 1);
        for kind in [ModelKind::Lr, ModelKind::Svm, ModelKind::Mlp] {
            let mut hp = Hyperparams::default();
            hp.mlp.hidden = 16;
            let model = train(kind, &data, 2, &codec(2), &hp, 7).unwrap();
            assert_eq!(accuracy(&model, &data), 1.0, "{kind}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(100, 3);
        let mut hp = Hyperparams::default();
        hp.mlp.hidden = 8;
        hp.mlp.epochs = 3;
        let shifted: Vec<_> = data
            .iter()
            .map(|(x, y)| (SparseVector::from_dense(&x.to_dense(2).iter().map(|v| v + 5.0).collect::<Vec<_>>()), *y))
            .collect();
        for kind in ModelKind::ALL {
            let data = if kind == ModelKind::Nb { &shifted } else { &data };
            let a = train(kind, data, 2, &codec(2), &hp, 11).unwrap();
            let b = train(kind, data, 2, &codec(2), &hp, 11).unwrap();
            assert_eq!(a, b, "{kind}");
            for (x, _) in data {
                assert_eq!(predict(&a, x).unwrap(), predict(&b, x).unwrap());
            }
        }
    }

    #[test]
    fn training_errors() {
        let data = vec![(SparseVector::from_dense(&[1.0]), 0)];
        let hp = Hyperparams::default();
        assert!(matches!(train(ModelKind::Nb, &data, 1, &codec(2), &hp, 0), Err(Error::EmptyClass(1))));
        assert!(matches!(train(ModelKind::Lr, &[], 1, &codec(1), &hp, 0), Err(Error::NoTrainingData)));
        let bad = vec![(SparseVector::from_dense(&[1.0]), 3)];
        assert!(matches!(
            train(ModelKind::Svm, &bad, 1, &codec(2), &hp, 0),
            Err(Error::ClassOutOfRange { .. })
        ));
        let wide = vec![(SparseVector::from_dense(&[0.0, 0.0, 1.0]), 0)];
        assert!(matches!(train(ModelKind::Nb, &wide, 2, &codec(1), &hp, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn diverging_training_aborts() {
        let data = separable(50, 5);
        let mut hp = Hyperparams::default();
        hp.lr.learning_rate = 1e300;
        hp.lr.schedule = LrSchedule::Constant;
        let err = train(ModelKind::Lr, &data, 2, &codec(2), &hp, 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn predict_rejects_wider_input() {
        let data = separable(20, 2);
        let model = train(ModelKind::Nb, &data, 2, &codec(2), &Hyperparams::default(), 0);
        // nb rejects negative features
        assert!(model.is_err());
        let pos: Vec<_> = data
            .iter()
            .map(|(x, y)| (SparseVector::from_dense(&x.to_dense(2).iter().map(|v| v.abs()).collect::<Vec<_>>()), *y))
            .collect();
        let model = train(ModelKind::Nb, &pos, 2, &codec(2), &Hyperparams::default(), 0).unwrap();
        let wide = SparseVector::from_dense(&[0.0, 0.0, 1.0]);
        assert!(matches!(predict(&model, &wide), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn distributions_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<_> = (0..60)
            .map(|i| {
                let dense: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                (SparseVector::from_dense(&dense), i % 3)
            })
            .collect();
        let mut hp = Hyperparams::default();
        hp.mlp.hidden = 8;
        for kind in ModelKind::ALL {
            let model = train(kind, &data, 6, &codec(3), &hp, 1).unwrap();
            assert!(model.is_consistent());
            for (x, _) in &data {
                let p = predict(&model, x).unwrap();
                let sum: f64 = p.distribution.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(p.distribution.iter().all(|v| *v >= 0.0));
                let max = p.distribution.iter().copied().fold(f64::MIN, f64::max);
                assert_eq!(p.top_confidence, max);
            }
        }
    }

    #[test]
    fn loss_non_increasing_with_small_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let dense: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
                (SparseVector::from_dense(&dense), i % 3)
            })
            .collect();
        let mut hp = Hyperparams::default();
        for cfg in [&mut hp.lr, &mut hp.svm] {
            cfg.learning_rate = 1e-3;
            cfg.schedule = LrSchedule::Constant;
        }
        hp.mlp.learning_rate = 1e-3;
        hp.mlp.hidden = 8;
        for kind in [ModelKind::Lr, ModelKind::Svm, ModelKind::Mlp] {
            let out = train_traced(kind, &data, 5, &codec(3), &hp, 2).unwrap();
            assert!(!out.epoch_losses.is_empty());
            for w in out.epoch_losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{kind}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let p = ScoredPrediction::from_distribution(vec![0.25, 0.375, 0.375], &codec(3));
        assert_eq!(p.top_index, 1);
        assert_eq!(p.top_label, "G1");
    }
}
