use serde::{Deserialize, Serialize};

use super::{log_sum_exp, NbConfig};
use crate::error::{Error, Result};
use crate::vectorizer::SparseVector;

/// Log priors and smoothed per-class term log-likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbTables {
    pub log_prior: Vec<f64>,
    /// Row-major `classes x features`.
    pub log_likelihood: Vec<f64>,
    pub n_features: usize,
}

pub(super) fn fit(
    data: &[(SparseVector, usize)],
    n_features: usize,
    n_classes: usize,
    cfg: &NbConfig,
) -> Result<NbTables> {
    if !(cfg.alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("nb alpha must be positive, got {}", cfg.alpha)));
    }
    let mut docs = vec![0usize; n_classes];
    let mut counts = vec![0.0; n_classes * n_features];
    for (x, y) in data {
        docs[*y] += 1;
        for (j, v) in x.iter() {
            if v < 0.0 {
                return Err(Error::ShapeMismatch("naive Bayes needs non-negative features".into()));
            }
            counts[y * n_features + j] += v;
        }
    }
    let n = data.len() as f64;
    let log_prior = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
    let mut log_likelihood = vec![0.0; n_classes * n_features];
    for c in 0..n_classes {
        let row = &counts[c * n_features..(c + 1) * n_features];
        let denom = (row.iter().sum::<f64>() + cfg.alpha * n_features as f64).ln();
        for (j, count) in row.iter().enumerate() {
            log_likelihood[c * n_features + j] = (count + cfg.alpha).ln() - denom;
        }
    }
    Ok(NbTables { log_prior, log_likelihood, n_features })
}

impl NbTables {
    pub fn n_classes(&self) -> usize {
        self.log_prior.len()
    }

    /// Unnormalized log posterior per class.
    pub fn joint_log_likelihood(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| {
                let row = &self.log_likelihood[c * self.n_features..(c + 1) * self.n_features];
                self.log_prior[c] + x.iter().map(|(j, v)| v * row[j]).sum::<f64>()
            })
            .collect()
    }

    pub fn posterior(&self, x: &SparseVector) -> Vec<f64> {
        let jll = self.joint_log_likelihood(x);
        let norm = log_sum_exp(&jll);
        jll.iter().map(|l| (l - norm).exp()).collect()
    }

    pub(super) fn is_consistent(&self, v: usize, c: usize) -> bool {
        self.n_features == v
            && self.log_prior.len() == c
            && self.log_likelihood.len() == v * c
            && self.log_prior.iter().chain(&self.log_likelihood).all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{predict, train, Hyperparams, LabelCodec, ModelKind, Params};

    fn two_class() -> (Vec<(SparseVector, usize)>, LabelCodec) {
        let data = vec![
            (SparseVector::from_dense(&[3.0, 0.0]), 0),
            (SparseVector::from_dense(&[0.0, 3.0]), 1),
        ];
        (data, LabelCodec::new(["c0", "c1"]))
    }

    #[test]
    fn laplace_smoothed_likelihoods() {
        let (data, codec) = two_class();
        let model = train(ModelKind::Nb, &data, 2, &codec, &Hyperparams::default(), 0).unwrap();
        let Params::Nb(t) = &model.params else { unreachable!() };
        assert!((t.log_likelihood[0].exp() - 0.8).abs() < 1e-12);
        assert!((t.log_likelihood[2].exp() - 0.2).abs() < 1e-12);
        assert!((t.log_prior[0].exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_by_bayes_rule() {
        let (data, codec) = two_class();
        let model = train(ModelKind::Nb, &data, 2, &codec, &Hyperparams::default(), 0).unwrap();
        let p = predict(&model, &SparseVector::from_dense(&[1.0, 0.0])).unwrap();
        assert!((p.distribution[0] - 0.8).abs() < 1e-12);
        assert_eq!(p.top_label, "c0");
    }

    #[test]
    fn zero_vector_gives_priors() {
        let data = vec![
            (SparseVector::from_dense(&[1.0, 0.0]), 0),
            (SparseVector::from_dense(&[1.0, 0.0]), 0),
            (SparseVector::from_dense(&[1.0, 0.0]), 0),
            (SparseVector::from_dense(&[0.0, 1.0]), 1),
        ];
        let codec = LabelCodec::new(["a", "b"]);
        let model = train(ModelKind::Nb, &data, 2, &codec, &Hyperparams::default(), 0).unwrap();
        let p = predict(&model, &SparseVector::zero()).unwrap();
        assert!((p.distribution[0] - 0.75).abs() < 1e-12);
        assert!((p.distribution[1] - 0.25).abs() < 1e-12);
    }
}
