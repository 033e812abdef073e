//! Central finite-difference verification of the analytic gradients used by
//! the `lr`, `svm` and `mlp` trainers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linear::{self, LinearWeights, Loss};
use super::mlp::{self, MlpWeights};
use super::ModelKind;
use crate::error::{Error, Result};
use crate::vectorizer::SparseVector;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum CheckParams {
    Linear(LinearWeights),
    Mlp(MlpWeights),
}

impl CheckParams {
    fn to_flat(&self) -> Vec<f64> {
        match self {
            CheckParams::Linear(w) => w.weights.iter().chain(&w.bias).copied().collect(),
            CheckParams::Mlp(w) => w.w1.iter().chain(&w.b1).chain(&w.w2).chain(&w.b2).copied().collect(),
        }
    }

    fn with_flat(&self, flat: &[f64]) -> CheckParams {
        fn take(dst: &mut [f64], src: &mut &[f64]) {
            let (head, tail) = src.split_at(dst.len());
            dst.copy_from_slice(head);
            *src = tail;
        }
        let mut src = flat;
        match self {
            CheckParams::Linear(w) => {
                let mut w = w.clone();
                take(&mut w.weights, &mut src);
                take(&mut w.bias, &mut src);
                CheckParams::Linear(w)
            }
            CheckParams::Mlp(w) => {
                let mut w = w.clone();
                take(&mut w.w1, &mut src);
                take(&mut w.b1, &mut src);
                take(&mut w.w2, &mut src);
                take(&mut w.b2, &mut src);
                CheckParams::Mlp(w)
            }
        }
    }
}

/// A small dense problem together with the parameters to check at.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub kind: ModelKind,
    pub data: Vec<(SparseVector, usize)>,
    pub params: CheckParams,
    pub lambda: f64,
}

impl GradCheckInstance {
    /// Random features and parameters in `[-1, 1]`, random labels.
    pub fn random(
        kind: ModelKind,
        n_features: usize,
        n_classes: usize,
        n_samples: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_samples)
            .map(|_| {
                let dense: Vec<f64> = (0..n_features).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (SparseVector::from_dense(&dense), rng.gen_range(0..n_classes))
            })
            .collect();
        let mut fill = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let params = match kind {
            ModelKind::Lr | ModelKind::Svm => {
                let mut w = LinearWeights::zeros(n_features, n_classes);
                fill(&mut w.weights);
                fill(&mut w.bias);
                CheckParams::Linear(w)
            }
            ModelKind::Mlp => {
                let mut w = MlpWeights::zeros(n_features, hidden, n_classes);
                fill(&mut w.w1);
                fill(&mut w.b1);
                fill(&mut w.w2);
                fill(&mut w.b2);
                CheckParams::Mlp(w)
            }
            ModelKind::Nb => return Err(Error::InvalidConfig("nb has no gradient".into())),
        };
        let lambda = if kind == ModelKind::Mlp { 0.0 } else { 0.01 };
        Ok(GradCheckInstance { kind, data, params, lambda })
    }

    fn loss_kind(&self) -> Loss {
        if self.kind == ModelKind::Svm {
            Loss::Hinge
        } else {
            Loss::CrossEntropy
        }
    }

    fn objective(&self, params: &CheckParams) -> f64 {
        match params {
            CheckParams::Linear(w) => linear::objective(self.loss_kind(), w, &self.data, self.lambda),
            CheckParams::Mlp(w) => mlp::objective(w, &self.data),
        }
    }

    fn analytic(&self) -> Vec<f64> {
        match &self.params {
            CheckParams::Linear(w) => {
                CheckParams::Linear(linear::gradient(self.loss_kind(), w, &self.data, self.lambda)).to_flat()
            }
            CheckParams::Mlp(w) => CheckParams::Mlp(mlp::gradient(w, &self.data)).to_flat(),
        }
    }

    /// Whether the loss is non-differentiable within `epsilon` of the current
    /// point along coordinate `k`.
    fn near_kink(&self, k: usize, epsilon: f64, plus: &CheckParams, minus: &CheckParams) -> bool {
        match (&self.params, self.kind) {
            (CheckParams::Linear(w), ModelKind::Svm) => {
                let c = w.n_classes;
                let (feature, class) = if k < w.weights.len() { (Some(k / c), k % c) } else { (None, k - w.weights.len()) };
                self.data.iter().any(|(x, y)| {
                    let scale = match feature {
                        Some(j) => {
                            let xj = x.iter().find(|(i, _)| *i == j).map_or(0.0, |(_, v)| v);
                            if xj == 0.0 {
                                return false;
                            }
                            xj.abs().max(1.0)
                        }
                        None => 1.0,
                    };
                    let s = w.scores(x)[class];
                    let margin = if class == *y { s } else { -s };
                    (margin - 1.0).abs() < 10.0 * epsilon * scale
                })
            }
            (CheckParams::Mlp(_), _) => {
                let (CheckParams::Mlp(p), CheckParams::Mlp(m)) = (plus, minus) else { unreachable!() };
                self.data.iter().any(|(x, _)| {
                    let a = p.forward(x).pre_activation;
                    let b = m.forward(x).pre_activation;
                    a.iter().zip(&b).any(|(u, v)| (*u > 0.0) != (*v > 0.0))
                })
            }
            _ => false,
        }
    }
}

/// Analytic and numeric derivative for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub analytic: f64,
    pub numeric: f64,
    pub skipped: bool,
}

impl Coordinate {
    pub fn relative_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        (self.analytic - self.numeric).abs() / denom
    }
}

pub fn compare_gradients(instance: &GradCheckInstance, epsilon: f64) -> Vec<Coordinate> {
    let base = instance.params.to_flat();
    let analytic = instance.analytic();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + epsilon;
        let plus = instance.params.with_flat(&probe);
        probe[k] = base[k] - epsilon;
        let minus = instance.params.with_flat(&probe);
        probe[k] = base[k];
        let numeric = (instance.objective(&plus) - instance.objective(&minus)) / (2.0 * epsilon);
        let skipped = instance.near_kink(k, epsilon, &plus, &minus);
        out.push(Coordinate { analytic: analytic[k], numeric, skipped });
    }
    out
}

/// Maximum relative error between analytic and central-difference gradients
/// over all non-skipped parameters.
pub fn gradient_check(instance: &GradCheckInstance, epsilon: f64) -> f64 {
    compare_gradients(instance, epsilon)
        .iter()
        .filter(|c| !c.skipped)
        .map(Coordinate::relative_error)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_point() {
        let inst = GradCheckInstance::random(ModelKind::Lr, 5, 3, 1, 0, 1).unwrap();
        assert!(gradient_check(&inst, 1e-5) <= 1e-4);
    }

    #[test]
    fn mlp_point() {
        let inst = GradCheckInstance::random(ModelKind::Mlp, 5, 3, 1, 4, 1).unwrap();
        assert!(gradient_check(&inst, 1e-5) <= 1e-4);
    }

    #[test]
    fn svm_point() {
        let inst = GradCheckInstance::random(ModelKind::Svm, 5, 3, 4, 0, 2).unwrap();
        assert!(gradient_check(&inst, 1e-5) <= 1e-4);
    }

    #[test]
    fn zero_lr_model_zero_input() {
        let inst = GradCheckInstance {
            kind: ModelKind::Lr,
            data: vec![(SparseVector::zero(), 0)],
            params: CheckParams::Linear(LinearWeights::zeros(4, 3)),
            lambda: 0.1,
        };
        let coords = compare_gradients(&inst, 1e-5);
        for c in &coords[..12] {
            assert_eq!(c.analytic, 0.0);
            assert_eq!(c.numeric, 0.0);
        }
        assert!(gradient_check(&inst, 1e-5) <= 1e-4);
    }

    #[test]
    fn broken_gradient_is_detected() {
        let inst = GradCheckInstance::random(ModelKind::Lr, 3, 2, 2, 0, 5).unwrap();
        let mut coords = compare_gradients(&inst, 1e-5);
        coords[0].analytic += 0.1;
        assert!(coords[0].relative_error() > 1e-2);
    }

    #[test]
    fn nb_has_no_gradient() {
        assert!(GradCheckInstance::random(ModelKind::Nb, 3, 2, 2, 0, 5).is_err());
    }
}
