//! Two-member ensemble with per-member confidence thresholds.
//!
//! A member "qualifies" when its top confidence reaches its own threshold.
//! The ensemble assigns whenever at least one member qualifies; when both do
//! and they disagree, the member with more headroom over its threshold wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ModelKind, ScoredPrediction};
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_ACCURACY: f64 = 0.85;

/// The 0.1, 0.2, ..., 0.9 threshold grid.
pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub member_a: ModelKind,
    pub member_b: ModelKind,
    pub threshold_a: f64,
    pub threshold_b: f64,
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
}

fn default_target() -> f64 {
    DEFAULT_TARGET_ACCURACY
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            member_a: ModelKind::Svm,
            member_b: ModelKind::Mlp,
            threshold_a: 0.5,
            threshold_b: 0.6,
            target_accuracy: DEFAULT_TARGET_ACCURACY,
        }
    }
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(t))
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold_a)?;
        check_threshold(self.threshold_b)?;
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(Error::InvalidConfig(format!("target accuracy {} outside [0, 1]", self.target_accuracy)));
        }
        if self.member_a == self.member_b {
            return Err(Error::InvalidConfig(format!("ensemble members must differ, both are {}", self.member_a)));
        }
        Ok(())
    }

    pub fn with_thresholds(mut self, a: f64, b: f64) -> Self {
        self.threshold_a = a;
        self.threshold_b = b;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contributor {
    A,
    B,
    Both,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Assign { label: String, confidence: f64 },
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub verdict: Verdict,
    pub contributor: Contributor,
}

impl EnsemblePrediction {
    pub fn is_assigned(&self) -> bool {
        matches!(self.verdict, Verdict::Assign { .. })
    }

    pub fn label(&self) -> Option<&str> {
        match &self.verdict {
            Verdict::Assign { label, .. } => Some(label),
            Verdict::Abstain => None,
        }
    }
}

fn assign(p: &ScoredPrediction, contributor: Contributor) -> EnsemblePrediction {
    EnsemblePrediction {
        verdict: Verdict::Assign { label: p.top_label.clone(), confidence: p.top_confidence },
        contributor,
    }
}

/// Core decision rule on raw thresholds.
pub fn combine_at(a: &ScoredPrediction, b: &ScoredPrediction, threshold_a: f64, threshold_b: f64) -> EnsemblePrediction {
    let qa = a.top_confidence >= threshold_a;
    let qb = b.top_confidence >= threshold_b;
    match (qa, qb) {
        (false, false) => EnsemblePrediction { verdict: Verdict::Abstain, contributor: Contributor::None },
        (true, false) => assign(a, Contributor::A),
        (false, true) => assign(b, Contributor::B),
        (true, true) if a.top_index == b.top_index => EnsemblePrediction {
            verdict: Verdict::Assign {
                label: a.top_label.clone(),
                confidence: a.top_confidence.max(b.top_confidence),
            },
            contributor: Contributor::Both,
        },
        (true, true) => {
            if a.top_confidence - threshold_a >= b.top_confidence - threshold_b {
                assign(a, Contributor::A)
            } else {
                assign(b, Contributor::B)
            }
        }
    }
}

pub fn combine(a: &ScoredPrediction, b: &ScoredPrediction, cfg: &EnsembleConfig) -> Result<EnsemblePrediction> {
    if a.distribution.len() != b.distribution.len() {
        return Err(Error::CodecMismatch);
    }
    Ok(combine_at(a, b, cfg.threshold_a, cfg.threshold_b))
}

/// Cached member predictions for one validation ticket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPredictions {
    pub a: ScoredPrediction,
    pub b: ScoredPrediction,
    pub gold: String,
}

/// Counts for one threshold pair over a validation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOutcome {
    pub n_total: usize,
    pub n_assigned: usize,
    pub n_correct: usize,
}

impl PairOutcome {
    pub fn accuracy(&self) -> Option<f64> {
        (self.n_assigned > 0).then(|| self.n_correct as f64 / self.n_assigned as f64)
    }

    pub fn coverage(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_assigned as f64 / self.n_total as f64
        }
    }

    /// Compares accuracies exactly; an undefined accuracy ranks lowest.
    fn cmp_accuracy(&self, other: &PairOutcome) -> Ordering {
        match (self.n_assigned, other.n_assigned) {
            (0, 0) => Ordering::Equal,
            (0, _) => Ordering::Less,
            (_, 0) => Ordering::Greater,
            (na, nb) => (self.n_correct as u128 * nb as u128).cmp(&(other.n_correct as u128 * na as u128)),
        }
    }
}

pub fn evaluate_pair(validation: &[MemberPredictions], threshold_a: f64, threshold_b: f64) -> PairOutcome {
    let mut out = PairOutcome { n_total: validation.len(), n_assigned: 0, n_correct: 0 };
    for item in validation {
        if let Some(label) = combine_at(&item.a, &item.b, threshold_a, threshold_b).label() {
            out.n_assigned += 1;
            if label == item.gold {
                out.n_correct += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSelection {
    pub config: EnsembleConfig,
    pub outcome: PairOutcome,
    pub target_met: bool,
}

impl ThresholdSelection {
    pub fn accuracy(&self) -> Option<f64> {
        self.outcome.accuracy()
    }

    pub fn coverage(&self) -> f64 {
        self.outcome.coverage()
    }
}

/// Exhaustive grid search: maximize coverage subject to accuracy reaching
/// `target_accuracy`; ties prefer higher accuracy, then lower thresholds.
/// When no pair reaches the target the most accurate pair is returned with
/// `target_met = false`.
pub fn select_thresholds(
    validation: &[MemberPredictions],
    target_accuracy: f64,
    grid: &[f64],
    members: (ModelKind, ModelKind),
) -> Result<ThresholdSelection> {
    if validation.is_empty() {
        return Err(Error::InvalidConfig("empty validation set".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty threshold grid".into()));
    }
    grid.iter().try_for_each(|t| check_threshold(*t))?;
    if validation.iter().any(|v| v.a.distribution.len() != v.b.distribution.len()) {
        return Err(Error::CodecMismatch);
    }

    let mut best_met: Option<(f64, f64, PairOutcome)> = None;
    let mut best_any: Option<(f64, f64, PairOutcome)> = None;
    for &ta in grid {
        for &tb in grid {
            let o = evaluate_pair(validation, ta, tb);
            let better_thresholds = |bta: f64, btb: f64| (ta, tb) < (bta, btb);
            if o.accuracy().is_some_and(|acc| acc >= target_accuracy) {
                let replace = match &best_met {
                    None => true,
                    Some((bta, btb, b)) => o
                        .n_assigned
                        .cmp(&b.n_assigned)
                        .then_with(|| o.cmp_accuracy(b))
                        .then_with(|| if better_thresholds(*bta, *btb) { Ordering::Greater } else { Ordering::Less })
                        .is_gt(),
                };
                if replace {
                    best_met = Some((ta, tb, o));
                }
            }
            let replace = match &best_any {
                None => true,
                Some((bta, btb, b)) => o
                    .cmp_accuracy(b)
                    .then_with(|| o.n_assigned.cmp(&b.n_assigned))
                    .then_with(|| if better_thresholds(*bta, *btb) { Ordering::Greater } else { Ordering::Less })
                    .is_gt(),
            };
            if replace {
                best_any = Some((ta, tb, o));
            }
        }
    }
    let target_met = best_met.is_some();
    let (ta, tb, outcome) = best_met.or(best_any).expect("grid is non-empty");
    let config = EnsembleConfig {
        member_a: members.0,
        member_b: members.1,
        threshold_a: ta,
        threshold_b: tb,
        target_accuracy,
    };
    Ok(ThresholdSelection { config, outcome, target_met })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::LabelCodec;

    fn codec() -> LabelCodec {
        LabelCodec::new(["G1", "G2", "G3"])
    }

    /// Prediction putting `conf` on `label` and spreading the rest.
    pub(crate) fn pred(label: usize, conf: f64) -> ScoredPrediction {
        let rest = (1.0 - conf) / 2.0;
        let mut d = vec![rest; 3];
        d[label] = conf;
        ScoredPrediction::from_distribution(d, &codec())
    }

    fn cfg(a: f64, b: f64) -> EnsembleConfig {
        EnsembleConfig::default().with_thresholds(a, b)
    }

    #[test]
    fn agreement() {
        let e = combine(&pred(0, 0.7), &pred(0, 0.9), &cfg(0.5, 0.6)).unwrap();
        assert_eq!(e.verdict, Verdict::Assign { label: "G1".into(), confidence: 0.9 });
        assert_eq!(e.contributor, Contributor::Both);
    }

    #[test]
    fn abstain_when_neither_qualifies() {
        let e = combine(&pred(0, 0.4), &pred(1, 0.55), &cfg(0.5, 0.6)).unwrap();
        assert_eq!(e.verdict, Verdict::Abstain);
        assert_eq!(e.contributor, Contributor::None);
    }

    #[test]
    fn disagreement_by_headroom() {
        let e = combine(&pred(0, 0.8), &pred(1, 0.85), &cfg(0.5, 0.6)).unwrap();
        assert_eq!(e.verdict, Verdict::Assign { label: "G1".into(), confidence: 0.8 });
        assert_eq!(e.contributor, Contributor::A);
    }

    #[test]
    fn single_qualifier_and_headroom_tie() {
        let e = combine(&pred(0, 0.4), &pred(1, 0.7), &cfg(0.5, 0.6)).unwrap();
        assert_eq!(e.contributor, Contributor::B);
        // equal headroom: member a wins
        let e = combine(&pred(0, 0.75), &pred(1, 0.75), &cfg(0.5, 0.5)).unwrap();
        assert_eq!(e.contributor, Contributor::A);
    }

    #[test]
    fn codec_mismatch() {
        let two = ScoredPrediction::from_distribution(vec![0.5, 0.5], &LabelCodec::new(["x", "y"]));
        assert!(matches!(combine(&pred(0, 0.9), &two, &cfg(0.5, 0.5)), Err(Error::CodecMismatch)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.5, 1.1).validate().is_err());
        assert!(cfg(-0.1, 0.5).validate().is_err());
        let mut c = cfg(0.5, 0.5);
        c.member_b = c.member_a;
        assert!(c.validate().is_err());
        assert!(EnsembleConfig::default().validate().is_ok());
    }

    fn item(a: (usize, f64), b: (usize, f64), gold: usize) -> MemberPredictions {
        MemberPredictions { a: pred(a.0, a.1), b: pred(b.0, b.1), gold: codec().decode(gold).to_string() }
    }

    #[test]
    fn perfect_member_a_gives_full_coverage() {
        let v: Vec<_> = (0..10).map(|i| item((i % 3, 0.95), ((i + 1) % 3, 0.35), i % 3)).collect();
        let s = select_thresholds(&v, 0.85, &default_grid(), (ModelKind::Svm, ModelKind::Mlp)).unwrap();
        assert!(s.target_met);
        assert_eq!(s.coverage(), 1.0);
        assert_eq!(s.accuracy(), Some(1.0));
        assert_eq!(s.config.threshold_a, 0.1);
        // every pair ties on coverage and accuracy, so the lowest thresholds win
        assert_eq!(s.config.threshold_b, 0.1);
    }

    #[test]
    fn singleton_grid() {
        let v = vec![item((0, 0.7), (0, 0.65), 0), item((1, 0.3), (2, 0.5), 1)];
        let s = select_thresholds(&v, 0.85, &[0.5], (ModelKind::Svm, ModelKind::Mlp)).unwrap();
        assert_eq!((s.config.threshold_a, s.config.threshold_b), (0.5, 0.5));
        assert_eq!(s.outcome, PairOutcome { n_total: 2, n_assigned: 2, n_correct: 1 });
        assert!(!s.target_met);
    }

    #[test]
    fn rejects_bad_grid() {
        let v = vec![item((0, 0.7), (0, 0.65), 0)];
        assert!(select_thresholds(&v, 0.85, &[0.0, 1.1], (ModelKind::Svm, ModelKind::Mlp)).is_err());
        assert!(select_thresholds(&[], 0.85, &[0.5], (ModelKind::Svm, ModelKind::Mlp)).is_err());
    }
}
