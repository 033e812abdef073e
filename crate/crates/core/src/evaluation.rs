//! Accuracy/coverage measurement, cross-validation and threshold sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, Hyperparams, LabelCodec, ModelKind};
use crate::dispatcher::{dispatch_batch, Classifier, DispatchDecision, DispatchOptions};
use crate::ensemble::{check_threshold, evaluate_pair, MemberPredictions};
use crate::error::{Error, Result};
use crate::ingestion::{Ticket, TicketCorpus};
use crate::pipeline::{member_predictions, stratified_split, train_pipeline, Engine, PipelineConfig};
use crate::rules::RuleSet;
use crate::vectorizer::SparseVector;

/// Accuracy over assigned tickets and the fraction assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub label: String,
    /// `None` when nothing was assigned.
    pub accuracy: Option<f64>,
    pub coverage: f64,
    pub n_total: usize,
    pub n_assigned: usize,
    pub n_correct: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_time_s: Option<f64>,
}

impl Metrics {
    pub fn from_counts(label: impl Into<String>, n_total: usize, n_assigned: usize, n_correct: usize) -> Self {
        Metrics {
            label: label.into(),
            accuracy: (n_assigned > 0).then(|| n_correct as f64 / n_assigned as f64),
            coverage: if n_total == 0 { 0.0 } else { n_assigned as f64 / n_total as f64 },
            n_total,
            n_assigned,
            n_correct,
            train_time_s: None,
        }
    }
}

/// Scores decisions against gold labels. Manual-queue decisions count toward
/// the total only.
pub fn score_decisions<'a>(
    label: &str,
    decisions: &[DispatchDecision],
    gold: impl IntoIterator<Item = &'a str>,
) -> Metrics {
    let mut assigned = 0;
    let mut correct = 0;
    let mut total = 0;
    for (d, g) in decisions.iter().zip(gold) {
        total += 1;
        if d.is_manual() {
            continue;
        }
        assigned += 1;
        if d.group == g {
            correct += 1;
        }
    }
    Metrics::from_counts(label, total, assigned, correct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Classifier alone, scored against fully merged gold labels.
    pub classifier_only: Metrics,
    /// Classifier plus rules, scored against the label a correct initial
    /// assignment carries.
    pub end_to_end: Metrics,
    /// Top-1 accuracy of each member at full coverage on head tickets.
    pub members: Vec<Metrics>,
}

fn gold_of(t: &Ticket) -> Result<&str> {
    t.gold_group.as_deref().ok_or_else(|| Error::MissingGold(t.id.clone()))
}

pub fn classifier_only_metrics(engine: &Engine, tickets: &[Ticket]) -> Result<Metrics> {
    let gold = tickets.iter().map(|t| gold_of(t).map(|g| engine.merge.map_label(g))).collect::<Result<Vec<_>>>()?;
    let decisions = dispatch_batch(tickets, &engine.router, &RuleSet::empty(), &DispatchOptions::default())?;
    Ok(score_decisions("classifier", &decisions, gold))
}

pub fn end_to_end_metrics(engine: &Engine, tickets: &[Ticket], rules: &RuleSet, options: &DispatchOptions) -> Result<Metrics> {
    let gold = tickets
        .iter()
        .map(|t| gold_of(t).map(|g| engine.merge.initial_assignment_label(g)))
        .collect::<Result<Vec<_>>>()?;
    let decisions = dispatch_batch(tickets, &engine.router, rules, options)?;
    Ok(score_decisions("end_to_end", &decisions, gold))
}

fn member_metrics(engine: &Engine, tickets: &[Ticket]) -> Result<Vec<Metrics>> {
    let codec: &[String] = engine.router.classifier.labels();
    let head: Vec<&Ticket> = tickets
        .iter()
        .filter(|t| t.gold_group.as_deref().is_some_and(|g| codec.iter().any(|c| c == engine.merge.map_label(g))))
        .collect();
    let models: Vec<&classifiers::Model> = match &engine.router.classifier {
        Classifier::Single { model, .. } => vec![model],
        Classifier::Pair { a, b, .. } => vec![a, b],
    };
    models
        .into_iter()
        .map(|m| {
            let mut correct = 0;
            for t in &head {
                let p = m.predict(&engine.router.vectorize(t))?;
                if p.top_label == engine.merge.map_label(gold_of(t)?) {
                    correct += 1;
                }
            }
            Ok(Metrics::from_counts(m.kind.as_str(), head.len(), head.len(), correct))
        })
        .collect()
}

pub fn evaluate(engine: &Engine, tickets: &[Ticket], rules: &RuleSet, options: &DispatchOptions) -> Result<EvaluationReport> {
    if tickets.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(EvaluationReport {
        classifier_only: classifier_only_metrics(engine, tickets)?,
        end_to_end: end_to_end_metrics(engine, tickets, rules, options)?,
        members: member_metrics(engine, tickets)?,
    })
}

/// Stratified train/test split of a corpus by original gold label.
pub fn split_holdout(corpus: &TicketCorpus, test_fraction: f64, seed: u64) -> Result<(TicketCorpus, TicketCorpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    if let Some(t) = corpus.tickets().iter().find(|t| t.gold_group.is_none()) {
        return Err(Error::MissingGold(t.id.clone()));
    }
    let (train, test) = stratified_split(corpus.tickets(), test_fraction, seed);
    Ok((TicketCorpus::new(train), TicketCorpus::new(test)))
}

/// Fold index for every ticket: within each gold label, a seeded shuffle
/// followed by round-robin assignment.
pub fn stratified_folds(tickets: &[Ticket], k: usize, seed: u64) -> Vec<usize> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tickets.iter().enumerate() {
        by_label.entry(t.gold_group.as_deref().unwrap_or("")).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; tickets.len()];
    let mut next = 0;
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation of fold accuracies.
    pub stdev_accuracy: Option<f64>,
    pub mean_coverage: f64,
}

/// k-fold cross-validation of the whole training pipeline, scored on the
/// classifier alone.
pub fn cross_validate(corpus: &TicketCorpus, config: &PipelineConfig, k: usize, seed: u64) -> Result<CrossValidation> {
    if k < 2 || k > corpus.len() {
        return Err(Error::InvalidConfig(format!("cannot make {k} folds of {} tickets", corpus.len())));
    }
    let tickets = corpus.tickets();
    let fold = stratified_folds(tickets, k, seed);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (train, test): (Vec<_>, Vec<_>) = tickets.iter().zip(&fold).partition(|(_, &g)| g != f);
        let train = TicketCorpus::new(train.into_iter().map(|(t, _)| t.clone()).collect());
        let test: Vec<Ticket> = test.into_iter().map(|(t, _)| t.clone()).collect();
        let engine = train_pipeline(&train, config)?.engine;
        let mut m = classifier_only_metrics(&engine, &test)?;
        m.label = format!("fold{f}");
        folds.push(m);
    }
    let accs: Vec<f64> = folds.iter().filter_map(|m| m.accuracy).collect();
    let mean_accuracy = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
    let stdev_accuracy = mean_accuracy.filter(|_| accs.len() > 1).map(|mean| {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    });
    let mean_coverage = folds.iter().map(|m| m.coverage).sum::<f64>() / k as f64;
    Ok(CrossValidation { folds, mean_accuracy, stdev_accuracy, mean_coverage })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_b: Option<f64>,
    pub accuracy: Option<f64>,
    pub coverage: f64,
    pub n_assigned: usize,
    pub n_correct: usize,
}

/// Accuracy and coverage over a threshold grid. Pairs are swept over the full
/// grid product in row-major order; single models over the grid alone. Only
/// tickets whose merged gold label is a head label are used.
pub fn sweep_thresholds(engine: &Engine, tickets: &[Ticket], grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty threshold grid".into()));
    }
    grid.iter().try_for_each(|t| check_threshold(*t))?;
    let head = engine.head_labels();
    let merged: Vec<Ticket> = tickets
        .iter()
        .filter_map(|t| {
            let g = engine.merge.map_label(t.gold_group.as_deref()?).to_string();
            head.contains(&g).then(|| t.clone().with_gold(g))
        })
        .collect();
    let point = |ta: f64, tb: Option<f64>, n_total: usize, n_assigned: usize, n_correct: usize| {
        let m = Metrics::from_counts("", n_total, n_assigned, n_correct);
        SweepPoint { threshold_a: ta, threshold_b: tb, accuracy: m.accuracy, coverage: m.coverage, n_assigned, n_correct }
    };
    match &engine.router.classifier {
        Classifier::Pair { a, b, .. } => {
            let cached = member_predictions(&merged, &engine.router.vocabulary, a, b)?;
            let mut out = Vec::with_capacity(grid.len() * grid.len());
            for &ta in grid {
                for &tb in grid {
                    let o = evaluate_pair(&cached, ta, tb);
                    out.push(point(ta, Some(tb), o.n_total, o.n_assigned, o.n_correct));
                }
            }
            Ok(out)
        }
        Classifier::Single { model, .. } => {
            let preds = merged
                .iter()
                .map(|t| Ok((model.predict(&engine.router.vectorize(t))?, t.gold_group.clone().unwrap_or_default())))
                .collect::<Result<Vec<_>>>()?;
            Ok(grid
                .iter()
                .map(|&ta| {
                    let assigned: Vec<_> = preds.iter().filter(|(p, _)| p.top_confidence >= ta).collect();
                    let correct = assigned.iter().filter(|(p, g)| p.top_label == *g).count();
                    point(ta, None, preds.len(), assigned.len(), correct)
                })
                .collect())
        }
    }
}

/// Number of grid neighbours where raising one threshold increased coverage.
pub fn coverage_violations(points: &[SweepPoint]) -> usize {
    let mut violations = 0;
    for p in points {
        for q in points {
            let a_up = q.threshold_a > p.threshold_a && q.threshold_b == p.threshold_b;
            let b_up = q.threshold_a == p.threshold_a
                && matches!((p.threshold_b, q.threshold_b), (Some(x), Some(y)) if y > x);
            if (a_up || b_up) && q.n_assigned > p.n_assigned {
                violations += 1;
            }
        }
    }
    violations
}

/// Coverage monotonicity check directly on cached member predictions.
pub fn cached_coverage_violations(cached: &[MemberPredictions], grid: &[f64]) -> usize {
    let points: Vec<SweepPoint> = grid
        .iter()
        .flat_map(|&ta| grid.iter().map(move |&tb| (ta, tb)))
        .map(|(ta, tb)| {
            let o = evaluate_pair(cached, ta, tb);
            SweepPoint {
                threshold_a: ta,
                threshold_b: Some(tb),
                accuracy: o.accuracy(),
                coverage: o.coverage(),
                n_assigned: o.n_assigned,
                n_correct: o.n_correct,
            }
        })
        .collect();
    coverage_violations(&points)
}

/// Wall-clock training time of one model in seconds, with its training
/// accuracy.
pub fn measure_train_time(
    kind: ModelKind,
    data: &[(SparseVector, usize)],
    n_features: usize,
    codec: &LabelCodec,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<Metrics> {
    let start = Instant::now();
    let model = classifiers::train(kind, data, n_features, codec, hyperparams, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let mut correct = 0;
    for (x, y) in data {
        if model.predict(x)?.top_index == *y {
            correct += 1;
        }
    }
    let mut m = Metrics::from_counts(kind.as_str(), data.len(), data.len(), correct);
    m.train_time_s = Some(secs);
    Ok(m)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
}

/// Fixed-width text table of metrics rows.
pub fn metrics_table(rows: &[Metrics]) -> String {
    let mut s = format!("{:<14} {:>9} {:>9} {:>8} {:>8} {:>8}\n", "label", "accuracy", "coverage", "total", "assigned", "correct");
    for m in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>9} {:>9.4} {:>8} {:>8} {:>8}",
            m.label,
            fmt_opt(m.accuracy),
            m.coverage,
            m.n_total,
            m.n_assigned,
            m.n_correct
        );
    }
    s
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut s = format!("{:>6} {:>6} {:>9} {:>9}\n", "t_a", "t_b", "accuracy", "coverage");
    for p in points {
        let tb = p.threshold_b.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(s, "{:>6.2} {:>6} {:>9} {:>9.4}", p.threshold_a, tb, fmt_opt(p.accuracy), p.coverage);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatcher::Source;
    use crate::ingestion::MANUAL_QUEUE;

    #[test]
    fn manual_counts_toward_total_only() {
        let d = vec![
            DispatchDecision::new("1", "A", 0.9, Source::Ensemble),
            DispatchDecision::new("2", "B", 0.9, Source::Ensemble),
            DispatchDecision::new("3", MANUAL_QUEUE, 0.2, Source::Manual),
            DispatchDecision::new("4", "A", 1.0, Source::RulePre),
        ];
        let m = score_decisions("x", &d, ["A", "A", "A", "A"]);
        assert_eq!((m.n_total, m.n_assigned, m.n_correct), (4, 3, 2));
        assert_eq!(m.accuracy, Some(2.0 / 3.0));
        assert_eq!(m.coverage, 0.75);
    }

    #[test]
    fn nothing_assigned_has_no_accuracy() {
        let d = vec![DispatchDecision::new("1", MANUAL_QUEUE, 0.2, Source::Manual)];
        let m = score_decisions("x", &d, ["A"]);
        assert_eq!(m.accuracy, None);
        assert_eq!(m.coverage, 0.0);
    }

    #[test]
    fn folds_are_stratified() {
        let tickets: Vec<Ticket> = (0..30)
            .map(|i| Ticket::new(i.to_string(), "s", "b").with_gold(if i < 20 { "A" } else { "B" }))
            .collect();
        let f = stratified_folds(&tickets, 5, 1);
        for k in 0..5 {
            let a = (0..20).filter(|&i| f[i] == k).count();
            let b = (20..30).filter(|&i| f[i] == k).count();
            assert_eq!((a, b), (4, 2));
        }
        assert_eq!(f, stratified_folds(&tickets, 5, 1));
    }

    #[test]
    fn violation_counter() {
        let p = |ta, tb, n| SweepPoint {
            threshold_a: ta,
            threshold_b: Some(tb),
            accuracy: None,
            coverage: 0.0,
            n_assigned: n,
            n_correct: 0,
        };
        assert_eq!(coverage_violations(&[p(0.1, 0.1, 5), p(0.2, 0.1, 4), p(0.1, 0.2, 3)]), 0);
        assert_eq!(coverage_violations(&[p(0.1, 0.1, 5), p(0.2, 0.1, 6)]), 1);
    }

    #[test]
    fn table_formats() {
        let t = metrics_table(&[Metrics::from_counts("svm", 10, 8, 6)]);
        assert!(t.lines().nth(1).unwrap().contains("0.7500"));
    }
}
