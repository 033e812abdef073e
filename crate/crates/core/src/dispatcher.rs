//! Per-ticket routing: pre-rules, classification, post-rules, fallback.

use serde::{Deserialize, Serialize};

use crate::classifiers::{Model, ScoredPrediction};
use crate::ensemble::{self, check_threshold, Contributor, EnsembleConfig, EnsemblePrediction, Verdict};
use crate::error::{Error, Result};
use crate::ingestion::{Ticket, MANUAL_QUEUE};
use crate::preprocessing::normalize_text;
use crate::rules::{evaluate_post, evaluate_pre, RuleSet};
use crate::vectorizer::{SparseVector, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    RulePre,
    Ensemble,
    RulePost,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStage {
    PreRules,
    Classifier,
    PostRules,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: TraceStage,
    pub outcome: String,
}

/// Final routing decision for one ticket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    #[serde(rename = "id")]
    pub ticket_id: String,
    pub group: String,
    pub confidence: f64,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StageRecord>,
}

impl DispatchDecision {
    pub fn new(ticket_id: impl Into<String>, group: impl Into<String>, confidence: f64, source: Source) -> Self {
        DispatchDecision {
            ticket_id: ticket_id.into(),
            group: group.into(),
            confidence,
            source,
            trace: Vec::new(),
        }
    }

    pub fn is_manual(&self) -> bool {
        self.source == Source::Manual
    }

    fn record(&mut self, stage: TraceStage, outcome: impl Into<String>) {
        self.trace.push(StageRecord { stage, outcome: outcome.into() });
    }
}

/// The statistical part of the router: one thresholded model or a
/// two-member ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Single { model: Model, threshold: f64 },
    Pair { a: Model, b: Model, config: EnsembleConfig },
}

/// Classifier output for one ticket.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub prediction: EnsemblePrediction,
    /// Top label and confidence of the most confident member, used when the
    /// classifier abstains.
    pub best: (String, f64),
}

fn more_confident<'a>(a: &'a ScoredPrediction, b: &'a ScoredPrediction) -> &'a ScoredPrediction {
    if b.top_confidence > a.top_confidence {
        b
    } else {
        a
    }
}

impl Classifier {
    pub fn validate(&self) -> Result<()> {
        match self {
            Classifier::Single { model, threshold } => {
                check_threshold(*threshold)?;
                if !model.is_consistent() {
                    return Err(Error::ShapeMismatch(format!("{} model is inconsistent", model.kind)));
                }
            }
            Classifier::Pair { a, b, config } => {
                config.validate()?;
                if a.codec != b.codec {
                    return Err(Error::CodecMismatch);
                }
                if a.n_features != b.n_features {
                    return Err(Error::ShapeMismatch("ensemble members disagree on feature count".into()));
                }
                if (a.kind, b.kind) != (config.member_a, config.member_b) {
                    return Err(Error::InvalidConfig("ensemble members do not match their models".into()));
                }
                for m in [a, b] {
                    if !m.is_consistent() {
                        return Err(Error::ShapeMismatch(format!("{} model is inconsistent", m.kind)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Single { model, .. } => model.n_features,
            Classifier::Pair { a, .. } => a.n_features,
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            Classifier::Single { model, .. } => model.codec.labels(),
            Classifier::Pair { a, .. } => a.codec.labels(),
        }
    }

    /// Both member predictions for a vector (the second is `None` for a
    /// single model).
    pub fn member_predictions(&self, x: &SparseVector) -> Result<(ScoredPrediction, Option<ScoredPrediction>)> {
        match self {
            Classifier::Single { model, .. } => Ok((model.predict(x)?, None)),
            Classifier::Pair { a, b, .. } => Ok((a.predict(x)?, Some(b.predict(x)?))),
        }
    }

    pub fn classify_vector(&self, x: &SparseVector) -> Result<Classification> {
        match self {
            Classifier::Single { model, threshold } => {
                let p = model.predict(x)?;
                let prediction = if p.top_confidence >= *threshold {
                    EnsemblePrediction {
                        verdict: Verdict::Assign { label: p.top_label.clone(), confidence: p.top_confidence },
                        contributor: Contributor::A,
                    }
                } else {
                    EnsemblePrediction { verdict: Verdict::Abstain, contributor: Contributor::None }
                };
                Ok(Classification { prediction, best: (p.top_label, p.top_confidence) })
            }
            Classifier::Pair { a, b, config } => {
                let (pa, pb) = (a.predict(x)?, b.predict(x)?);
                let prediction = ensemble::combine(&pa, &pb, config)?;
                let best = more_confident(&pa, &pb);
                Ok(Classification { prediction, best: (best.top_label.clone(), best.top_confidence) })
            }
        }
    }
}

/// Vocabulary plus classifier: everything needed to score raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Router {
    pub vocabulary: Vocabulary,
    pub classifier: Classifier,
}

impl Router {
    pub fn vectorize(&self, ticket: &Ticket) -> SparseVector {
        self.vocabulary.transform(&normalize_text(&ticket.subject, &ticket.body))
    }

    pub fn classify(&self, ticket: &Ticket) -> Result<Classification> {
        self.classifier.classify_vector(&self.vectorize(ticket))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// On abstention, let post-stage `assign` rules route the ticket before
    /// falling back to the manual queue.
    pub rescue: bool,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions { rescue: true }
    }
}

/// Routes one ticket with a caller-supplied classification step.
pub fn dispatch_with(
    ticket: &Ticket,
    rules: &RuleSet,
    options: &DispatchOptions,
    classify: impl FnOnce(&Ticket) -> Result<Classification>,
) -> Result<DispatchDecision> {
    let id = ticket.id.as_str();
    if let Some(hit) = evaluate_pre(ticket, rules) {
        let mut d = DispatchDecision::new(id, &hit.group, 1.0, Source::RulePre);
        d.record(TraceStage::PreRules, format!("{} -> {}", hit.rule, hit.group));
        return Ok(d);
    }
    let pre_note = if rules.is_empty() { "no rules" } else { "no match" };
    let Classification { prediction, best } = classify(ticket)?;

    match prediction.verdict {
        Verdict::Assign { label, confidence } => {
            let post = evaluate_post(ticket, (&label, confidence), rules);
            let mut d = if post.overridden {
                DispatchDecision::new(id, &post.group, post.confidence, Source::RulePost)
            } else {
                DispatchDecision::new(id, &label, confidence, Source::Ensemble)
            };
            d.record(TraceStage::PreRules, pre_note);
            let who = format!("{:?}", prediction.contributor).to_lowercase();
            d.record(TraceStage::Classifier, format!("assign {label} {confidence} by {who}"));
            let post_note = match (&post.rule, post.unresolved) {
                (Some(r), true) => format!("{r}: unresolved location"),
                (Some(r), false) => format!("{r} -> {}", post.group),
                (None, _) => "unchanged".to_string(),
            };
            d.record(TraceStage::PostRules, post_note);
            Ok(d)
        }
        Verdict::Abstain => {
            let (best_label, best_conf) = best;
            if options.rescue {
                let post = evaluate_post(ticket, (&best_label, best_conf), rules);
                if post.assigned {
                    let mut d = DispatchDecision::new(id, &post.group, post.confidence, Source::RulePost);
                    d.record(TraceStage::PreRules, pre_note);
                    d.record(TraceStage::Classifier, "abstain");
                    d.record(TraceStage::PostRules, format!("{} -> {}", post.rule.unwrap_or_default(), post.group));
                    return Ok(d);
                }
            }
            let mut d = DispatchDecision::new(id, MANUAL_QUEUE, best_conf, Source::Manual);
            d.record(TraceStage::PreRules, pre_note);
            d.record(TraceStage::Classifier, "abstain");
            d.record(TraceStage::Fallback, MANUAL_QUEUE);
            Ok(d)
        }
    }
}

pub fn dispatch(ticket: &Ticket, router: &Router, rules: &RuleSet, options: &DispatchOptions) -> Result<DispatchDecision> {
    dispatch_with(ticket, rules, options, |t| router.classify(t))
}

/// Dispatches tickets independently; output order follows input order.
pub fn dispatch_batch(
    tickets: &[Ticket],
    router: &Router,
    rules: &RuleSet,
    options: &DispatchOptions,
) -> Result<Vec<DispatchDecision>> {
    tickets.iter().map(|t| dispatch(t, router, rules, options)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rules;

    fn assign(label: &str, conf: f64) -> Result<Classification> {
        Ok(Classification {
            prediction: EnsemblePrediction {
                verdict: Verdict::Assign { label: label.into(), confidence: conf },
                contributor: Contributor::A,
            },
            best: (label.into(), conf),
        })
    }

    fn abstain(best: &str, conf: f64) -> Result<Classification> {
        Ok(Classification {
            prediction: EnsemblePrediction { verdict: Verdict::Abstain, contributor: Contributor::None },
            best: (best.into(), conf),
        })
    }

    fn rules() -> RuleSet {
        parse_rules(
            r#"[{"name":"vpn","priority":1,"stage":"pre",
                 "conditions":[{"field":"body","matcher_kind":"regex","value":"(?i)vpn token"}],
                 "action":{"kind":"assign","args":{"group":"VPN_SUPPORT"}}},
                {"name":"zone","priority":1,"stage":"post",
                 "conditions":[{"field":"predicted_group","matcher_kind":"exact","value":"DESK_ZONE"}],
                 "action":{"kind":"resolve_zone","args":{"zone":"DESK_ZONE","metadata_key":"user_location",
                           "locations":{"east":"DESK_EAST"}}}},
                {"name":"printers","priority":2,"stage":"post",
                 "conditions":[{"field":"subject","matcher_kind":"regex","value":"(?i)printer"}],
                 "action":{"kind":"assign","args":{"group":"PRINT"}}}]"#,
        )
        .unwrap()
    }

    #[test]
    fn pre_rule_skips_classifier() {
        let t = Ticket::new("t1", "help", "my VPN token expired");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| panic!("classifier called")).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), ("VPN_SUPPORT", 1.0, Source::RulePre));
        assert!(d.trace.iter().all(|r| r.stage != TraceStage::Classifier));
    }

    #[test]
    fn ensemble_passes_through() {
        let t = Ticket::new("t2", "mail", "outlook");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| assign("EMAIL", 0.91)).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), ("EMAIL", 0.91, Source::Ensemble));
        assert_eq!(d.trace.len(), 3);
    }

    #[test]
    fn zone_resolved_and_unresolved() {
        let t = Ticket::new("t3", "desk", "x").with_meta("user_location", "east");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| assign("DESK_ZONE", 0.7)).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), ("DESK_EAST", 0.7, Source::RulePost));

        let t = Ticket::new("t4", "desk", "x").with_meta("user_location", "north");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| assign("DESK_ZONE", 0.7)).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), ("DESK_ZONE", 0.7, Source::Ensemble));
        assert!(d.trace.last().unwrap().outcome.contains("unresolved"));
    }

    #[test]
    fn abstention_rescue_and_fallback() {
        let t = Ticket::new("t5", "Printer jam", "x");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| abstain("HW", 0.3)).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), ("PRINT", 1.0, Source::RulePost));

        let d = dispatch_with(&t, &rules(), &DispatchOptions { rescue: false }, |_| abstain("HW", 0.3)).unwrap();
        assert_eq!((d.group.as_str(), d.confidence, d.source), (MANUAL_QUEUE, 0.3, Source::Manual));

        let t = Ticket::new("t6", "other", "x");
        let d = dispatch_with(&t, &rules(), &DispatchOptions::default(), |_| abstain("HW", 0.3)).unwrap();
        assert_eq!((d.group.as_str(), d.source), (MANUAL_QUEUE, Source::Manual));
    }

    #[test]
    fn decision_json_shape() {
        let d = DispatchDecision::new("a", "B", 0.5, Source::RulePost);
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        assert_eq!(v["source"], "rule_post");
        assert!(v.get("trace").is_none());
    }
}
