use std::collections::BTreeMap;

use ticket_dispatch::classifiers::ModelKind;
use ticket_dispatch::evaluation::{classifier_only_metrics, cross_validate, stratified_folds};
use ticket_dispatch::ingestion::{Ticket, TicketCorpus};
use ticket_dispatch::pipeline::{train_pipeline, PipelineConfig, RouterConfig};

fn corpus() -> TicketCorpus {
    let words = [("NET", "wifi router cable"), ("MAIL", "inbox outlook mailbox"), ("ACCESS", "password account locked")];
    let mut tickets = Vec::new();
    for i in 0..60 {
        let (label, text) = words[i % 3];
        let noise = if i % 7 == 0 { " printer" } else { "" };
        tickets.push(Ticket::new(format!("t{i:02}"), format!("issue {i}"), format!("{text}{noise}")).with_gold(label));
    }
    TicketCorpus::new(tickets)
}

fn nb_config() -> PipelineConfig {
    PipelineConfig { router: RouterConfig::Single { model: ModelKind::Nb, threshold: 0.0 }, ..Default::default() }
}

#[test]
fn folds_are_stratified_partition() {
    let c = corpus();
    let folds = stratified_folds(c.tickets(), 3, 9);
    assert_eq!(folds.len(), 60);
    let mut per: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (t, f) in c.tickets().iter().zip(&folds) {
        assert!(*f < 3);
        *per.entry((*f, t.gold_group.as_deref().unwrap())).or_default() += 1;
    }
    assert!(per.values().all(|&n| n == 20 / 3 || n == 20 / 3 + 1), "{per:?}");
    assert_eq!(stratified_folds(c.tickets(), 3, 9), folds);
}

#[test]
fn matches_manual_loop() {
    let c = corpus();
    let cfg = nb_config();
    let cv = cross_validate(&c, &cfg, 3, 9).unwrap();
    let folds = stratified_folds(c.tickets(), 3, 9);
    let mut accs = Vec::new();
    for f in 0..3 {
        let train: Vec<Ticket> = c.tickets().iter().zip(&folds).filter(|(_, g)| **g != f).map(|(t, _)| t.clone()).collect();
        let test: Vec<Ticket> = c.tickets().iter().zip(&folds).filter(|(_, g)| **g == f).map(|(t, _)| t.clone()).collect();
        let engine = train_pipeline(&TicketCorpus::new(train), &cfg).unwrap().engine;
        let m = classifier_only_metrics(&engine, &test).unwrap();
        assert_eq!(cv.folds[f].n_correct, m.n_correct);
        assert_eq!(cv.folds[f].n_total, test.len());
        accs.push(m.accuracy.unwrap());
    }
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((cv.mean_accuracy.unwrap() - mean).abs() < 1e-12);
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((cv.stdev_accuracy.unwrap() - sd).abs() < 1e-12);
    assert_eq!(cv.mean_coverage, 1.0);
    assert!(mean > 0.9, "separable corpus scored {mean}");
}

#[test]
fn rejects_bad_fold_counts() {
    let c = corpus();
    assert!(cross_validate(&c, &nb_config(), 1, 0).is_err());
    assert!(cross_validate(&c, &nb_config(), 61, 0).is_err());
}
