#![allow(dead_code)]

use std::path::PathBuf;

use ticket_dispatch::classifiers::ModelKind;
use ticket_dispatch::ingestion::{Ticket, TicketCorpus};
use ticket_dispatch::pipeline::{train_pipeline, Engine, PipelineConfig, RouterConfig};
use ticket_dispatch::synthetic::{self, SyntheticConfig};

pub fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}

pub fn small_config() -> PipelineConfig {
    PipelineConfig {
        router: RouterConfig::Pair {
            members: [ModelKind::Nb, ModelKind::Lr],
            thresholds: Some([0.6, 0.6]),
            target_accuracy: 0.85,
            grid: None,
            validation_fraction: 0.0,
        },
        preprocessing: ticket_dispatch::pipeline::PreprocessingConfig {
            merge: ticket_dispatch::pipeline::MergeSource::Inline(synthetic::merge_families()),
            ..Default::default()
        },
        seed: 5,
        ..Default::default()
    }
}

pub fn small_corpus(n: usize, seed: u64) -> Vec<Ticket> {
    synthetic::generate(&SyntheticConfig { n_tickets: n, seed, ..Default::default() })
}

pub fn small_engine() -> Engine {
    let corpus = TicketCorpus::new(small_corpus(1500, 4));
    train_pipeline(&corpus, &small_config()).unwrap().engine
}
