//! Helpdesk ticket routing: text classification ensembles with declarative
//! routing rules.

pub mod bundle;
pub mod classifiers;
pub mod dispatcher;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod pipeline;
pub mod preprocessing;
pub mod rules;
pub mod server;
pub mod synthetic;
pub mod vectorizer;

pub use error::{Error, Result};
