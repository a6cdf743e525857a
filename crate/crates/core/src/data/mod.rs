//! Synthetic tagging and multi-label data, non-IID partitioning, metrics,
//! and dataset files.

pub mod grammar;
pub mod io;
pub mod metrics;
pub mod partition;

pub use grammar::{gen_corpus, gen_multilabel, gen_tagging, is_valid_bio, GrammarConfig, MultilabelExample, TaggingExample};
pub use metrics::{evaluate, evaluate_multilabel, evaluate_tagging, rank_auc, Golds, Metrics, Predictions};
pub use partition::{partition_clients, type_histogram, ClientDataset, Typed};
