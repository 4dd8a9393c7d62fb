//! Corpus generation, backbone pretraining, adapter training, evaluation
//! and reporting.

pub mod config;
pub mod corpus;
pub mod data;
pub mod metrics;
pub mod report;
pub mod train;

pub use config::{Attack, Config, PretrainConfig, TrainConfig};
pub use corpus::{gen_corpus, Corpus, CorpusSpec, Sample};
pub use data::{build_vocab, prepare, Prepared};
pub use metrics::{bleu, chrf, ter};
pub use report::{aggregate, MetricsReport, SummaryRow};
pub use train::{evaluate, pretrain_backbone, train_adapters, PretrainLog, TrainLog, TrainOutcome};
