//! Interventions and probes on trained encoders: graph and position
//! attacks, hidden/attention dumps, a link-prediction probe and the
//! attention-vs-adjacency Wasserstein analysis.

mod attack;
pub mod dump;
pub mod probe;
pub mod wasserstein;

pub use attack::{graph_attack, mix_seed, position_shuffle, AttackedGraph};
pub use dump::{dump_attention, dump_encoder, dump_hidden, AttentionDump, AttentionSample, HiddenDump, HiddenSample};
pub use probe::{build_pairs, eval_probe, link_probe, sample_pairs, train_probe, ProbeConfig, ProbeModel, ProbePair, ProbeRow};
pub use wasserstein::{attention_distance_report, heatmap_csv, normalize_adj, w1, DistanceReport};
