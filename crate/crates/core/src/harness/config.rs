//! Flat key-value experiment configuration with `desk` and `paper` profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensorkit::AdamConfig;

use super::corpus::CorpusSpec;
use crate::adapters::{Activation, AdapterKind, AdapterSpec, GcnNorm};
use crate::error::{LabError, Result};
use crate::seq2seq::{ModelSpec, RpeMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub profile: String,

    pub corpus_seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_lemmas: usize,
    pub max_depth: usize,
    pub max_branching: usize,
    pub reentrancy_prob: f64,
    pub vocab_size: usize,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub rpe_buckets: usize,
    pub rpe_max_distance: usize,
    pub max_target_len: usize,

    pub bottleneck: usize,
    pub gcn_norm: GcnNorm,
    pub self_loops: bool,

    pub pretrain_seed: u64,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub mask_prob: f64,
    pub mean_span: f64,

    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub freeze_backbone: bool,
    pub beam: usize,
    pub dev_beam: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config::desk()
    }
}

impl Config {
    pub fn desk() -> Self {
        let c = CorpusSpec::default();
        let m = ModelSpec::desk(0);
        Config {
            profile: "desk".into(),
            corpus_seed: c.seed,
            n_train: c.n_train,
            n_dev: c.n_dev,
            n_test: c.n_test,
            n_lemmas: c.n_lemmas,
            max_depth: c.max_depth,
            max_branching: c.max_branching,
            reentrancy_prob: c.reentrancy_prob,
            vocab_size: 400,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            d_ff: m.d_ff,
            rpe_buckets: m.rpe_buckets,
            rpe_max_distance: m.rpe_max_distance,
            max_target_len: m.max_target_len,
            bottleneck: 64,
            gcn_norm: GcnNorm::Paper,
            self_loops: true,
            pretrain_seed: 7,
            pretrain_lr: 2e-3,
            pretrain_epochs: 8,
            pretrain_batch: 16,
            mask_prob: 0.3,
            mean_span: 2.0,
            lr: 3e-3,
            batch_size: 16,
            max_epochs: 12,
            patience: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            freeze_backbone: true,
            beam: 5,
            dev_beam: 1,
        }
    }

    /// Full-scale settings: T5-base dimensions, lr 1e-4, batch 8, beam 5,
    /// maximum length 384, bottleneck 256.
    pub fn paper() -> Self {
        let m = ModelSpec::paper(0);
        Config {
            profile: "paper".into(),
            vocab_size: 32_000,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            d_ff: m.d_ff,
            max_target_len: m.max_target_len,
            bottleneck: 256,
            lr: 1e-4,
            batch_size: 8,
            max_epochs: 100,
            pretrain_lr: 1e-4,
            pretrain_batch: 8,
            ..Config::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Config::desk()),
            "paper" => Ok(Config::paper()),
            _ => Err(LabError::Config(format!("unknown profile '{name}' (expected desk or paper)"))),
        }
    }

    /// Parse a flat TOML document. Keys override the named `profile`
    /// (default `desk`); unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| LabError::Config(format!("config: {e}")))?;
        let profile = match table.get("profile") {
            None => "desk",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(LabError::Config("profile must be a string".into())),
        };
        let base = toml::Value::try_from(Config::profile(profile)?).map_err(|e| LabError::Config(e.to_string()))?;
        let toml::Value::Table(mut merged) = base else {
            return Err(LabError::Config("config did not serialize to a table".into()));
        };
        for (k, v) in table {
            if !merged.contains_key(&k) {
                return Err(LabError::Config(format!("unknown config key '{k}'")));
            }
            merged.insert(k, v);
        }
        let c: Config = toml::Value::Table(merged).try_into().map_err(|e| LabError::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus().validate()?;
        self.model_spec(self.vocab_size.max(1)).validate()?;
        self.train_config(0, RpeMode::On, Attack::None).validate()?;
        if self.pretrain_lr <= 0.0 || self.pretrain_batch == 0 {
            return Err(LabError::Config("pretrain_lr must be positive and pretrain_batch at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.mask_prob) || self.mean_span < 1.0 {
            return Err(LabError::Config("mask_prob must lie in [0, 1) and mean_span be at least 1".into()));
        }
        if self.beam == 0 || self.dev_beam == 0 || self.bottleneck == 0 {
            return Err(LabError::Config("beam, dev_beam and bottleneck must be at least 1".into()));
        }
        Ok(())
    }

    pub fn corpus(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.corpus_seed,
            n_train: self.n_train,
            n_dev: self.n_dev,
            n_test: self.n_test,
            n_lemmas: self.n_lemmas,
            max_depth: self.max_depth,
            max_branching: self.max_branching,
            reentrancy_prob: self.reentrancy_prob,
        }
    }

    /// Backbone spec without adapters.
    pub fn model_spec(&self, vocab_size: usize) -> ModelSpec {
        ModelSpec {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ff: self.d_ff,
            vocab_size,
            rpe_buckets: self.rpe_buckets,
            rpe_max_distance: self.rpe_max_distance,
            max_target_len: self.max_target_len,
            adapter: None,
        }
    }

    pub fn adapter(&self, kind: AdapterKind) -> AdapterSpec {
        AdapterSpec {
            kind,
            bottleneck: self.bottleneck,
            gcn_norm: self.gcn_norm,
            self_loops: self.self_loops,
            activation: Activation::Relu,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            lr: self.pretrain_lr,
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch,
            mask_prob: self.mask_prob,
            mean_span: self.mean_span,
            seed: self.pretrain_seed,
            adam: self.adam(),
        }
    }

    pub fn train_config(&self, seed: u64, rpe_mode: RpeMode, attack: Attack) -> TrainConfig {
        TrainConfig {
            adam: self.adam(),
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            freeze_backbone: self.freeze_backbone,
            rpe_mode,
            attack,
            seed,
            dev_beam: self.dev_beam,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    /// Hex sha256 of the resolved configuration plus any extra run keys.
    pub fn fingerprint(&self, extra: &[(&str, String)]) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        for (k, v) in extra {
            h.update(format!("\n{k}={v}").as_bytes());
        }
        let d = h.finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Training-time corruption of the graph input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    None,
    Graph,
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Graph => "graph",
        }
    }
}

impl std::str::FromStr for Attack {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Attack::None),
            "graph" => Ok(Attack::Graph),
            _ => Err(LabError::Config(format!("unknown attack '{s}' (expected none or graph)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of tokens hidden behind mask spans.
    pub mask_prob: f64,
    pub mean_span: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev BLEU improvement before stopping.
    pub patience: usize,
    pub freeze_backbone: bool,
    pub rpe_mode: RpeMode,
    pub attack: Attack,
    pub seed: u64,
    /// Beam width of the per-epoch dev decode.
    pub dev_beam: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(LabError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.patience == 0 {
            return Err(LabError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LabError::Config("batch_size must be at least 1".into()));
        }
        if self.dev_beam == 0 {
            return Err(LabError::Config("dev_beam must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_override() {
        let c = Config::desk();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        let p = Config::from_toml("profile = \"paper\"\nlr = 0.0002\n").unwrap();
        assert_eq!(p.d_model, 768);
        assert_eq!(p.lr, 2e-4);
        assert_eq!(p.batch_size, 8);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(Config::from_toml("nope = 1").is_err());
        assert!(Config::from_toml("profile = \"huge\"").is_err());
        assert!(Config::from_toml("lr = 0.0").is_err());
        assert!(Config::from_toml("patience = 0").is_err());
        assert!(Config::from_toml("n_heads = 5").is_err());
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let a = Config::desk();
        let b = Config { lr: 1e-3, ..Config::desk() };
        assert_eq!(a.fingerprint(&[]), Config::desk().fingerprint(&[]));
        assert_ne!(a.fingerprint(&[]), b.fingerprint(&[]));
        assert_ne!(a.fingerprint(&[("seed", "1".into())]), a.fingerprint(&[("seed", "2".into())]));
    }
}
