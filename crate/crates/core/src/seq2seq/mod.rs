//! Small pre-LN encoder-decoder transformer with bucketed relative position
//! biases and an adapter slot after every feed-forward sublayer.

mod beam;
mod incremental;
mod model;

pub use beam::{beam_search, greedy_decode, Hypothesis, StepScorer};
pub use incremental::ModelScorer;
pub use model::{decode_logits, encode, load_model, save_model, DecoderBatch, EncoderBatch, EncoderOutput, Model};

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterSpec;
use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub rpe_buckets: usize,
    pub rpe_max_distance: usize,
    pub max_target_len: usize,
    /// Encoder adapter; decoder layers then carry MLP adapters of the same width.
    pub adapter: Option<AdapterSpec>,
}

impl ModelSpec {
    pub fn desk(vocab_size: usize) -> Self {
        ModelSpec {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            d_ff: 128,
            vocab_size,
            rpe_buckets: 32,
            rpe_max_distance: 128,
            max_target_len: 64,
            adapter: None,
        }
    }

    /// T5-base-like dimensions.
    pub fn paper(vocab_size: usize) -> Self {
        ModelSpec {
            d_model: 768,
            n_heads: 12,
            n_enc_layers: 12,
            n_dec_layers: 12,
            d_ff: 3072,
            vocab_size,
            rpe_buckets: 32,
            rpe_max_distance: 128,
            max_target_len: 384,
            adapter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("rpe_buckets", self.rpe_buckets),
            ("rpe_max_distance", self.rpe_max_distance),
            ("max_target_len", self.max_target_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(LabError::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(LabError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.rpe_buckets < 4 || self.rpe_buckets % 2 != 0 {
            return Err(LabError::Config("rpe_buckets must be an even number of at least 4".into()));
        }
        if let Some(a) = &self.adapter {
            a.validate()?;
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn encoder_bias(&self) -> RelativeBias {
        RelativeBias { heads: self.n_heads, buckets: self.rpe_buckets, max_distance: self.rpe_max_distance, bidirectional: true }
    }

    pub fn decoder_bias(&self) -> RelativeBias {
        RelativeBias { heads: self.n_heads, buckets: self.rpe_buckets, max_distance: self.rpe_max_distance, bidirectional: false }
    }
}

/// Encoder position handling; the decoder always keeps its bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpeMode {
    On,
    Off,
    /// Positions are permuted per sample before bucketing.
    Shuffle,
}

impl RpeMode {
    pub fn name(self) -> &'static str {
        match self {
            RpeMode::On => "on",
            RpeMode::Off => "off",
            RpeMode::Shuffle => "shuffle",
        }
    }
}

impl std::str::FromStr for RpeMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(RpeMode::On),
            "off" => Ok(RpeMode::Off),
            "shuffle" | "shuffled" => Ok(RpeMode::Shuffle),
            _ => Err(LabError::Config(format!("unknown rpe mode '{s}' (expected on, off or shuffle)"))),
        }
    }
}

/// Bucket of the offset `delta = key_position - query_position`.
///
/// Small offsets get their own bucket, larger ones share logarithmically
/// wider buckets up to `max_distance`, beyond which everything is clamped.
/// With `bidirectional` the upper half of the buckets holds positive offsets;
/// otherwise only offsets pointing back (`delta <= 0`) are distinguished.
pub fn rel_bucket(delta: i64, buckets: usize, max_distance: usize, bidirectional: bool) -> usize {
    let (mut nb, mut base) = (buckets, 0);
    let n = if bidirectional {
        nb /= 2;
        if delta > 0 {
            base = nb;
        }
        delta.unsigned_abs() as usize
    } else {
        (-delta).max(0) as usize
    };
    let max_exact = nb / 2;
    if n < max_exact {
        return base + n;
    }
    let ratio = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln();
    let large = max_exact + (ratio * (nb - max_exact) as f64) as usize;
    base + large.min(nb - 1)
}

/// Bucketing parameters of one per-head scalar table. The table itself is a
/// parameter of shape `[heads * buckets]`, indexed `head * buckets + bucket`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelativeBias {
    pub heads: usize,
    pub buckets: usize,
    pub max_distance: usize,
    pub bidirectional: bool,
}

impl RelativeBias {
    pub fn bucket(&self, delta: i64) -> usize {
        rel_bucket(delta, self.buckets, self.max_distance, self.bidirectional)
    }

    /// Append table indices for one segment in `[head][query][key]` order.
    pub fn push_indices(&self, q_pos: &[usize], k_pos: &[usize], out: &mut Vec<usize>) {
        for h in 0..self.heads {
            for &i in q_pos {
                for &j in k_pos {
                    out.push(h * self.buckets + self.bucket(j as i64 - i as i64));
                }
            }
        }
    }

    /// Dense `[query][key]` bias of one head, for inspection.
    pub fn matrix(&self, table: &[f32], head: usize, positions: &[usize]) -> Vec<Vec<f32>> {
        positions
            .iter()
            .map(|&i| {
                positions
                    .iter()
                    .map(|&j| table[head * self.buckets + self.bucket(j as i64 - i as i64)])
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offset_has_bucket_zero() {
        assert_eq!(rel_bucket(0, 32, 128, true), 0);
        assert_eq!(rel_bucket(0, 32, 128, false), 0);
    }

    #[test]
    fn direction_matters() {
        for d in 1..300 {
            assert_ne!(rel_bucket(d, 32, 128, true), rel_bucket(-d, 32, 128, true));
        }
    }

    #[test]
    fn monotone_in_distance_per_side() {
        for side in [1i64, -1] {
            let mut prev = 0;
            for m in 0..=256i64 {
                let b = rel_bucket(side * m, 32, 128, true);
                assert!(b >= prev || m == 0, "delta {}", side * m);
                prev = b;
            }
        }
        let mut prev = 0;
        for m in 0..=256i64 {
            let b = rel_bucket(-m, 32, 128, false);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn buckets_in_range_and_clamped() {
        for d in -1000..1000 {
            assert!(rel_bucket(d, 32, 128, true) < 32);
            assert!(rel_bucket(d, 32, 128, false) < 32);
        }
        assert_eq!(rel_bucket(128, 32, 128, true), rel_bucket(900, 32, 128, true));
        assert_eq!(rel_bucket(5, 32, 128, false), 0);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::desk(100).validate().is_ok());
        let mut s = ModelSpec::desk(100);
        s.n_heads = 5;
        assert!(s.validate().is_err());
    }
}
