use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorkit::{checkpoint, Tensor};

use crate::error::{LabError, Result};
use crate::graphcore::GraphStructure;
use crate::harness::data::Prepared;
use crate::harness::train::{sample_key, EVAL_EPOCH};
use crate::params::{frozen, Ctx};
use crate::probelab::position_shuffle;
use crate::seq2seq::{encode, EncoderBatch, Model, RpeMode};

/// Encoder layer outputs of one sample; `layers[l - 1]` is `[n, d_model]`
/// after the adapter of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSample {
    pub id: String,
    pub layers: Vec<Tensor<f32>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenDump {
    pub samples: Vec<HiddenSample>,
}

/// Self-attention probabilities of one sample; `layers[l]` is `[heads, n, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSample {
    pub id: String,
    pub layers: Vec<Tensor<f32>>,
}

impl AttentionSample {
    pub fn n(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[1])
    }

    /// Row `q` of head `h` at layer `l`.
    pub fn row(&self, l: usize, h: usize, q: usize) -> &[f32] {
        let n = self.n();
        &self.layers[l].data()[(h * n + q) * n..(h * n + q + 1) * n]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionDump {
    pub heads: usize,
    pub samples: Vec<AttentionSample>,
}

/// Encode `samples` with a read-only model and collect per-layer hidden
/// states and attention probabilities, in sample order.
pub fn dump_encoder(
    model: &Model,
    samples: &[Prepared],
    graphs: &[GraphStructure],
    rpe: RpeMode,
    perm_seed: u64,
) -> Result<(HiddenDump, AttentionDump)> {
    const CHUNK: usize = 64;
    if samples.len() != graphs.len() {
        return Err(LabError::Data("dump needs one graph per sample".into()));
    }
    let spec = &model.spec;
    let d = spec.d_model;
    let mut hidden = HiddenDump::default();
    let mut attn = AttentionDump { heads: spec.n_heads, samples: Vec::new() };
    for (chunk, gchunk) in samples.chunks(CHUNK).zip(graphs.chunks(CHUNK)) {
        let perms: Option<Vec<Vec<usize>>> = (rpe == RpeMode::Shuffle).then(|| {
            chunk.iter().map(|s| position_shuffle(s.tokens().len(), EVAL_EPOCH, sample_key(&s.id), perm_seed)).collect()
        });
        let inputs: Vec<(&[u32], &GraphStructure)> = chunk.iter().zip(gchunk).map(|(s, g)| (s.tokens(), g)).collect();
        let batch = EncoderBatch::new(&inputs, perms.as_deref())?;
        let mut ctx = Ctx::new(&model.params, &frozen);
        let out = encode(&mut ctx, spec, &batch, rpe)?;
        let mut hs: Vec<HiddenSample> = chunk.iter().map(|s| HiddenSample { id: s.id.clone(), layers: Vec::new() }).collect();
        let mut ats: Vec<AttentionSample> =
            chunk.iter().map(|s| AttentionSample { id: s.id.clone(), layers: Vec::new() }).collect();
        for (&hv, &av) in out.hidden.iter().zip(&out.attn) {
            let h = ctx.g.value(hv).data();
            let mut start = 0;
            for (s, &n) in batch.lengths.iter().enumerate() {
                hs[s].layers.push(Tensor::new(&[n, d], h[start * d..(start + n) * d].to_vec())?);
                start += n;
            }
            let (layout, probs) = ctx
                .g
                .attention_probs(av)
                .ok_or_else(|| LabError::Shape("encoder attention node holds no probabilities".into()))?;
            let mut off = 0;
            for (s, seg) in layout.segments.iter().enumerate() {
                let size = layout.heads * seg.q_len * seg.k_len;
                ats[s].layers.push(Tensor::new(&[layout.heads, seg.q_len, seg.k_len], probs[off..off + size].to_vec())?);
                off += size;
            }
        }
        hidden.samples.extend(hs);
        attn.samples.extend(ats);
    }
    Ok((hidden, attn))
}

pub fn dump_hidden(model: &Model, samples: &[Prepared], graphs: &[GraphStructure], rpe: RpeMode, seed: u64) -> Result<HiddenDump> {
    Ok(dump_encoder(model, samples, graphs, rpe, seed)?.0)
}

pub fn dump_attention(
    model: &Model,
    samples: &[Prepared],
    graphs: &[GraphStructure],
    rpe: RpeMode,
    seed: u64,
) -> Result<AttentionDump> {
    Ok(dump_encoder(model, samples, graphs, rpe, seed)?.1)
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    file: String,
    tokens: usize,
    layers: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    kind: String,
    heads: usize,
    samples: Vec<IndexEntry>,
}

fn save_entries(dir: &Path, kind: &str, heads: usize, items: &[(String, &[Tensor<f32>])]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Index { kind: kind.into(), heads, samples: Vec::new() };
    for (i, (id, layers)) in items.iter().enumerate() {
        let file = format!("{i:06}.tk");
        let entries: Vec<(String, Tensor<f32>)> =
            layers.iter().enumerate().map(|(l, t)| (format!("layer.{}", l + 1), t.clone())).collect();
        checkpoint::save(&dir.join(&file), &entries)?;
        let tokens = layers.first().map_or(0, |t| if kind == "hidden" { t.shape()[0] } else { t.shape()[1] });
        index.samples.push(IndexEntry { id: id.clone(), file, tokens, layers: layers.len() });
    }
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    std::fs::write(dir.join("index.json"), text)?;
    Ok(())
}

fn load_entries(dir: &Path, kind: &str) -> Result<(usize, Vec<(String, Vec<Tensor<f32>>)>)> {
    let index: Index = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
    if index.kind != kind {
        return Err(LabError::Data(format!("{} holds a {} dump, expected {kind}", dir.display(), index.kind)));
    }
    let mut out = Vec::with_capacity(index.samples.len());
    for e in index.samples {
        let mut entries = checkpoint::load::<f32>(&dir.join(&e.file))?;
        entries.sort_by_key(|(n, _)| n.trim_start_matches("layer.").parse::<usize>().unwrap_or(usize::MAX));
        if entries.len() != e.layers {
            return Err(LabError::Data(format!("{}: expected {} layers", e.file, e.layers)));
        }
        out.push((e.id, entries.into_iter().map(|(_, t)| t).collect()));
    }
    Ok((index.heads, out))
}

impl HiddenDump {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let items: Vec<(String, &[Tensor<f32>])> = self.samples.iter().map(|s| (s.id.clone(), s.layers.as_slice())).collect();
        save_entries(dir, "hidden", 0, &items)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, items) = load_entries(dir, "hidden")?;
        Ok(HiddenDump { samples: items.into_iter().map(|(id, layers)| HiddenSample { id, layers }).collect() })
    }

    pub fn n_layers(&self) -> usize {
        self.samples.first().map_or(0, |s| s.layers.len())
    }
}

impl AttentionDump {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let items: Vec<(String, &[Tensor<f32>])> = self.samples.iter().map(|s| (s.id.clone(), s.layers.as_slice())).collect();
        save_entries(dir, "attention", self.heads, &items)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (heads, items) = load_entries(dir, "attention")?;
        Ok(AttentionDump { heads, samples: items.into_iter().map(|(id, layers)| AttentionSample { id, layers }).collect() })
    }
}
