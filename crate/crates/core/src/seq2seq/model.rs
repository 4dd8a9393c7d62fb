use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorkit::{checkpoint, lit, AttentionLayout, Float, Var};

use super::{ModelSpec, RelativeBias, RpeMode};
use crate::adapters::{adapter_forward, AdapterKind, AdapterSpec, AdapterVars, GraphOperator};
use crate::error::{LabError, Result};
use crate::graphcore::GraphStructure;
use crate::params::{Ctx, Init, ParamStore};
use crate::subtok::PAD;

pub(crate) const BACKBONE_LN_EPS: f64 = 1e-6;

/// Parameters plus the spec they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F: Float = f32> {
    pub spec: ModelSpec,
    pub params: ParamStore<F>,
}

fn attn_block<F: Float>(store: &mut ParamStore<F>, p: &str, d: usize, rng: &mut ChaCha8Rng) {
    let std = 1.0 / (d as f64).sqrt();
    store.insert(format!("{p}.ln.gamma"), Init::Ones.sample(&[d], rng));
    store.insert(format!("{p}.ln.beta"), Init::Zeros.sample(&[d], rng));
    for w in ["q", "k", "v", "o"] {
        store.insert(format!("{p}.{w}"), Init::Normal(std).sample(&[d, d], rng));
    }
}

fn ff_block<F: Float>(store: &mut ParamStore<F>, p: &str, d: usize, dff: usize, rng: &mut ChaCha8Rng) {
    store.insert(format!("{p}.ln.gamma"), Init::Ones.sample(&[d], rng));
    store.insert(format!("{p}.ln.beta"), Init::Zeros.sample(&[d], rng));
    store.insert(format!("{p}.w1"), Init::Normal(1.0 / (d as f64).sqrt()).sample(&[d, dff], rng));
    store.insert(format!("{p}.b1"), Init::Zeros.sample(&[dff], rng));
    store.insert(format!("{p}.w2"), Init::Normal(1.0 / (dff as f64).sqrt()).sample(&[dff, d], rng));
    store.insert(format!("{p}.b2"), Init::Zeros.sample(&[d], rng));
}

impl<F: Float> Model<F> {
    /// Randomly initialized backbone, plus adapters when the spec asks for them.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dff) = (spec.d_model, spec.d_ff);
        let mut params = ParamStore::new();
        params.insert("backbone.embed", Init::Normal(1.0).sample(&[spec.vocab_size, d], &mut rng));
        let rpe = [spec.n_heads * spec.rpe_buckets];
        params.insert("backbone.enc.rpe", Init::Normal(0.5).sample(&rpe, &mut rng));
        params.insert("backbone.dec.rpe", Init::Normal(0.5).sample(&rpe, &mut rng));
        for l in 0..spec.n_enc_layers {
            attn_block(&mut params, &format!("backbone.enc.{l}.attn"), d, &mut rng);
            ff_block(&mut params, &format!("backbone.enc.{l}.ff"), d, dff, &mut rng);
        }
        for l in 0..spec.n_dec_layers {
            attn_block(&mut params, &format!("backbone.dec.{l}.self"), d, &mut rng);
            attn_block(&mut params, &format!("backbone.dec.{l}.cross"), d, &mut rng);
            ff_block(&mut params, &format!("backbone.dec.{l}.ff"), d, dff, &mut rng);
        }
        for side in ["enc", "dec"] {
            params.insert(format!("backbone.{side}.ln.gamma"), Init::Ones.sample(&[d], &mut rng));
            params.insert(format!("backbone.{side}.ln.beta"), Init::Zeros.sample(&[d], &mut rng));
        }
        let mut model = Model { spec: ModelSpec { adapter: None, ..spec }, params };
        if let Some(a) = spec.adapter {
            model.attach_adapters(a, seed.wrapping_add(0x5eed))?;
        }
        Ok(model)
    }

    /// Replace any adapters with fresh ones of the given kind. Encoder layers
    /// get `spec`, decoder layers MLP adapters of the same width.
    pub fn attach_adapters(&mut self, spec: AdapterSpec, seed: u64) -> Result<()> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.remove_prefix(crate::params::ADAPTER);
        for l in 0..self.spec.n_enc_layers {
            spec.init(&mut self.params, &format!("adapter.enc.{l}"), self.spec.d_model, &mut rng);
        }
        let dec = decoder_adapter(&spec);
        for l in 0..self.spec.n_dec_layers {
            dec.init(&mut self.params, &format!("adapter.dec.{l}"), self.spec.d_model, &mut rng);
        }
        self.spec.adapter = Some(spec);
        Ok(())
    }

    pub fn cast<G: Float>(&self) -> Model<G> {
        Model { spec: self.spec, params: self.params.cast() }
    }
}

pub(crate) fn decoder_adapter(enc: &AdapterSpec) -> AdapterSpec {
    AdapterSpec { kind: AdapterKind::Mlp, ..*enc }
}

/// Packed encoder inputs of several samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBatch {
    pub tokens: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Position index of every token used for bucketing; `0..len` per sample
    /// unless positions are shuffled.
    pub positions: Vec<usize>,
    /// Block-diagonal union of the per-sample graphs.
    pub graph: GraphStructure,
}

impl EncoderBatch {
    /// `perms[s][i]` is the position assigned to token `i` of sample `s`.
    pub fn new(samples: &[(&[u32], &GraphStructure)], perms: Option<&[Vec<usize>]>) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut lengths = Vec::new();
        let mut positions = Vec::new();
        let mut graphs = Vec::new();
        for (s, (toks, g)) in samples.iter().enumerate() {
            if g.n != toks.len() {
                return Err(LabError::Shape(format!(
                    "sample {s}: graph has {} nodes for {} tokens",
                    g.n,
                    toks.len()
                )));
            }
            tokens.extend(toks.iter().map(|&t| t as usize));
            lengths.push(toks.len());
            match perms {
                Some(p) => {
                    if p[s].len() != toks.len() {
                        return Err(LabError::Shape(format!("sample {s}: permutation length mismatch")));
                    }
                    positions.extend_from_slice(&p[s]);
                }
                None => positions.extend(0..toks.len()),
            }
            graphs.push(*g);
        }
        let graph = crate::adapters::pack_structures(&graphs);
        Ok(EncoderBatch { tokens, lengths, positions, graph })
    }
}

/// Packed decoder inputs: each target shifted right behind a start token.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBatch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl DecoderBatch {
    /// Teacher forcing: inputs `[pad, t_0 .. t_{n-2}]`, targets `t`.
    pub fn teacher_forced(targets: &[&[u32]]) -> Self {
        let mut b = DecoderBatch { inputs: Vec::new(), targets: Vec::new(), lengths: Vec::new() };
        for t in targets {
            b.inputs.push(PAD as usize);
            b.inputs.extend(t[..t.len().saturating_sub(1)].iter().map(|&x| x as usize));
            b.targets.extend(t.iter().map(|&x| x as usize));
            b.lengths.push(t.len());
        }
        b
    }

    /// Prefixes for incremental decoding; no targets.
    pub fn prefixes(prefixes: &[&[u32]]) -> Self {
        let mut b = DecoderBatch { inputs: Vec::new(), targets: Vec::new(), lengths: Vec::new() };
        for p in prefixes {
            b.inputs.push(PAD as usize);
            b.inputs.extend(p.iter().map(|&x| x as usize));
            b.lengths.push(p.len() + 1);
        }
        b
    }
}

pub struct EncoderOutput {
    pub out: Var,
    /// Per-layer outputs (after the adapter when present).
    pub hidden: Vec<Var>,
    /// Per-layer self-attention nodes; probabilities via `Graph::attention_probs`.
    pub attn: Vec<Var>,
}

fn ln<F: Float>(ctx: &mut Ctx<'_, F>, x: Var, p: &str) -> Result<Var> {
    let g = ctx.p(&format!("{p}.gamma"))?;
    let b = ctx.p(&format!("{p}.beta"))?;
    Ok(ctx.g.layer_norm(x, g, b, lit(BACKBONE_LN_EPS))?)
}

#[allow(clippy::too_many_arguments)]
fn attention_sublayer<F: Float>(
    ctx: &mut Ctx<'_, F>,
    p: &str,
    x: Var,
    memory: Option<Var>,
    bias: Option<Var>,
    layout: Arc<AttentionLayout>,
) -> Result<(Var, Var)> {
    let a = ln(ctx, x, &format!("{p}.ln"))?;
    let src = memory.unwrap_or(a);
    let (wq, wk, wv, wo) = (ctx.p(&format!("{p}.q"))?, ctx.p(&format!("{p}.k"))?, ctx.p(&format!("{p}.v"))?, ctx.p(&format!("{p}.o"))?);
    let q = ctx.g.matmul(a, wq)?;
    let k = ctx.g.matmul(src, wk)?;
    let v = ctx.g.matmul(src, wv)?;
    let att = ctx.g.attention(q, k, v, bias, layout)?;
    let o = ctx.g.matmul(att, wo)?;
    Ok((ctx.g.add(x, o)?, att))
}

fn ff_sublayer<F: Float>(ctx: &mut Ctx<'_, F>, p: &str, x: Var) -> Result<Var> {
    let a = ln(ctx, x, &format!("{p}.ln"))?;
    let (w1, b1, w2, b2) = (ctx.p(&format!("{p}.w1"))?, ctx.p(&format!("{p}.b1"))?, ctx.p(&format!("{p}.w2"))?, ctx.p(&format!("{p}.b2"))?);
    let h = ctx.g.linear(a, w1, Some(b1))?;
    let h = ctx.g.relu(h);
    let h = ctx.g.linear(h, w2, Some(b2))?;
    Ok(ctx.g.add(x, h)?)
}

fn bias_var<F: Float>(
    ctx: &mut Ctx<'_, F>,
    table: &str,
    rb: &RelativeBias,
    lengths: &[usize],
    positions: &[usize],
) -> Result<Var> {
    let mut idx = Vec::new();
    let mut start = 0;
    for &len in lengths {
        let pos = &positions[start..start + len];
        rb.push_indices(pos, pos, &mut idx);
        start += len;
    }
    let t = ctx.p(table)?;
    Ok(ctx.g.gather(t, Arc::new(idx))?)
}

/// Run the encoder. With `RpeMode::Off` no bias is added anywhere; `On` and
/// `Shuffle` bucket the offsets of `batch.positions`.
pub fn encode<F: Float>(ctx: &mut Ctx<'_, F>, spec: &ModelSpec, batch: &EncoderBatch, rpe: RpeMode) -> Result<EncoderOutput> {
    let embed = ctx.p("backbone.embed")?;
    let mut x = ctx.g.embedding(embed, &batch.tokens)?;
    let layout = Arc::new(AttentionLayout::self_attention(spec.n_heads, &batch.lengths, false));
    let bias = match rpe {
        RpeMode::Off => None,
        RpeMode::On | RpeMode::Shuffle => {
            Some(bias_var(ctx, "backbone.enc.rpe", &spec.encoder_bias(), &batch.lengths, &batch.positions)?)
        }
    };
    let adapter = match &spec.adapter {
        Some(a) => Some((a, GraphOperator::<F>::build(a, &batch.graph)?)),
        None => None,
    };
    let mut hidden = Vec::with_capacity(spec.n_enc_layers);
    let mut attn = Vec::with_capacity(spec.n_enc_layers);
    for l in 0..spec.n_enc_layers {
        let (y, a) = attention_sublayer(ctx, &format!("backbone.enc.{l}.attn"), x, None, bias, layout.clone())?;
        x = ff_sublayer(ctx, &format!("backbone.enc.{l}.ff"), y)?;
        if let Some((aspec, op)) = &adapter {
            let vars = AdapterVars::bind(ctx, &format!("adapter.enc.{l}"), aspec)?;
            x = adapter_forward(&mut ctx.g, x, &vars, aspec, op)?;
        }
        hidden.push(x);
        attn.push(a);
    }
    let out = if spec.n_enc_layers == 0 { x } else { ln(ctx, x, "backbone.enc.ln")? };
    Ok(EncoderOutput { out, hidden, attn })
}

/// Decoder logits `[rows, vocab]`. With `last_only`, only the final position
/// of every segment is projected.
pub fn decode_logits<F: Float>(
    ctx: &mut Ctx<'_, F>,
    spec: &ModelSpec,
    memory: Var,
    memory_lengths: &[usize],
    batch: &DecoderBatch,
    last_only: bool,
) -> Result<Var> {
    let embed = ctx.p("backbone.embed")?;
    let mut x = ctx.g.embedding(embed, &batch.inputs)?;
    let self_layout = Arc::new(AttentionLayout::self_attention(spec.n_heads, &batch.lengths, true));
    let cross_layout = Arc::new(AttentionLayout::cross_attention(spec.n_heads, &batch.lengths, memory_lengths));
    let positions: Vec<usize> = batch.lengths.iter().flat_map(|&n| 0..n).collect();
    let bias = bias_var(ctx, "backbone.dec.rpe", &spec.decoder_bias(), &batch.lengths, &positions)?;
    let adapter = spec.adapter.as_ref().map(decoder_adapter);
    for l in 0..spec.n_dec_layers {
        let (y, _) = attention_sublayer(ctx, &format!("backbone.dec.{l}.self"), x, None, Some(bias), self_layout.clone())?;
        let (y, _) = attention_sublayer(ctx, &format!("backbone.dec.{l}.cross"), y, Some(memory), None, cross_layout.clone())?;
        x = ff_sublayer(ctx, &format!("backbone.dec.{l}.ff"), y)?;
        if let Some(aspec) = &adapter {
            let vars = AdapterVars::bind(ctx, &format!("adapter.dec.{l}"), aspec)?;
            x = adapter_forward(&mut ctx.g, x, &vars, aspec, &GraphOperator::None)?;
        }
    }
    let mut h = ln(ctx, x, "backbone.dec.ln")?;
    if last_only {
        let mut rows = Vec::with_capacity(batch.lengths.len());
        let mut end = 0;
        for &n in &batch.lengths {
            end += n;
            rows.push(end - 1);
        }
        h = ctx.g.select_rows(h, &rows)?;
    }
    let logits = ctx.g.matmul_bt(h, embed)?;
    Ok(ctx.g.scale(logits, lit::<F>(1.0 / (spec.d_model as f64).sqrt())))
}

/// Checkpoint at `path` plus the spec as JSON next to it (`.json`).
pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save(path, &model.params.to_entries())?;
    let mut text = serde_json::to_string_pretty(&model.spec)?;
    text.push('\n');
    std::fs::write(path.with_extension("json"), text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let spec: ModelSpec = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    spec.validate()?;
    let params = ParamStore::from_entries(checkpoint::load(path)?);
    let model = Model { spec, params };
    let fresh = Model::<f32>::init(spec, 0)?;
    for (name, t) in fresh.params.iter() {
        let got = model.params.get(name)?;
        if got.shape() != t.shape() {
            return Err(LabError::Data(format!(
                "checkpoint tensor {name} has shape {:?}, spec expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    Ok(model)
}
