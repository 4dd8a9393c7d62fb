//! Tape-free decoder stepping with cached keys and values, used for search.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use tensorkit::{gemm, MatRef, Tensor};

use super::model::{decoder_adapter, encode, EncoderBatch, Model, BACKBONE_LN_EPS};
use super::{RelativeBias, RpeMode, StepScorer};
use crate::adapters::{Activation, LN_EPS as ADAPTER_LN_EPS};
use crate::error::{LabError, Result};
use crate::params::{frozen, Ctx};
use crate::subtok::PAD;

fn matmul(x: &[f32], rows: usize, w: &Tensor<f32>) -> Vec<f32> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![0.0; rows * n];
    gemm(1.0, x, MatRef::dense(0, rows, k), w.data(), MatRef::dense(0, k, n), 0.0, &mut out, MatRef::dense(0, rows, n));
    out
}

fn add_bias(x: &mut [f32], b: &Tensor<f32>) {
    let n = b.len();
    for row in x.chunks_mut(n) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
}

fn layer_norm(x: &[f32], d: usize, gamma: &Tensor<f32>, beta: &Tensor<f32>, eps: f64) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + eps as f32).sqrt();
        for j in 0..d {
            o[j] = (row[j] - mean) * is * gamma.data()[j] + beta.data()[j];
        }
    }
    out
}

fn add_into(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Single-query multi-head attention over `keys`/`values` `[t, d]`.
fn attend(q: &[f32], keys: &[f32], values: &[f32], heads: usize, bias: impl Fn(usize, usize) -> f32, out: &mut [f32]) {
    let d = q.len();
    let dh = d / heads;
    let t = keys.len() / d;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut scores = vec![0.0f32; t];
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        for (j, s) in scores.iter_mut().enumerate() {
            let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
            *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale + bias(h, j);
        }
        let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        let oh = &mut out[h * dh..(h + 1) * dh];
        oh.fill(0.0);
        for (j, s) in scores.iter().enumerate() {
            let p = s / z;
            let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
            for (o, v) in oh.iter_mut().zip(vh) {
                *o += p * v;
            }
        }
    }
}

/// Self-attention keys and values of all positions fed so far, per layer.
struct DecState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

/// Decoder log-probabilities on top of fixed encoder states, computed one
/// position at a time with cached self-attention keys and values.
pub struct ModelScorer<'a> {
    pub model: &'a Model<f32>,
    /// Final encoder states per sample, `[len, d_model]`.
    pub memories: Vec<Tensor<f32>>,
    /// Cross-attention keys and values per sample and layer.
    cross: Vec<Vec<(Vec<f32>, Vec<f32>)>>,
    cache: RefCell<HashMap<(usize, Vec<u32>), Rc<DecState>>>,
}

impl<'a> ModelScorer<'a> {
    /// Encode every batch once and keep the final states per sample.
    pub fn new(model: &'a Model<f32>, batches: &[EncoderBatch], rpe: RpeMode) -> Result<Self> {
        let spec = &model.spec;
        let d = spec.d_model;
        let mut memories = Vec::new();
        for b in batches {
            let mut ctx = Ctx::new(&model.params, &frozen);
            let enc = encode(&mut ctx, spec, b, rpe)?;
            let out = ctx.g.value(enc.out);
            let mut start = 0;
            for &n in &b.lengths {
                memories.push(Tensor::new(&[n, d], out.data()[start * d..(start + n) * d].to_vec())?);
                start += n;
            }
        }
        let p = &model.params;
        let mut cross = Vec::with_capacity(memories.len());
        for m in &memories {
            let mut layers = Vec::with_capacity(spec.n_dec_layers);
            for l in 0..spec.n_dec_layers {
                let k = matmul(m.data(), m.rows(), p.get(&format!("backbone.dec.{l}.cross.k"))?);
                let v = matmul(m.data(), m.rows(), p.get(&format!("backbone.dec.{l}.cross.v"))?);
                layers.push((k, v));
            }
            cross.push(layers);
        }
        Ok(ModelScorer { model, memories, cross, cache: RefCell::new(HashMap::new()) })
    }

    /// Feed one token per row on top of the given parent states; returns
    /// the new states and the logits `[rows, vocab]`.
    fn step(&self, rows: &[(usize, Option<Rc<DecState>>, u32)]) -> Result<(Vec<DecState>, Vec<f32>)> {
        let spec = &self.model.spec;
        let p = &self.model.params;
        let (d, r) = (spec.d_model, rows.len());
        let bias: RelativeBias = spec.decoder_bias();
        let table = p.get("backbone.dec.rpe")?.data();
        let embed = p.get("backbone.embed")?;
        let mut x = Vec::with_capacity(r * d);
        for &(_, _, tok) in rows {
            x.extend_from_slice(embed.row(tok as usize));
        }
        let mut states: Vec<DecState> = rows
            .iter()
            .map(|(_, parent, _)| match parent {
                Some(s) => DecState { keys: s.keys.clone(), values: s.values.clone() },
                None => DecState { keys: vec![Vec::new(); spec.n_dec_layers], values: vec![Vec::new(); spec.n_dec_layers] },
            })
            .collect();
        let adapter = spec.adapter.as_ref().map(decoder_adapter);
        let mut att = vec![0.0f32; r * d];
        for l in 0..spec.n_dec_layers {
            let w = |n: &str| p.get(&format!("backbone.dec.{l}.{n}"));
            let a = layer_norm(&x, d, w("self.ln.gamma")?, w("self.ln.beta")?, BACKBONE_LN_EPS);
            let q = matmul(&a, r, w("self.q")?);
            let k = matmul(&a, r, w("self.k")?);
            let v = matmul(&a, r, w("self.v")?);
            for (i, st) in states.iter_mut().enumerate() {
                st.keys[l].extend_from_slice(&k[i * d..(i + 1) * d]);
                st.values[l].extend_from_slice(&v[i * d..(i + 1) * d]);
                let t = st.keys[l].len() / d - 1;
                let b = |h: usize, j: usize| table[h * bias.buckets + bias.bucket(j as i64 - t as i64)];
                attend(&q[i * d..(i + 1) * d], &st.keys[l], &st.values[l], spec.n_heads, b, &mut att[i * d..(i + 1) * d]);
            }
            add_into(&mut x, &matmul(&att, r, w("self.o")?));

            let a = layer_norm(&x, d, w("cross.ln.gamma")?, w("cross.ln.beta")?, BACKBONE_LN_EPS);
            let q = matmul(&a, r, w("cross.q")?);
            for (i, &(s, _, _)) in rows.iter().enumerate() {
                let (mk, mv) = &self.cross[s][l];
                attend(&q[i * d..(i + 1) * d], mk, mv, spec.n_heads, |_, _| 0.0, &mut att[i * d..(i + 1) * d]);
            }
            add_into(&mut x, &matmul(&att, r, w("cross.o")?));

            let a = layer_norm(&x, d, w("ff.ln.gamma")?, w("ff.ln.beta")?, BACKBONE_LN_EPS);
            let mut h = matmul(&a, r, w("ff.w1")?);
            add_bias(&mut h, w("ff.b1")?);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut y = matmul(&h, r, w("ff.w2")?);
            add_bias(&mut y, w("ff.b2")?);
            add_into(&mut x, &y);

            if let Some(aspec) = &adapter {
                let w = |n: &str| p.get(&format!("adapter.dec.{l}.{n}"));
                let a = layer_norm(&x, d, w("ln.gamma")?, w("ln.beta")?, ADAPTER_LN_EPS);
                let mut z = matmul(&a, r, w("down.w")?);
                add_bias(&mut z, w("down.b")?);
                if aspec.activation == Activation::Relu {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                let mut y = matmul(&z, r, w("up.w")?);
                add_bias(&mut y, w("up.b")?);
                add_into(&mut x, &y);
            }
        }
        let h = layer_norm(&x, d, p.get("backbone.dec.ln.gamma")?, p.get("backbone.dec.ln.beta")?, BACKBONE_LN_EPS);
        let vocab = spec.vocab_size;
        let mut logits = vec![0.0f32; r * vocab];
        gemm(
            1.0 / (d as f32).sqrt(),
            &h,
            MatRef::dense(0, r, d),
            embed.data(),
            MatRef::dense(0, vocab, d).transposed(),
            0.0,
            &mut logits,
            MatRef::dense(0, r, vocab),
        );
        Ok((states, logits))
    }

    /// State after feeding `[pad] + prefix`, from the cache or recomputed.
    fn state_for(&self, s: usize, prefix: &[u32]) -> Result<Rc<DecState>> {
        if let Some(st) = self.cache.borrow().get(&(s, prefix.to_vec())) {
            return Ok(st.clone());
        }
        let mut state: Option<Rc<DecState>> = None;
        for i in 0..=prefix.len() {
            let tok = if i == 0 { PAD } else { prefix[i - 1] };
            let (mut st, _) = self.step(&[(s, state.take(), tok)])?;
            state = Some(Rc::new(st.swap_remove(0)));
        }
        Ok(state.expect("at least one step"))
    }
}

fn log_softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = row.iter().map(|&x| ((x - max) as f64).exp()).sum::<f64>().ln() as f32 + max;
    row.iter().map(|&x| x - lse).collect()
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.spec.vocab_size
    }

    /// Requests whose prefix minus its last token was scored in the previous
    /// call reuse that call's cached state.
    fn log_probs(&self, requests: &[(usize, &[u32])]) -> Result<Vec<Vec<f32>>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let mut rows = Vec::with_capacity(requests.len());
        for &(s, prefix) in requests {
            if s >= self.memories.len() {
                return Err(LabError::Shape(format!("sample {s} out of range")));
            }
            rows.push(match prefix.split_last() {
                None => (s, None, PAD),
                Some((&last, parent)) => (s, Some(self.state_for(s, parent)?), last),
            });
        }
        let (states, logits) = self.step(&rows)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numeric("non-finite decoder logits".into()));
        }
        let mut cache = HashMap::with_capacity(requests.len());
        for (&(s, prefix), st) in requests.iter().zip(states) {
            cache.insert((s, prefix.to_vec()), Rc::new(st));
        }
        *self.cache.borrow_mut() = cache;
        let vocab = self.model.spec.vocab_size;
        Ok(logits.chunks(vocab).map(log_softmax).collect())
    }
}
