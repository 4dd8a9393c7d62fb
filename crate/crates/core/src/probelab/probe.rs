use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dump::HiddenDump;
use super::mix_seed;
use crate::error::{LabError, Result};
use crate::graphcore::TokenGraph;

/// Two token positions of one sample with their connectivity label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePair {
    pub sample: usize,
    pub u: usize,
    pub v: usize,
    pub connected: bool,
}

/// `k` connected and `k` unconnected unordered pairs drawn uniformly without
/// replacement, or `None` when either class has fewer than `k` candidates.
///
/// Only positions that belong to a graph node take part, so a trailing eos
/// is never paired. Connectivity is the untyped adjacency without
/// self-loops; `u < v` in every pair.
pub fn sample_pairs(tg: &TokenGraph, sample: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<ProbePair>> {
    let nodes: Vec<usize> = (0..tg.n()).filter(|&i| tg.origin[i].is_some()).collect();
    let positives = tg.structure().undirected_pairs();
    let mut negatives = Vec::new();
    for (a, &u) in nodes.iter().enumerate() {
        for &v in &nodes[a + 1..] {
            if positives.binary_search(&(u, v)).is_err() {
                negatives.push((u, v));
            }
        }
    }
    if k == 0 || positives.len() < k || negatives.len() < k {
        return None;
    }
    let mut out = Vec::with_capacity(2 * k);
    for (pool, connected) in [(&positives, true), (&negatives, false)] {
        let mut picks = index::sample(rng, pool.len(), k).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| ProbePair { sample, u: pool[i].0, v: pool[i].1, connected }));
    }
    Some(out)
}

/// Pairs for every graph with an independent stream per sample, plus the
/// number of discarded samples.
pub fn build_pairs(graphs: &[TokenGraph], k: usize, seed: u64) -> (Vec<ProbePair>, usize) {
    let mut pairs = Vec::new();
    let mut discarded = 0;
    for (s, tg) in graphs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, s as u64]));
        match sample_pairs(tg, s, k, &mut rng) {
            Some(p) => pairs.extend(p),
            None => discarded += 1,
        }
    }
    (pairs, discarded)
}

/// `[h_u ; h_v]` at `layer` (1-based) for every pair.
pub fn pair_features(dump: &HiddenDump, layer: usize, pairs: &[ProbePair]) -> Result<Vec<Vec<f64>>> {
    if layer == 0 || layer > dump.n_layers() {
        return Err(LabError::Config(format!("layer {layer} outside 1..={}", dump.n_layers())));
    }
    pairs
        .iter()
        .map(|p| {
            let h = dump
                .samples
                .get(p.sample)
                .ok_or_else(|| LabError::Data(format!("pair refers to missing sample {}", p.sample)))?;
            let t = &h.layers[layer - 1];
            if p.u >= t.rows() || p.v >= t.rows() {
                return Err(LabError::Data(format!("pair ({}, {}) outside sample {}", p.u, p.v, h.id)));
            }
            Ok(t.row(p.u).iter().chain(t.row(p.v)).map(|&x| x as f64).collect())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub max_epochs: usize,
    /// Stop once the loss changes by less than this between epochs.
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { max_epochs: 500, tolerance: 1e-6 }
    }
}

/// Logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub epochs: usize,
    pub loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(1e-15, 1.0 - 1e-15)
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn mean_loss(z: &[Vec<f64>], y: &[bool], w: &[f64], b: f64) -> f64 {
    let mut l = 0.0;
    for (x, &t) in z.iter().zip(y) {
        let s = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        // log(1 + exp(-s)) for positives, log(1 + exp(s)) for negatives.
        let m = if t { -s } else { s };
        l += if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
    }
    l / z.len() as f64
}

/// Largest eigenvalue of `XᵀX / n` for the bias-augmented design.
fn curvature(z: &[Vec<f64>]) -> f64 {
    let d = z[0].len() + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d];
        for x in z {
            let dot = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d - 1];
            for (n, a) in next.iter_mut().zip(x) {
                *n += dot * a;
            }
            next[d - 1] += dot;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt() / z.len() as f64;
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        let s = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = next.into_iter().map(|a| a / s).collect();
    }
    lambda.max(1e-12)
}

/// Full-batch gradient descent with step `1 / L`, `L` the curvature bound
/// of the mean logistic loss.
pub fn train_probe(x: &[Vec<f64>], y: &[bool], cfg: ProbeConfig) -> Result<ProbeModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(LabError::Data("probe needs one label per feature row".into()));
    }
    if y.iter().all(|&t| t) || y.iter().all(|&t| !t) {
        return Err(LabError::Data("probe training set holds a single class".into()));
    }
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in x {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &mean, &scale)).collect();
    let step = 4.0 / curvature(&z);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut loss = mean_loss(&z, y, &w, b);
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &t) in z.iter().zip(y) {
            let s = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let e = sigmoid(s) - if t { 1.0 } else { 0.0 };
            for (g, a) in gw.iter_mut().zip(r) {
                *g += e * a / n;
            }
            gb += e / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
        epochs += 1;
        let next = mean_loss(&z, y, &w, b);
        let done = (loss - next).abs() < cfg.tolerance;
        loss = next;
        if done {
            break;
        }
    }
    Ok(ProbeModel { mean, scale, w, b, epochs, loss })
}

impl ProbeModel {
    /// Probability that the pair is connected.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = standardize(x, &self.mean, &self.scale);
        sigmoid(z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x.iter().zip(y).filter(|(r, &t)| (self.predict(r) >= 0.5) == t).count();
        hits as f64 / x.len() as f64
    }
}

pub fn eval_probe(probe: &ProbeModel, pairs: &[ProbePair], dump: &HiddenDump, layer: usize) -> Result<f64> {
    let x = pair_features(dump, layer, pairs)?;
    let y: Vec<bool> = pairs.iter().map(|p| p.connected).collect();
    Ok(probe.accuracy(&x, &y))
}

/// One row per layer: (layer, train accuracy, test accuracy).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub layer: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Fit on `train` pairs of `train_dump` and score on `test` pairs of
/// `test_dump` at each listed layer. With `shuffle_seed`, training labels
/// are permuted first (permutation null).
pub fn link_probe(
    train_dump: &HiddenDump,
    train: &[ProbePair],
    test_dump: &HiddenDump,
    test: &[ProbePair],
    layers: &[usize],
    cfg: ProbeConfig,
    shuffle_seed: Option<u64>,
) -> Result<Vec<ProbeRow>> {
    let mut y: Vec<bool> = train.iter().map(|p| p.connected).collect();
    if let Some(seed) = shuffle_seed {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let yt: Vec<bool> = test.iter().map(|p| p.connected).collect();
    layers
        .iter()
        .map(|&layer| {
            let x = pair_features(train_dump, layer, train)?;
            let probe = train_probe(&x, &y, cfg)?;
            let xt = pair_features(test_dump, layer, test)?;
            Ok(ProbeRow { layer, train_acc: probe.accuracy(&x, &y), test_acc: probe.accuracy(&xt, &yt) })
        })
        .collect()
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = String::from("layer,train_acc,test_acc\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.layer, r.train_acc, r.test_acc));
    }
    s
}
