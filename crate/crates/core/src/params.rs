//! Named parameter storage and per-step binding onto a tape.
//!
//! Names are dotted paths. Everything under `backbone.` belongs to the
//! pretrained transformer, everything under `adapter.` to the adapters, so
//! freeze checks and trainable-parameter counts reduce to prefix filters.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use tensorkit::{lit, Float, Gradients, Graph, Tensor, Var};

use crate::error::{LabError, Result};

pub const BACKBONE: &str = "backbone.";
pub const ADAPTER: &str = "adapter.";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

impl Init {
    pub fn sample<F: Float>(self, shape: &[usize], rng: &mut impl Rng) -> Tensor<F> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, F::one()),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(shape, |_| lit(dist.sample(rng)))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F: Float> {
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries.get(name).ok_or_else(|| LabError::Config(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.entries.get_mut(name).ok_or_else(|| LabError::Config(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar count over names starting with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values of every tensor
    /// whose name starts with `prefix`, in name order.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.entries.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_entries(&self) -> Vec<(String, Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t.clone())).collect()
    }

    pub fn from_entries(entries: Vec<(String, Tensor<F>)>) -> Self {
        ParamStore { entries: entries.into_iter().collect() }
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }

    /// Drop every entry under `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|n, _| !n.starts_with(prefix));
    }

    pub fn retain_prefix(&mut self, prefix: &str) {
        self.entries.retain(|n, _| n.starts_with(prefix));
    }
}

/// One forward/backward pass: a fresh tape plus lazily bound parameters.
pub struct Ctx<'a, F: Float> {
    pub g: Graph<F>,
    store: &'a ParamStore<F>,
    bound: HashMap<String, Var>,
    order: Vec<String>,
    trainable: &'a dyn Fn(&str) -> bool,
}

impl<'a, F: Float> Ctx<'a, F> {
    pub fn new(store: &'a ParamStore<F>, trainable: &'a dyn Fn(&str) -> bool) -> Self {
        Ctx { g: Graph::new(), store, bound: HashMap::new(), order: Vec::new(), trainable }
    }

    /// Tape leaf for the named parameter, created on first use.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?.clone();
        let v = self.g.leaf(t, (self.trainable)(name));
        self.bound.insert(name.to_string(), v);
        self.order.push(name.to_string());
        Ok(v)
    }

    /// Bound trainable parameters with their gradients, in binding order.
    pub fn gradients(&self, grads: &mut Gradients<F>) -> Vec<(String, Tensor<F>)> {
        self.order
            .iter()
            .filter(|n| (self.trainable)(n))
            .filter_map(|n| grads.take(self.bound[n]).map(|t| (n.clone(), t)))
            .collect()
    }
}

pub fn frozen(_: &str) -> bool {
    false
}

pub fn everything(_: &str) -> bool {
    true
}

pub fn adapters_only(name: &str) -> bool {
    name.starts_with(ADAPTER)
}

pub fn backbone_only(name: &str) -> bool {
    name.starts_with(BACKBONE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_tracks_prefix_only() {
        let mut s = ParamStore::<f32>::new();
        s.insert("backbone.a", Tensor::full(&[2], 1.0));
        s.insert("adapter.b", Tensor::full(&[3], 2.0));
        let before = s.checksum(BACKBONE);
        s.get_mut("adapter.b").unwrap().data_mut()[0] = 5.0;
        assert_eq!(before, s.checksum(BACKBONE));
        s.get_mut("backbone.a").unwrap().data_mut()[1] = 0.5;
        assert_ne!(before, s.checksum(BACKBONE));
        assert_eq!(s.count(ADAPTER), 3);
    }

    #[test]
    fn ctx_binds_once_and_respects_trainability() {
        let mut s = ParamStore::<f64>::new();
        s.insert("backbone.w", Tensor::full(&[1], 3.0));
        s.insert("adapter.w", Tensor::full(&[1], 2.0));
        let mut ctx = Ctx::new(&s, &adapters_only);
        let a = ctx.p("adapter.w").unwrap();
        let b = ctx.p("backbone.w").unwrap();
        assert_eq!(ctx.p("adapter.w").unwrap(), a);
        let y = ctx.g.mul(a, b).unwrap();
        let loss = ctx.g.sum(y);
        let mut grads = ctx.g.backward(loss).unwrap();
        let got = ctx.gradients(&mut grads);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, "adapter.w");
        assert_eq!(got[0].1.data(), &[3.0]);
    }
}
