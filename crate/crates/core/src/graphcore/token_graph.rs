use serde_json::{json, Value};

use super::{linearize, LinearItem, NodeRef, ReifiedGraph};
use crate::error::{LabError, Result};

/// What `build_token_graph` needs from a tokenizer.
pub trait LabelTokenizer {
    /// Subword ids of a concept label.
    fn encode_label(&self, label: &str) -> Vec<u32>;
    /// Single id of an atomic role label, if the vocabulary has one.
    fn atomic_id(&self, role: &str) -> Option<u32>;
    fn eos_id(&self) -> u32;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Direct,
    Reverse,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Direct => "direct",
            EdgeKind::Reverse => "reverse",
        }
    }

    pub fn flipped(self) -> EdgeKind {
        match self {
            EdgeKind::Direct => EdgeKind::Reverse,
            EdgeKind::Reverse => EdgeKind::Direct,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

/// Source node of a token position and its subword index within the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    pub node: NodeRef,
    pub subword: usize,
}

/// Encoder input tokens together with the reified graph lifted onto them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGraph {
    pub tokens: Vec<u32>,
    /// `None` only for the appended end-of-sequence token.
    pub origin: Vec<Option<Origin>>,
    pub edges: Vec<TokenEdge>,
}

impl TokenGraph {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn structure(&self) -> GraphStructure {
        GraphStructure { n: self.n(), edges: self.edges.clone() }
    }

    pub fn to_json(&self) -> Value {
        let origin: Vec<Value> = self
            .origin
            .iter()
            .map(|o| match o {
                None => Value::Null,
                Some(Origin { node: NodeRef::Concept(c), subword }) => json!({"concept": c, "subword": subword}),
                Some(Origin { node: NodeRef::Relation(r), subword }) => json!({"relation": r, "subword": subword}),
            })
            .collect();
        let edges: Vec<Value> = self.edges.iter().map(|e| json!([e.src, e.dst, e.kind.name()])).collect();
        json!({"tokens": self.tokens, "origin": origin, "edges": edges})
    }
}

/// Lift the reified graph onto subword positions.
///
/// Tokens follow [`linearize`]; re-entrant revisits take no position of
/// their own since the revisited concept's subwords already carry the extra
/// relation edges. Every subword of a concept is linked to each relation
/// touching the concept with a direct edge along the AMR orientation and the
/// matching reverse edge.
pub fn build_token_graph(rg: &ReifiedGraph, tok: &impl LabelTokenizer, append_eos: bool) -> Result<TokenGraph> {
    let mut tokens = Vec::new();
    let mut origin = Vec::new();
    let mut concept_pos: Vec<Vec<usize>> = vec![Vec::new(); rg.concepts.len()];
    let mut relation_pos = vec![usize::MAX; rg.relations.len()];
    for item in linearize(rg) {
        match item {
            LinearItem::Concept(c) => {
                let ids = tok.encode_label(&rg.concepts[c].label);
                if ids.is_empty() {
                    return Err(LabError::Data(format!("concept '{}' encodes to no tokens", rg.concepts[c].label)));
                }
                for (s, id) in ids.into_iter().enumerate() {
                    concept_pos[c].push(tokens.len());
                    tokens.push(id);
                    origin.push(Some(Origin { node: NodeRef::Concept(c), subword: s }));
                }
            }
            LinearItem::Relation(r) => {
                let role = &rg.relations[r].role;
                let id = tok
                    .atomic_id(role)
                    .ok_or_else(|| LabError::Config(format!("role '{role}' is not an atomic vocabulary entry")))?;
                relation_pos[r] = tokens.len();
                tokens.push(id);
                origin.push(Some(Origin { node: NodeRef::Relation(r), subword: 0 }));
            }
            LinearItem::Reference(_) => {}
        }
    }
    let mut edges = Vec::new();
    for (r, rel) in rg.relations.iter().enumerate() {
        let rp = relation_pos[r];
        for &p in &concept_pos[rel.source] {
            edges.push(TokenEdge { src: p, dst: rp, kind: EdgeKind::Direct });
            edges.push(TokenEdge { src: rp, dst: p, kind: EdgeKind::Reverse });
        }
        for &p in &concept_pos[rel.target] {
            edges.push(TokenEdge { src: rp, dst: p, kind: EdgeKind::Direct });
            edges.push(TokenEdge { src: p, dst: rp, kind: EdgeKind::Reverse });
        }
    }
    if append_eos {
        tokens.push(tok.eos_id());
        origin.push(None);
    }
    Ok(TokenGraph { tokens, origin, edges })
}

/// Typed edge list over `n` positions, the form adapters consume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphStructure {
    pub n: usize,
    pub edges: Vec<TokenEdge>,
}

impl GraphStructure {
    pub fn edgeless(n: usize) -> Self {
        GraphStructure { n, edges: Vec::new() }
    }

    /// Symmetrized neighbour lists, sorted and without duplicates.
    pub fn undirected_neighbors(&self, self_loops: bool) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for e in &self.edges {
            if e.src != e.dst {
                nb[e.src].push(e.dst);
                nb[e.dst].push(e.src);
            }
        }
        for (u, list) in nb.iter_mut().enumerate() {
            if self_loops {
                list.push(u);
            }
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// `N_kind(u) = { v : (u, v, kind) is an edge }`, sorted and deduplicated.
    pub fn typed_neighbors(&self, kind: EdgeKind) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for e in self.edges.iter().filter(|e| e.kind == kind) {
            nb[e.src].push(e.dst);
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// Permute positions: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphStructure {
        GraphStructure {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| TokenEdge { src: perm[e.src], dst: perm[e.dst], kind: e.kind })
                .collect(),
        }
    }

    /// Every edge reversed in orientation, keeping its type.
    pub fn transposed(&self) -> GraphStructure {
        GraphStructure {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| TokenEdge { src: e.dst, dst: e.src, kind: e.kind })
                .collect(),
        }
    }

    /// Unordered off-diagonal pairs joined by at least one edge.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self
            .edges
            .iter()
            .filter(|e| e.src != e.dst)
            .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

pub const LINK_DIRECT: u8 = 1;
pub const LINK_REVERSE: u8 = 2;
pub const LINK_SELF: u8 = 4;

/// Dense `n × n` adjacency. Entries are bit sets of `LINK_*` flags; the
/// untyped view treats any non-zero entry as 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    pub n: usize,
    pub typed: bool,
    pub self_loops: bool,
    entries: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.n + j]
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != 0
    }

    /// 0/1 matrix in row-major order.
    pub fn binary(&self) -> Vec<Vec<u8>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.linked(i, j) as u8).collect()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.linked(i, j) == self.linked(j, i)))
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = (0..self.n)
            .map(|i| {
                Value::Array(
                    (0..self.n)
                        .map(|j| {
                            let e = self.get(i, j);
                            if !self.typed {
                                return json!((e != 0) as u8);
                            }
                            let mut names = Vec::new();
                            if e & LINK_DIRECT != 0 {
                                names.push("direct");
                            }
                            if e & LINK_REVERSE != 0 {
                                names.push("reverse");
                            }
                            if e & LINK_SELF != 0 {
                                names.push("self");
                            }
                            json!(names.join("+"))
                        })
                        .collect(),
                )
            })
            .collect();
        json!({"n": self.n, "typed": self.typed, "self_loops": self.self_loops, "entries": rows})
    }
}

/// Adjacency of a token graph. The untyped view is symmetrized.
pub fn adjacency(g: &GraphStructure, typed: bool, self_loops: bool) -> AdjacencyMatrix {
    let n = g.n;
    let mut entries = vec![0u8; n * n];
    for e in &g.edges {
        let flag = match e.kind {
            EdgeKind::Direct => LINK_DIRECT,
            EdgeKind::Reverse => LINK_REVERSE,
        };
        entries[e.src * n + e.dst] |= flag;
        if !typed {
            entries[e.dst * n + e.src] |= flag;
        }
    }
    if self_loops {
        for i in 0..n {
            entries[i * n + i] |= LINK_SELF;
        }
    }
    AdjacencyMatrix { n, typed, self_loops, entries }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_penman, reify};
    use super::*;
    use std::collections::HashMap;

    /// Splits labels by a fixed table, one token per unknown label.
    struct TableTok(HashMap<&'static str, usize>);

    impl LabelTokenizer for TableTok {
        fn encode_label(&self, label: &str) -> Vec<u32> {
            let k = self.0.get(label).copied().unwrap_or(1);
            (0..k as u32).map(|i| 100 + i).collect()
        }
        fn atomic_id(&self, role: &str) -> Option<u32> {
            role.starts_with(":op").then_some(50).or_else(|| role.starts_with(":ARG").then_some(51))
        }
        fn eos_id(&self) -> u32 {
            1
        }
    }

    fn chain(a_split: usize) -> TokenGraph {
        let rg = reify(&parse_penman("(a / aa :op1 (b / bb))").unwrap());
        build_token_graph(&rg, &TableTok(HashMap::from([("aa", a_split)])), false).unwrap()
    }

    #[test]
    fn three_token_chain() {
        let tg = chain(1);
        assert_eq!(tg.n(), 3);
        let mut direct: Vec<_> =
            tg.edges.iter().filter(|e| e.kind == EdgeKind::Direct).map(|e| (e.src, e.dst)).collect();
        direct.sort();
        assert_eq!(direct, [(0, 1), (1, 2)]);
        assert_eq!(tg.edges.len(), 4);
    }

    #[test]
    fn split_concept_links_every_subword() {
        let tg = chain(2);
        assert_eq!(tg.n(), 4);
        assert!(tg.edges.contains(&TokenEdge { src: 0, dst: 2, kind: EdgeKind::Direct }));
        assert!(tg.edges.contains(&TokenEdge { src: 1, dst: 2, kind: EdgeKind::Direct }));
        assert!(!tg.edges.iter().any(|e| (e.src, e.dst) == (0, 1) || (e.src, e.dst) == (1, 0)));
    }

    #[test]
    fn figure_sentence_has_eight_nodes() {
        let rg = reify(&parse_penman("(a / and :op1 (o / occidentalism) :op2 (o2 / orientalism))").unwrap());
        let tok = TableTok(HashMap::from([("occidentalism", 2), ("orientalism", 2)]));
        let tg = build_token_graph(&rg, &tok, true).unwrap();
        assert_eq!(tg.n(), 8);
        assert_eq!(tg.origin[7], None);
        assert!(tg.edges.iter().all(|e| e.src != 7 && e.dst != 7));
    }

    #[test]
    fn missing_atomic_role_is_config_error() {
        let rg = reify(&parse_penman("(a / aa :mod (b / bb))").unwrap());
        let err = build_token_graph(&rg, &TableTok(HashMap::new()), false).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn adjacency_views() {
        let s = chain(1).structure();
        assert_eq!(adjacency(&s, false, true).binary(), [[1, 1, 0], [1, 1, 1], [0, 1, 1]]);
        let typed = adjacency(&s, true, false);
        assert_eq!(typed.get(0, 1), LINK_DIRECT);
        assert_eq!(typed.get(1, 0), LINK_REVERSE);
        assert_eq!(typed.get(1, 2), LINK_DIRECT);
        assert_eq!(typed.get(2, 1), LINK_REVERSE);
        assert_eq!(typed.get(0, 2), 0);
        assert_eq!(adjacency(&GraphStructure::edgeless(1), false, true).binary(), [[1]]);
    }

    #[test]
    fn json_export_shape() {
        let v = chain(1).to_json();
        assert_eq!(v["tokens"].as_array().unwrap().len(), 3);
        assert_eq!(v["edges"][0], json!([0, 1, "direct"]));
    }
}
