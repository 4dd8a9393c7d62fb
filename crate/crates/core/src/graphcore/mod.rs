//! AMR graphs, reification and the subword token graph consumed by the
//! structural adapters.
//!
//! The pipeline is `parse_penman -> reify -> linearize -> build_token_graph`.
//! Relations become nodes of their own, so the reified graph is bipartite
//! between concepts and relations; every subword of a concept label is wired
//! independently to each relation node touching that concept.

mod penman;
mod token_graph;

pub use penman::{parse_penman, serialize};
pub use token_graph::{
    adjacency, build_token_graph, AdjacencyMatrix, EdgeKind, GraphStructure, LabelTokenizer, Origin, TokenEdge,
    TokenGraph, LINK_DIRECT, LINK_REVERSE, LINK_SELF,
};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrNode {
    pub var: String,
    pub concept: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrEdge {
    pub source: usize,
    pub role: String,
    pub target: usize,
}

/// Concept/role graph as written in PENMAN, before reification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrGraph {
    pub nodes: Vec<AmrNode>,
    pub edges: Vec<AmrEdge>,
    pub root: usize,
}

impl AmrGraph {
    pub fn degree(&self, n: usize) -> usize {
        self.edges.iter().filter(|e| e.source == n || e.target == n).count()
    }

    /// Check the structural invariants: unique variables, valid endpoints,
    /// role labels starting with ':' and undirected connectivity from the root.
    pub fn validate(&self) -> Result<()> {
        let mut vars = std::collections::HashSet::new();
        for n in &self.nodes {
            if !vars.insert(n.var.as_str()) {
                return Err(LabError::Data(format!("duplicate node id '{}'", n.var)));
            }
            if n.concept.is_empty() {
                return Err(LabError::Data(format!("node '{}' has an empty concept", n.var)));
            }
        }
        if self.root >= self.nodes.len() {
            return Err(LabError::Data("root out of range".into()));
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if e.source >= self.nodes.len() || e.target >= self.nodes.len() {
                return Err(LabError::Data(format!("edge {} has a dangling endpoint", e.role)));
            }
            if !e.role.starts_with(':') {
                return Err(LabError::Data(format!("role '{}' must start with ':'", e.role)));
            }
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|&s| !s) {
            return Err(LabError::Data(format!("node '{}' is not connected to the root", self.nodes[lost].var)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptNode {
    pub var: String,
    pub label: String,
}

/// A reified AMR edge: a node carrying the role label, linked from its
/// source concept and to its target concept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationNode {
    pub role: String,
    pub source: usize,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Concept(usize),
    Relation(usize),
}

/// Bipartite concept/relation graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReifiedGraph {
    pub concepts: Vec<ConceptNode>,
    pub relations: Vec<RelationNode>,
    pub root: usize,
}

impl ReifiedGraph {
    /// Directed edges following the original AMR orientation:
    /// `source concept -> relation` and `relation -> target concept`.
    pub fn edges(&self) -> Vec<(NodeRef, NodeRef)> {
        self.relations
            .iter()
            .enumerate()
            .flat_map(|(r, rel)| {
                [
                    (NodeRef::Concept(rel.source), NodeRef::Relation(r)),
                    (NodeRef::Relation(r), NodeRef::Concept(rel.target)),
                ]
            })
            .collect()
    }

    /// Two-colour check: no edge joins two nodes of the same kind.
    pub fn is_bipartite(&self) -> bool {
        self.edges().iter().all(|(a, b)| {
            matches!((a, b), (NodeRef::Concept(_), NodeRef::Relation(_)) | (NodeRef::Relation(_), NodeRef::Concept(_)))
        })
    }

    pub fn label(&self, node: NodeRef) -> &str {
        match node {
            NodeRef::Concept(c) => &self.concepts[c].label,
            NodeRef::Relation(r) => &self.relations[r].role,
        }
    }
}

/// One relation node per AMR edge.
pub fn reify(g: &AmrGraph) -> ReifiedGraph {
    ReifiedGraph {
        concepts: g
            .nodes
            .iter()
            .map(|n| ConceptNode { var: n.var.clone(), label: n.concept.clone() })
            .collect(),
        relations: g
            .edges
            .iter()
            .map(|e| RelationNode { role: e.role.clone(), source: e.source, target: e.target })
            .collect(),
        root: g.root,
    }
}

/// Item of a linearized graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearItem {
    Concept(usize),
    Relation(usize),
    /// Revisit of an already emitted concept, written as its variable.
    Reference(usize),
}

/// Depth-first pre-order from the root, relations in source order.
///
/// Concepts not reachable along edge directions (only possible for graphs
/// built by hand) are visited afterwards in id order.
pub fn linearize(rg: &ReifiedGraph) -> Vec<LinearItem> {
    let mut out = Vec::with_capacity(rg.concepts.len() + 2 * rg.relations.len());
    let mut seen = vec![false; rg.concepts.len()];
    let mut outgoing = vec![Vec::new(); rg.concepts.len()];
    for (r, rel) in rg.relations.iter().enumerate() {
        outgoing[rel.source].push(r);
    }
    fn visit(c: usize, rg: &ReifiedGraph, outgoing: &[Vec<usize>], seen: &mut [bool], out: &mut Vec<LinearItem>) {
        seen[c] = true;
        out.push(LinearItem::Concept(c));
        for &r in &outgoing[c] {
            out.push(LinearItem::Relation(r));
            let t = rg.relations[r].target;
            if seen[t] {
                out.push(LinearItem::Reference(t));
            } else {
                visit(t, rg, outgoing, seen, out);
            }
        }
    }
    if !rg.concepts.is_empty() {
        visit(rg.root, rg, &outgoing, &mut seen, &mut out);
    }
    for c in 0..rg.concepts.len() {
        if !seen[c] {
            visit(c, rg, &outgoing, &mut seen, &mut out);
        }
    }
    out
}

/// Labels of [`linearize`]: concept labels, role labels and variables for
/// re-entrant revisits.
pub fn linearize_labels(rg: &ReifiedGraph) -> Vec<String> {
    linearize(rg)
        .into_iter()
        .map(|item| match item {
            LinearItem::Concept(c) => rg.concepts[c].label.clone(),
            LinearItem::Relation(r) => rg.relations[r].role.clone(),
            LinearItem::Reference(c) => rg.concepts[c].var.clone(),
        })
        .collect()
}
