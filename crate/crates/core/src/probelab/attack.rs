use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graphcore::{EdgeKind, GraphStructure, TokenEdge};

/// Deterministic 64-bit mix of several seed components.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackedGraph {
    pub structure: GraphStructure,
    /// Fake edges that could not be placed for lack of non-edges.
    pub deficit: usize,
}

/// Replace every true link with a random non-link.
///
/// The true graph has `m` unordered off-diagonal pairs; up to `m` pairs are
/// drawn uniformly from the pairs it does not link. Each fake pair is
/// emitted as a direct edge plus its reverse, oriented by a coin flip.
pub fn graph_attack(g: &GraphStructure, seed: u64) -> AttackedGraph {
    let truth = g.undirected_pairs();
    let mut candidates = Vec::new();
    for u in 0..g.n {
        for v in u + 1..g.n {
            if truth.binary_search(&(u, v)).is_err() {
                candidates.push((u, v));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placed = truth.len().min(candidates.len());
    let mut picks = index::sample(&mut rng, candidates.len(), placed).into_vec();
    picks.sort_unstable();
    let mut edges = Vec::with_capacity(2 * placed);
    for i in picks {
        let (u, v) = candidates[i];
        let (a, b) = if rng.gen_bool(0.5) { (u, v) } else { (v, u) };
        edges.push(TokenEdge { src: a, dst: b, kind: EdgeKind::Direct });
        edges.push(TokenEdge { src: b, dst: a, kind: EdgeKind::Reverse });
    }
    AttackedGraph { structure: GraphStructure { n: g.n, edges }, deficit: truth.len() - placed }
}

/// Uniform random permutation of `0..n`, fixed per (seed, epoch, sample).
pub fn position_shuffle(n: usize, epoch: u64, sample: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, sample]));
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> GraphStructure {
        GraphStructure {
            n: 3,
            edges: vec![
                TokenEdge { src: 0, dst: 1, kind: EdgeKind::Direct },
                TokenEdge { src: 1, dst: 0, kind: EdgeKind::Reverse },
                TokenEdge { src: 1, dst: 2, kind: EdgeKind::Direct },
                TokenEdge { src: 2, dst: 1, kind: EdgeKind::Reverse },
            ],
        }
    }

    #[test]
    fn chain_gets_the_only_non_edge() {
        for seed in 0..20 {
            let a = graph_attack(&chain3(), seed);
            assert_eq!(a.structure.undirected_pairs(), vec![(0, 2)]);
            assert_eq!(a.deficit, 1);
        }
    }

    #[test]
    fn complete_graph_places_nothing() {
        let mut edges = Vec::new();
        for u in 0..4 {
            for v in 0..4 {
                if u != v {
                    edges.push(TokenEdge { src: u, dst: v, kind: EdgeKind::Direct });
                }
            }
        }
        let a = graph_attack(&GraphStructure { n: 4, edges }, 3);
        assert!(a.structure.edges.is_empty());
        assert_eq!(a.deficit, 6);
    }

    #[test]
    fn shuffle_basics() {
        assert_eq!(position_shuffle(1, 5, 2, 9), vec![0]);
        let mut p = position_shuffle(10, 0, 0, 1);
        assert_eq!(p, position_shuffle(10, 0, 0, 1));
        p.sort_unstable();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }
}
