use std::collections::BTreeSet;

use super::corpus::{roles, Corpus, Sample};
use crate::error::{LabError, Result};
use crate::graphcore::{build_token_graph, linearize_labels, parse_penman, reify, TokenGraph};
use crate::subtok::{train_vocab, Vocab, EOS};

/// A sample ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    /// Linearized graph subwords followed by eos, with the token graph over them.
    pub graph: TokenGraph,
    /// Text subwords followed by eos.
    pub target: Vec<u32>,
    pub text: String,
}

impl Prepared {
    pub fn tokens(&self) -> &[u32] {
        &self.graph.tokens
    }
}

/// Linearized concept and role labels of a PENMAN graph.
pub fn graph_labels(penman: &str) -> Result<Vec<String>> {
    Ok(linearize_labels(&reify(&parse_penman(penman)?)))
}

/// BPE vocabulary over the training texts and graph labels, with every role
/// of the grammar kept atomic.
pub fn build_vocab(corpus: &Corpus, size: usize, max_branching: usize) -> Result<Vocab> {
    let atomic: BTreeSet<String> = roles(max_branching).into_iter().collect();
    let mut lines: Vec<String> = corpus.train.iter().map(|s| s.text.clone()).collect();
    for s in &corpus.train {
        let labels: Vec<String> =
            graph_labels(&s.graph)?.into_iter().filter(|l| !atomic.contains(l)).collect();
        lines.push(labels.join(" "));
    }
    train_vocab(&lines, size, &atomic)
}

pub fn prepare(samples: &[Sample], vocab: &Vocab, max_target_len: usize) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let g = parse_penman(&s.graph).map_err(|e| LabError::Data(format!("{}: {e}", s.id)))?;
            let graph = build_token_graph(&reify(&g), vocab, true)?;
            let mut target = vocab.encode(&s.text);
            target.truncate(max_target_len.saturating_sub(1));
            target.push(EOS);
            Ok(Prepared { id: s.id.clone(), graph, target, text: s.text.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{gen_corpus, CorpusSpec};

    #[test]
    fn prepared_shapes() {
        let c = gen_corpus(&CorpusSpec { n_train: 100, n_dev: 10, n_test: 10, ..CorpusSpec::default() }).unwrap();
        let v = build_vocab(&c, 300, 2).unwrap();
        let p = prepare(&c.dev, &v, 64).unwrap();
        for (s, x) in c.dev.iter().zip(&p) {
            assert_eq!(x.tokens().last(), Some(&EOS));
            assert_eq!(x.target.last(), Some(&EOS));
            assert_eq!(v.decode(&x.target), s.text);
            assert_eq!(x.graph.structure().n, x.tokens().len());
        }
    }
}
