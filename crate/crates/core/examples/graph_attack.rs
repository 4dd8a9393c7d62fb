//! The two input corruptions: fake links and shuffled positions.

use rpelab::graphcore::{parse_penman, reify};
use rpelab::harness::{build_vocab, gen_corpus, CorpusSpec};
use rpelab::probelab::{graph_attack, position_shuffle};

fn main() -> rpelab::Result<()> {
    let spec = CorpusSpec { n_train: 200, n_dev: 5, n_test: 5, ..CorpusSpec::default() };
    let vocab = build_vocab(&gen_corpus(&spec)?, 300, spec.max_branching)?;
    let rg = reify(&parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))")?);
    let tg = rpelab::graphcore::build_token_graph(&rg, &vocab, true)?;
    let g = tg.structure();
    println!("true links:   {:?}", g.undirected_pairs());
    let a = graph_attack(&g, 7);
    println!("attacked:     {:?} (deficit {})", a.structure.undirected_pairs(), a.deficit);
    for epoch in 0..3 {
        println!("epoch {epoch} positions: {:?}", position_shuffle(g.n, epoch, 0, 1));
    }
    Ok(())
}
