//! Parse a PENMAN graph, reify its roles and lift it onto subword tokens.

use rpelab::graphcore::*;
use rpelab::harness::{build_vocab, gen_corpus, CorpusSpec};

fn main() -> rpelab::Result<()> {
    let text = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))";
    let g = parse_penman(text)?;
    println!("{} nodes, {} edges; reentrant variable b", g.nodes.len(), g.edges.len());
    println!("round trip: {}", serialize(&g));

    let rg = reify(&g);
    println!("linearized: {}", linearize_labels(&rg).join(" "));

    let spec = CorpusSpec { n_train: 200, n_dev: 5, n_test: 5, ..CorpusSpec::default() };
    let vocab = build_vocab(&gen_corpus(&spec)?, 300, spec.max_branching)?;
    let tg = build_token_graph(&rg, &vocab, true)?;
    let a = adjacency(&tg.structure(), true, false);
    println!("\n{} tokens, typed adjacency (1 direct, 2 reverse):", tg.n());
    for (i, &t) in tg.tokens.iter().enumerate() {
        let row: String = (0..tg.n()).map(|j| char::from(b'0' + a.get(i, j))).collect();
        println!("{:>10} {row}", vocab.token(t).unwrap_or("?"));
    }
    Ok(())
}
