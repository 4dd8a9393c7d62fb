//! Train a small BPE vocabulary and round-trip a sentence through it.

use std::collections::BTreeSet;

use rpelab::subtok::train_vocab;

fn main() -> rpelab::Result<()> {
    let lines = [
        "the boy wants to go",
        "the girl wanted the boy to go",
        "a boy went to the garden",
        "the gardener wants the girl",
        ":ARG0 :ARG1 want-01 go-01 boy girl",
    ];
    let atomic: BTreeSet<String> = [":ARG0", ":ARG1"].into_iter().map(String::from).collect();
    let vocab = train_vocab(&lines, 60, &atomic)?;
    println!("{} symbols, first merges: {:?}", vocab.len(), &vocab.merges()[..5.min(vocab.merges().len())]);
    for s in ["the gardener went", "want-01 :ARG0 boy"] {
        let ids = vocab.encode(s);
        let pieces: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
        println!("{s:?} -> {pieces:?} -> {:?}", vocab.decode(&ids));
    }
    Ok(())
}
