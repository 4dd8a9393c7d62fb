//! Corpus BLEU, chrF++ and TER on a few hypotheses.

use rpelab::harness::{bleu, chrf, ter};

fn main() -> rpelab::Result<()> {
    let refs: Vec<String> = ["the boy wants to go home", "a girl sees the dog"].map(String::from).to_vec();
    let systems = [
        ("exact", vec!["the boy wants to go home", "a girl sees the dog"]),
        ("one word off", vec!["the boy wants to go house", "a girl sees the dog"]),
        ("reordered", vec!["to go home the boy wants", "the dog a girl sees"]),
        ("short", vec!["the boy", "a girl"]),
    ];
    println!("{:<14} {:>7} {:>7} {:>7}", "system", "BLEU", "chrF++", "TER");
    for (name, hyps) in systems {
        let h: Vec<String> = hyps.into_iter().map(String::from).collect();
        println!("{name:<14} {:>7.2} {:>7.2} {:>7.3}", bleu(&h, &refs)?, chrf(&h, &refs)?, ter(&h, &refs)?);
    }
    Ok(())
}
