//! Beam search against a hand-written next-token table.

use rpelab::seq2seq::{beam_search, greedy_decode, StepScorer};

const EOS: u32 = 1;

/// Token 2 looks best first but leads to a flat tail; token 3 leads to a sure eos.
struct Toy;

impl StepScorer for Toy {
    fn vocab_size(&self) -> usize {
        4
    }

    fn log_probs(&self, requests: &[(usize, &[u32])]) -> rpelab::Result<Vec<Vec<f32>>> {
        Ok(requests
            .iter()
            .map(|(_, prefix)| {
                let p: [f32; 4] = match prefix.last() {
                    None => [0.0, 0.0, 0.55, 0.45],
                    Some(2) => [0.0, 0.34, 0.33, 0.33],
                    Some(3) => [0.0, 0.95, 0.025, 0.025],
                    _ => [0.0, 1.0, 0.0, 0.0],
                };
                p.iter().map(|x| x.ln()).collect()
            })
            .collect())
    }
}

fn main() -> rpelab::Result<()> {
    let g = &greedy_decode(&Toy, 1, 6, EOS)?[0];
    println!("greedy: {:?} score {:.3}", g.tokens, g.score());
    for beam in [2, 5] {
        let h = &beam_search(&Toy, 1, beam, 6, EOS)?[0];
        println!("beam {beam}: {:?} score {:.3}", h.tokens, h.score());
    }
    Ok(())
}
