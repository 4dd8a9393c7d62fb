use std::cmp::Ordering;

use crate::error::Result;

/// Next-token log-probabilities for a set of (sample, prefix) requests.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, requests: &[(usize, &[u32])]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, including the final eos when one was produced.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score used to rank finished hypotheses.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

/// Higher score first; ties go to the lexicographically smaller id sequence.
fn rank(a: &Hypothesis, b: &Hypothesis, normalized: bool) -> Ordering {
    let (x, y) = if normalized { (a.score(), b.score()) } else { (a.log_prob, b.log_prob) };
    y.partial_cmp(&x).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-normalized beam search over `n_samples` independent sources, all
/// stepped together so every step is one scorer call.
///
/// Each step expands every live prefix by every token, keeps the `beam` best
/// by cumulative log-probability, and retires prefixes ending in `eos`. A
/// source stops once `beam` hypotheses are finished or `max_len` tokens were
/// generated; the best finished hypothesis by `log_prob / len` is returned.
///
/// For `beam > 1` the argmax path is followed alongside and joins the final
/// pool, so a wider beam never returns a lower score than greedy decoding.
pub fn beam_search(
    scorer: &impl StepScorer,
    n_samples: usize,
    beam: usize,
    max_len: usize,
    eos: u32,
) -> Result<Vec<Hypothesis>> {
    let beam = beam.max(1);
    let greedy = if beam > 1 { Some(beam_search(scorer, n_samples, 1, max_len, eos)?) } else { None };
    let mut live: Vec<Vec<Hypothesis>> = vec![vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }]; n_samples];
    let mut done: Vec<Vec<Hypothesis>> = vec![Vec::new(); n_samples];
    for _ in 0..max_len {
        let requests: Vec<(usize, &[u32])> = live
            .iter()
            .enumerate()
            .flat_map(|(s, hs)| hs.iter().map(move |h| (s, h.tokens.as_slice())))
            .collect();
        if requests.is_empty() {
            break;
        }
        let lps = scorer.log_probs(&requests)?;
        let mut next = 0;
        let mut new_live = vec![Vec::new(); n_samples];
        for s in 0..n_samples {
            let mut cands: Vec<Hypothesis> = Vec::new();
            for h in &live[s] {
                let lp = &lps[next];
                next += 1;
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
                for &t in order.iter().take(beam) {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t as u32);
                    cands.push(Hypothesis { tokens, log_prob: h.log_prob + lp[t] as f64 });
                }
            }
            cands.sort_by(|a, b| rank(a, b, false));
            for c in cands.into_iter().take(beam) {
                if c.tokens.last() == Some(&eos) {
                    done[s].push(c);
                } else {
                    new_live[s].push(c);
                }
            }
            if done[s].len() >= beam {
                new_live[s].clear();
            }
        }
        live = new_live;
    }
    Ok(done
        .into_iter()
        .zip(live)
        .enumerate()
        .map(|(s, (mut d, l))| {
            d.extend(l);
            d.extend(greedy.as_ref().map(|g| g[s].clone()));
            d.sort_by(|a, b| rank(a, b, true));
            d.swap_remove(0)
        })
        .collect())
}

/// Argmax decoding, equal to `beam_search` with a beam of one.
pub fn greedy_decode(scorer: &impl StepScorer, n_samples: usize, max_len: usize, eos: u32) -> Result<Vec<Hypothesis>> {
    beam_search(scorer, n_samples, 1, max_len, eos)
}
