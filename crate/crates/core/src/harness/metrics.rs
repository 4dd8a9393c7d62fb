//! Corpus-level BLEU, chrF++ and TER over whitespace-tokenized text.

use std::collections::HashMap;

use crate::error::{LabError, Result};

fn check_lists(hyps: &[String], refs: &[String]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(LabError::Data(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if refs.is_empty() {
        return Err(LabError::Data("no references".into()));
    }
    if let Some(i) = refs.iter().position(|r| r.split_whitespace().next().is_none()) {
        return Err(LabError::Data(format!("reference {i} is empty")));
    }
    Ok(())
}

fn ngram_counts<T: AsRef<str> + std::hash::Hash + Eq>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped<T: AsRef<str> + std::hash::Hash + Eq>(hyp: &HashMap<&[T], usize>, r: &HashMap<&[T], usize>) -> usize {
    hyp.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum()
}

/// Value substituted for a zero n-gram match count.
pub const BLEU_FLOOR: f64 = 0.1;

/// BLEU-4 in `[0, 100]` with brevity penalty.
///
/// Orders for which the hypotheses contain no n-grams at all are left out of
/// the geometric mean; an order with n-grams but no matches uses
/// [`BLEU_FLOOR`] matches.
pub fn bleu(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_lists(hyps, refs)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            matches[n - 1] += clipped(&hc, &ngram_counts(&r, n));
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut order = 0;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let m = if matches[n] == 0 { BLEU_FLOOR } else { matches[n] as f64 };
        log_sum += (m / totals[n] as f64).ln();
        order += 1;
    }
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * bp * (log_sum / order as f64).exp())
}

/// Brevity penalty alone, for inspection.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

pub const CHRF_CHAR_ORDER: usize = 6;
pub const CHRF_WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;

/// chrF++ in `[0, 100]`: character n-grams up to 6 (whitespace removed) and
/// word n-grams up to 2, statistics summed over the corpus, F-beta per order
/// averaged over the orders both sides have n-grams for.
pub fn chrf(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_lists(hyps, refs)?;
    let orders = CHRF_CHAR_ORDER + CHRF_WORD_ORDER;
    let mut stats = vec![[0usize; 3]; orders];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<String> = h.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
        let rc: Vec<String> = r.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
        let hw: Vec<&str> = h.split_whitespace().collect();
        let rw: Vec<&str> = r.split_whitespace().collect();
        for n in 1..=CHRF_CHAR_ORDER {
            let (a, b) = (ngram_counts(&hc, n), ngram_counts(&rc, n));
            let s = &mut stats[n - 1];
            s[0] += a.values().sum::<usize>();
            s[1] += b.values().sum::<usize>();
            s[2] += clipped(&a, &b);
        }
        for n in 1..=CHRF_WORD_ORDER {
            let (a, b) = (ngram_counts(&hw, n), ngram_counts(&rw, n));
            let s = &mut stats[CHRF_CHAR_ORDER + n - 1];
            s[0] += a.values().sum::<usize>();
            s[1] += b.values().sum::<usize>();
            s[2] += clipped(&a, &b);
        }
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    let mut total = 0.0;
    let mut effective = 0;
    for [n_hyp, n_ref, n_match] in stats {
        if n_hyp == 0 || n_ref == 0 {
            continue;
        }
        effective += 1;
        let p = n_match as f64 / n_hyp as f64;
        let r = n_match as f64 / n_ref as f64;
        if p + r > 0.0 {
            total += (1.0 + b2) * p * r / (b2 * p + r);
        }
    }
    Ok(if effective == 0 { 0.0 } else { 100.0 * total / effective as f64 })
}

/// Word-level Levenshtein distance (unit costs).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const TER_MAX_SHIFTS: usize = 10;
const TER_MAX_PHRASE: usize = 10;

fn contains_phrase(hay: &[&str], phrase: &[&str]) -> bool {
    hay.windows(phrase.len()).any(|w| w == phrase)
}

/// Edits for one sentence: greedy block shifts (each costing one edit, at
/// most [`TER_MAX_SHIFTS`]) followed by the edit distance of the result.
/// A shift moves a hypothesis phrase that also occurs in the reference and
/// is kept only if it strictly lowers the edit distance.
pub fn ter_edits(hyp: &[&str], r: &[&str]) -> usize {
    let mut h: Vec<&str> = hyp.to_vec();
    let mut shifts = 0;
    let mut dist = edit_distance(&h, r);
    while shifts < TER_MAX_SHIFTS && dist > 0 {
        let mut best: Option<(usize, Vec<&str>)> = None;
        for len in 1..=TER_MAX_PHRASE.min(h.len()) {
            for i in 0..=h.len() - len {
                if !contains_phrase(r, &h[i..i + len]) {
                    continue;
                }
                let mut rest = h.clone();
                let phrase: Vec<&str> = rest.drain(i..i + len).collect();
                for j in 0..=rest.len() {
                    if j == i {
                        continue;
                    }
                    let mut cand = rest.clone();
                    cand.splice(j..j, phrase.iter().copied());
                    let d = edit_distance(&cand, r);
                    if d < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            Some((d, cand)) => {
                h = cand;
                dist = d;
                shifts += 1;
            }
            _ => break,
        }
    }
    shifts + dist
}

/// Corpus TER as a fraction: total edits over total reference words.
pub fn ter(hyps: &[String], refs: &[String]) -> Result<f64> {
    check_lists(hyps, refs)?;
    let mut edits = 0usize;
    let mut ref_words = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        edits += ter_edits(&h, &r);
        ref_words += r.len();
    }
    Ok(edits as f64 / ref_words as f64)
}

/// Fraction of reference positions where the hypothesis holds the same token.
pub fn token_accuracy(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        total += r.len();
        hit += h.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identity_scores() {
        let c = s(&["the boy sees the girl .", "a dog sleeps"]);
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
        assert!((chrf(&c, &c).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(ter(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn short_hypothesis_brevity_penalty() {
        let b = bleu(&s(&["the cat"]), &s(&["the cat sat"])).unwrap();
        assert!((b - 100.0 * (1.0f64 - 1.5).exp()).abs() < 1e-9);
    }

    #[test]
    fn one_substitution_in_ten_words() {
        let r = "a b c d e f g h i j";
        let h = "a b c d e X g h i j";
        assert!((ter(&s(&[h]), &s(&[r])).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shift_counts_once() {
        let r: Vec<&str> = "the boy sees the girl today".split(' ').collect();
        let h: Vec<&str> = "today the boy sees the girl".split(' ').collect();
        assert_eq!(edit_distance(&h, &r), 2);
        assert_eq!(ter_edits(&h, &r), 1);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(bleu(&s(&["x"]), &s(&[""])).is_err());
        assert!(chrf(&s(&["x"]), &s(&["  "])).is_err());
        assert!(ter(&s(&["x", "y"]), &s(&["x"])).is_err());
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(bleu(&s(&[""]), &s(&["a b"])).unwrap(), 0.0);
        assert_eq!(ter(&s(&[""]), &s(&["a b"])).unwrap(), 1.0);
    }
}
