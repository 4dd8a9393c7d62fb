//! Byte-pair-style subword vocabulary with atomic entries.
//!
//! Words are split on single spaces and prefixed with the `▁` marker before
//! merging, so `decode(encode(x)) == x` for any string over the training
//! alphabet. Atomic strings (role labels) always encode to one id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{LabError, Result};
use crate::graphcore::LabelTokenizer;

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const MASK: u32 = 3;

pub const WORD_START: char = '▁';

const SPECIALS: [(&str, u32); 4] = [("<pad>", PAD), ("</s>", EOS), ("<unk>", UNK), ("<mask>", MASK)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    atomic: BTreeSet<String>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(' ').map(|w| format!("{WORD_START}{w}"))
}

impl Vocab {
    fn assemble(tokens: Vec<String>, atomic: BTreeSet<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(LabError::Data(format!("duplicate vocabulary entry '{t}'")));
            }
        }
        for (name, id) in SPECIALS {
            if ids.get(name) != Some(&id) {
                return Err(LabError::Data(format!("special token {name} must have id {id}")));
            }
        }
        if let Some(a) = atomic.iter().find(|a| !ids.contains_key(*a)) {
            return Err(LabError::Data(format!("atomic entry '{a}' has no id")));
        }
        let ranks = merges.iter().enumerate().map(|(r, m)| (m.clone(), r)).collect();
        Ok(Vocab { tokens, ids, atomic, merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_atomic(&self, s: &str) -> bool {
        self.atomic.contains(s)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let right = parts.remove(i + 1);
            parts[i].push_str(&right);
        }
        out.extend(parts.iter().map(|p| self.id(p).unwrap_or(UNK)));
    }

    /// Subword ids of `text`. Atomic strings map to their single id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        if text.is_empty() {
            return Vec::new();
        }
        if let Some(&id) = self.atomic.get(text).and_then(|a| self.ids.get(a)) {
            return vec![id];
        }
        let mut out = Vec::new();
        for w in words(text) {
            self.encode_word(&w, &mut out);
        }
        out
    }

    /// Inverse of [`Vocab::encode`]; pad, eos and mask ids are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            if matches!(id, PAD | EOS | MASK) {
                continue;
            }
            match self.token(id) {
                Some(t) if self.atomic.contains(t) => {
                    s.push(WORD_START);
                    s.push_str(t);
                }
                Some(t) => s.push_str(t),
                None => s.push_str("<unk>"),
            }
        }
        let s = s.replace(WORD_START, " ");
        s.strip_prefix(' ').map(str::to_string).unwrap_or(s)
    }

    pub fn to_json(&self) -> Value {
        let specials: BTreeMap<&str, u32> = SPECIALS.iter().copied().collect();
        json!({
            "tokens": self.tokens,
            "merges": self.merges.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
            "atomic": self.atomic,
            "specials": specials,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| LabError::Data(format!("vocabulary file: malformed {what}"));
        let strings = |key: &str| -> Result<Vec<String>> {
            v[key]
                .as_array()
                .ok_or_else(|| bad(key))?
                .iter()
                .map(|t| t.as_str().map(str::to_string).ok_or_else(|| bad(key)))
                .collect()
        };
        let tokens = strings("tokens")?;
        let atomic = strings("atomic")?.into_iter().collect();
        let merges = v["merges"]
            .as_array()
            .ok_or_else(|| bad("merges"))?
            .iter()
            .map(|m| match (m[0].as_str(), m[1].as_str()) {
                (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                _ => Err(bad("merges")),
            })
            .collect::<Result<Vec<_>>>()?;
        Vocab::assemble(tokens, atomic, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_json())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Vocab::from_json(&serde_json::from_str(&text)?)
    }
}

impl LabelTokenizer for Vocab {
    fn encode_label(&self, label: &str) -> Vec<u32> {
        self.encode(label)
    }

    fn atomic_id(&self, role: &str) -> Option<u32> {
        if self.atomic.contains(role) {
            self.id(role)
        } else {
            None
        }
    }

    fn eos_id(&self) -> u32 {
        EOS
    }
}

/// Learn merges from `corpus` until the vocabulary holds `size` entries or
/// no pair occurs at least twice. Ties between equally frequent pairs go to
/// the lexicographically smallest pair.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], size: usize, atomic: &BTreeSet<String>) -> Result<Vocab> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        if line.as_ref().is_empty() {
            continue;
        }
        for w in words(line.as_ref()) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut alphabet: BTreeSet<String> = freq.keys().flat_map(|w| w.chars().map(String::from)).collect();
    alphabet.insert(WORD_START.to_string());
    let mut tokens: Vec<String> = SPECIALS.iter().map(|(s, _)| s.to_string()).collect();
    tokens.extend(atomic.iter().cloned());
    for c in &alphabet {
        if !atomic.contains(c) {
            tokens.push(c.clone());
        }
    }
    if size < tokens.len() {
        return Err(LabError::Config(format!(
            "vocabulary size {size} is below the {} entries needed for specials, atomic strings and characters",
            tokens.len()
        )));
    }
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut split: Vec<(Vec<String>, usize)> =
        freq.into_iter().map(|(w, f)| (w.chars().map(String::from).collect(), f)).collect();
    let mut merges = Vec::new();
    while tokens.len() < size {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (parts, f) in &split {
            for w in parts.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
            }
        }
        let Some(((a, b), count)) = pairs.into_iter().fold(None, |best: Option<((&str, &str), usize)>, (p, c)| {
            match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            }
        }) else {
            break;
        };
        if count < 2 {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        let joined = format!("{a}{b}");
        for (parts, _) in &mut split {
            let mut i = 0;
            while i + 1 < parts.len() {
                if parts[i] == a && parts[i + 1] == b {
                    parts[i] = joined.clone();
                    parts.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(joined.clone()) {
            tokens.push(joined);
        }
        merges.push((a, b));
    }
    Vocab::assemble(tokens, atomic.clone(), merges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atomic(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn most_frequent_pair_merges_first() {
        let v = train_vocab(&["aaab"], 100, &BTreeSet::new()).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn atomic_roles_are_single_ids() {
        let v = train_vocab(&["the boy"], 100, &atomic(&[":op1", ":ARG0"])).unwrap();
        assert_eq!(v.encode(":op1").len(), 1);
        assert_eq!(v.encode(":ARG0").len(), 1);
        assert_eq!(v.decode(&v.encode(":op1")), ":op1");
    }

    #[test]
    fn empty_and_unknown() {
        let v = train_vocab(&["abc"], 100, &BTreeSet::new()).unwrap();
        assert!(v.encode("").is_empty());
        assert!(v.encode("zq").contains(&UNK));
    }

    #[test]
    fn roundtrip_and_spaces() {
        let corpus = ["the big boy sees the girl", "want-01", "boy"];
        let v = train_vocab(&corpus, 60, &BTreeSet::new()).unwrap();
        for s in ["the girl sees the boy", "want-01", " the  boy ", "b"] {
            assert_eq!(v.decode(&v.encode(s)), s);
        }
    }

    #[test]
    fn size_too_small() {
        assert!(matches!(train_vocab(&["abcdef"], 5, &BTreeSet::new()), Err(LabError::Config(_))));
    }

    #[test]
    fn json_roundtrip_and_determinism() {
        let corpus = ["the big boy", "the girl", "go-02"];
        let a = train_vocab(&corpus, 40, &atomic(&[":mod"])).unwrap();
        let b = train_vocab(&corpus, 40, &atomic(&[":mod"])).unwrap();
        let ja = serde_json::to_string_pretty(&a.to_json()).unwrap();
        assert_eq!(ja, serde_json::to_string_pretty(&b.to_json()).unwrap());
        assert_eq!(Vocab::from_json(&a.to_json()).unwrap(), a);
    }
}
