//! Synthetic AMR-like corpus: random graphs from a small predicate grammar
//! with deterministic template verbalizations.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::graphcore::{serialize, AmrEdge, AmrGraph, AmrNode};

#[derive(Clone, Copy)]
enum Gender {
    Male,
    Female,
    Neuter,
}

const NOUNS: &[(&str, Gender)] = &[
    ("boy", Gender::Male),
    ("girl", Gender::Female),
    ("dog", Gender::Neuter),
    ("cat", Gender::Neuter),
    ("teacher", Gender::Neuter),
    ("student", Gender::Neuter),
    ("doctor", Gender::Neuter),
    ("man", Gender::Male),
    ("woman", Gender::Female),
    ("king", Gender::Male),
    ("queen", Gender::Female),
    ("bird", Gender::Neuter),
    ("farmer", Gender::Neuter),
    ("child", Gender::Neuter),
    ("robot", Gender::Neuter),
    ("horse", Gender::Neuter),
    ("soldier", Gender::Neuter),
    ("painter", Gender::Neuter),
    ("mother", Gender::Female),
    ("father", Gender::Male),
    ("lawyer", Gender::Neuter),
    ("monkey", Gender::Neuter),
    ("pilot", Gender::Neuter),
    ("singer", Gender::Neuter),
    ("baker", Gender::Neuter),
    ("nurse", Gender::Neuter),
    ("wolf", Gender::Neuter),
    ("sailor", Gender::Neuter),
    ("judge", Gender::Neuter),
    ("fox", Gender::Neuter),
    ("brother", Gender::Male),
    ("sister", Gender::Female),
];

const ADJECTIVES: &[&str] = &["big", "small", "old", "young", "happy", "angry", "tall", "quiet", "clever", "brave"];

/// (concept, infinitive, third person singular)
type Verb = (&'static str, &'static str, &'static str);

const TRANSITIVE: &[Verb] = &[
    ("see-01", "see", "sees"),
    ("like-01", "like", "likes"),
    ("help-01", "help", "helps"),
    ("find-01", "find", "finds"),
    ("follow-02", "follow", "follows"),
    ("call-01", "call", "calls"),
    ("meet-02", "meet", "meets"),
    ("chase-01", "chase", "chases"),
    ("visit-01", "visit", "visits"),
    ("push-01", "push", "pushes"),
    ("teach-01", "teach", "teaches"),
    ("watch-01", "watch", "watches"),
];

const INTRANSITIVE: &[Verb] = &[
    ("sleep-01", "sleep", "sleeps"),
    ("run-02", "run", "runs"),
    ("laugh-01", "laugh", "laughs"),
    ("sing-01", "sing", "sings"),
    ("dance-01", "dance", "dances"),
    ("arrive-01", "arrive", "arrives"),
];

const SAY: &[Verb] = &[
    ("know-01", "know", "knows"),
    ("say-01", "say", "says"),
    ("think-01", "think", "thinks"),
    ("believe-01", "believe", "believes"),
];

const CONTROL: &[Verb] = &[("want-01", "want", "wants"), ("try-01", "try", "tries"), ("need-01", "need", "needs")];

/// Roles the grammar can emit for a given maximum branching.
pub fn roles(max_branching: usize) -> Vec<String> {
    let mut r: Vec<String> = [":ARG0", ":ARG1", ":mod"].iter().map(|s| s.to_string()).collect();
    for i in 1..=max_branching.max(2) {
        r.push(format!(":op{i}"));
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Number of noun lemmas drawn from the built-in list.
    pub n_lemmas: usize,
    /// Maximum predicate nesting; 1 means single-predicate graphs.
    pub max_depth: usize,
    /// Maximum number of conjuncts under `and`; also bounds modifiers per noun.
    pub max_branching: usize,
    pub reentrancy_prob: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            n_lemmas: 24,
            max_depth: 3,
            max_branching: 2,
            reentrancy_prob: 0.1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_lemmas < 2 || self.n_lemmas > NOUNS.len() {
            return Err(LabError::Config(format!("n_lemmas must be in 2..={}", NOUNS.len())));
        }
        if self.max_depth == 0 {
            return Err(LabError::Config("max_depth must be at least 1".into()));
        }
        if self.max_branching == 0 {
            return Err(LabError::Config("max_branching must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reentrancy_prob) {
            return Err(LabError::Config("reentrancy_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub graph: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(LabError::Config(format!("unknown split '{name}'"))),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, s) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            write_jsonl(&dir.join(format!("{name}.jsonl")), s)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Corpus> {
        Ok(Corpus {
            train: read_jsonl(&dir.join("train.jsonl"))?,
            dev: read_jsonl(&dir.join("dev.jsonl"))?,
            test: read_jsonl(&dir.join("test.jsonl"))?,
        })
    }
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| LabError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    spec: &'a CorpusSpec,
    g: AmrGraph,
}

impl Builder<'_> {
    fn node(&mut self, concept: &str) -> usize {
        let letter = concept.chars().next().unwrap_or('x');
        let mut var = letter.to_string();
        let mut k = 2;
        while self.g.nodes.iter().any(|n| n.var == var) {
            var = format!("{letter}{k}");
            k += 1;
        }
        self.g.nodes.push(AmrNode { var, concept: concept.to_string() });
        self.g.nodes.len() - 1
    }

    fn edge(&mut self, source: usize, role: &str, target: usize) {
        self.g.edges.push(AmrEdge { source, role: role.to_string(), target });
    }

    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(self.rng).expect("non-empty list")
    }

    fn noun_phrase(&mut self) -> (usize, Gender, String) {
        let (noun, gender) = self.pick(&NOUNS[..self.spec.n_lemmas]);
        let n = self.node(noun);
        let max_mods = (self.spec.max_branching - 1).min(2);
        let k = if max_mods == 0 || self.rng.gen_bool(0.6) { 0 } else { self.rng.gen_range(1..=max_mods) };
        let adjs: Vec<&str> = ADJECTIVES.choose_multiple(self.rng, k).copied().collect();
        let mut words = vec!["the".to_string()];
        for a in adjs {
            let m = self.node(a);
            self.edge(n, ":mod", m);
            words.push(a.to_string());
        }
        words.push(noun.to_string());
        (n, gender, words.join(" "))
    }

    /// Returns the clause head and its words. With `subject`, the clause is
    /// an infinitive whose ARG0 is that existing node.
    fn clause(&mut self, depth: usize, subject: Option<usize>, reentrant: bool) -> (usize, String) {
        let nested = depth >= 2;
        let conj = nested && subject.is_none() && self.spec.max_branching >= 2;
        if reentrant && subject.is_none() {
            if nested && self.rng.gen_bool(0.5) {
                return self.control(depth);
            }
            return self.transitive(subject, true);
        }
        let r: f64 = self.rng.gen();
        if nested && r < 0.25 {
            self.say(depth, subject)
        } else if conj && r < 0.45 {
            self.conjunction(depth)
        } else if r < 0.8 {
            self.transitive(subject, false)
        } else {
            self.intransitive(subject)
        }
    }

    fn subject(&mut self, subject: Option<usize>) -> (usize, Option<Gender>, Option<String>) {
        match subject {
            Some(s) => (s, None, None),
            None => {
                let (n, g, w) = self.noun_phrase();
                (n, Some(g), Some(w))
            }
        }
    }

    fn finish(subj_words: Option<String>, verb: Verb, rest: &str) -> String {
        let mut out = match subj_words {
            Some(s) => format!("{s} {}", verb.2),
            None => verb.1.to_string(),
        };
        if !rest.is_empty() {
            out.push(' ');
            out.push_str(rest);
        }
        out
    }

    fn transitive(&mut self, subject: Option<usize>, reflexive: bool) -> (usize, String) {
        let verb = self.pick(TRANSITIVE);
        let v = self.node(verb.0);
        let (s, gender, words) = self.subject(subject);
        self.edge(v, ":ARG0", s);
        let obj = if reflexive {
            self.edge(v, ":ARG1", s);
            match gender.unwrap_or(Gender::Neuter) {
                Gender::Male => "himself",
                Gender::Female => "herself",
                Gender::Neuter => "itself",
            }
            .to_string()
        } else {
            let (o, _, w) = self.noun_phrase();
            self.edge(v, ":ARG1", o);
            w
        };
        (v, Self::finish(words, verb, &obj))
    }

    fn intransitive(&mut self, subject: Option<usize>) -> (usize, String) {
        let verb = self.pick(INTRANSITIVE);
        let v = self.node(verb.0);
        let (s, _, words) = self.subject(subject);
        self.edge(v, ":ARG0", s);
        (v, Self::finish(words, verb, ""))
    }

    fn say(&mut self, depth: usize, subject: Option<usize>) -> (usize, String) {
        let verb = self.pick(SAY);
        let v = self.node(verb.0);
        let (s, _, words) = self.subject(subject);
        self.edge(v, ":ARG0", s);
        let (c, cw) = self.clause(depth - 1, None, false);
        self.edge(v, ":ARG1", c);
        (v, Self::finish(words, verb, &format!("that {cw}")))
    }

    fn control(&mut self, depth: usize) -> (usize, String) {
        let verb = self.pick(CONTROL);
        let v = self.node(verb.0);
        let (s, _, words) = self.subject(None);
        self.edge(v, ":ARG0", s);
        let (c, cw) = self.clause(depth - 1, Some(s), false);
        self.edge(v, ":ARG1", c);
        (v, Self::finish(words, verb, &format!("to {cw}")))
    }

    fn conjunction(&mut self, depth: usize) -> (usize, String) {
        let a = self.node("and");
        let k = self.rng.gen_range(2..=self.spec.max_branching);
        let mut parts = Vec::with_capacity(k);
        for i in 1..=k {
            let (c, cw) = self.clause(depth - 1, None, false);
            self.edge(a, &format!(":op{i}"), c);
            parts.push(cw);
        }
        (a, parts.join(" and "))
    }
}

/// One graph with its verbalization.
pub fn gen_sample(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> (AmrGraph, String) {
    let reentrant = rng.gen_bool(spec.reentrancy_prob);
    let mut b = Builder { rng, spec, g: AmrGraph { nodes: Vec::new(), edges: Vec::new(), root: 0 } };
    let (root, text) = b.clause(spec.max_depth, None, reentrant);
    b.g.root = root;
    (b.g, text)
}

const MAX_REJECTIONS: usize = 10_000;

/// Train, dev and test splits drawn from three separate ChaCha streams of
/// `spec.seed`. Dev and test reject graphs already present in an earlier split.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut splits = Vec::new();
    for (stream, (name, n)) in [("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream as u64 + 1);
        let mut out = Vec::with_capacity(n);
        let mut fresh = Vec::new();
        let mut rejected = 0;
        while out.len() < n {
            let (g, text) = gen_sample(spec, &mut rng);
            let graph = serialize(&g);
            if seen.contains(&graph) {
                rejected += 1;
                if rejected > MAX_REJECTIONS {
                    return Err(LabError::Config(format!(
                        "grammar too small to draw {n} {name} graphs disjoint from earlier splits"
                    )));
                }
                continue;
            }
            fresh.push(graph.clone());
            out.push(Sample { id: format!("{name}-{}", out.len()), graph, text });
        }
        seen.extend(fresh);
        splits.push(out);
    }
    let test = splits.pop().unwrap_or_default();
    let dev = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Corpus { train, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::parse_penman;

    fn small() -> CorpusSpec {
        CorpusSpec { n_train: 200, n_dev: 30, n_test: 30, ..CorpusSpec::default() }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(gen_corpus(&small()).unwrap(), gen_corpus(&small()).unwrap());
        let other = gen_corpus(&CorpusSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(other.train, gen_corpus(&small()).unwrap().train);
    }

    #[test]
    fn graphs_parse_and_validate() {
        let c = gen_corpus(&small()).unwrap();
        for s in c.train.iter().chain(&c.dev).chain(&c.test) {
            let g = parse_penman(&s.graph).unwrap();
            g.validate().unwrap();
            assert_eq!(serialize(&g), s.graph);
        }
    }

    #[test]
    fn depth_one_is_single_predicate() {
        let c = gen_corpus(&CorpusSpec { max_depth: 1, ..small() }).unwrap();
        for s in &c.train {
            let g = parse_penman(&s.graph).unwrap();
            let preds = g.nodes.iter().filter(|n| n.concept.contains('-') || n.concept == "and").count();
            assert_eq!(preds, 1, "{}", s.graph);
        }
    }

    #[test]
    fn dev_and_test_unseen_in_train() {
        let c = gen_corpus(&small()).unwrap();
        let train: HashSet<&str> = c.train.iter().map(|s| s.graph.as_str()).collect();
        assert!(c.dev.iter().chain(&c.test).all(|s| !train.contains(s.graph.as_str())));
    }

    #[test]
    fn reentrancy_rate_near_target() {
        let spec = CorpusSpec { n_train: 2000, n_dev: 0, n_test: 0, ..CorpusSpec::default() };
        let c = gen_corpus(&spec).unwrap();
        let reentrant = c
            .train
            .iter()
            .filter(|s| {
                let g = parse_penman(&s.graph).unwrap();
                (0..g.nodes.len()).any(|n| g.edges.iter().filter(|e| e.target == n).count() > 1)
            })
            .count();
        let rate = reentrant as f64 / 2000.0;
        assert!((0.07..0.13).contains(&rate), "{rate}");
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = std::env::temp_dir().join(format!("rpelab-corpus-{}", std::process::id()));
        let c = gen_corpus(&small()).unwrap();
        c.write_dir(&dir).unwrap();
        assert_eq!(Corpus::read_dir(&dir).unwrap(), c);
        std::fs::remove_dir_all(&dir).ok();
    }
}
