use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::{ClientDataset, ClientId, Style};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

pub type Sentence = Vec<String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextPopulation {
    pub clients: Vec<ClientDataset<Sentence>>,
}

/// Vocabulary size whose clean OOV rate falls in the 3–10% band for the
/// bundled grammar.
pub const DEFAULT_VOCAB_SIZE: usize = 100;

impl TextPopulation {
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.clients.iter().flat_map(|c| &c.examples)
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences().map(Vec::len).sum()
    }

    /// Top-`k` vocabulary over this corpus.
    pub fn vocabulary(&self, k: usize) -> Vocabulary {
        Vocabulary::top_k(self.sentences().flatten().map(String::as_str), k)
    }
}

const SUBJECTS: &[(&str, f64, &[&str])] = &[
    ("i", 0.30, &["have", "am", "think", "can", "want", "need", "tried", "use"]),
    ("you", 0.20, &["can", "have", "need", "should", "want", "could"]),
    ("it", 0.15, &["is", "works", "seems", "was"]),
    ("this", 0.12, &["is", "works", "means", "was"]),
    ("we", 0.10, &["have", "need", "can", "use"]),
    ("they", 0.08, &["are", "have", "use"]),
    ("he", 0.05, &["is", "has", "wants"]),
];
const DETS: &[&str] = &["the", "a", "my", "this", "some", "your"];
const PREPS: &[&str] = &["in", "on", "with", "for", "from", "of"];
const VERBS: &[&str] = &["use", "get", "make", "find", "run", "add", "change", "fix", "install", "write"];
const ADJS: &[&str] = &["good", "wrong", "possible", "fine", "slow", "correct", "better", "easy"];
const CONJS: &[&str] = &["and", "but", "because", "so"];
const NOUNS: &[&str] = &[
    "file", "code", "function", "problem", "error", "way", "data", "value", "class", "method", "question",
    "answer", "server", "table", "list", "string", "page", "user", "app", "test", "image", "array", "object",
    "type", "version", "query", "script", "loop", "key", "thread", "button", "model", "library", "field",
    "request", "response", "column", "row", "package", "project",
];
const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "mu", "ze", "la", "po", "ni", "ta", "ve", "su", "go", "fe", "di", "ra", "mo", "ki", "lu",
    "ne", "sa", "to", "wi", "ho", "pe", "cu", "da", "mi", "jo", "xe", "fa",
];
const PSEUDO_NOUNS: usize = 1500;
const ZIPF_S: f64 = 1.5;

struct Grammar {
    nouns: Vec<String>,
    noun_dist: WeightedIndex<f64>,
    subj_dist: WeightedIndex<f64>,
}

impl Grammar {
    fn new(seed: u64) -> Self {
        let mut r = rng::stream(rng::derive_seed(seed, &[purpose::DATA, u64::MAX]));
        let mut nouns: Vec<String> = NOUNS.iter().map(|s| s.to_string()).collect();
        while nouns.len() < NOUNS.len() + PSEUDO_NOUNS {
            let k = r.random_range(2..=4);
            let w: String = (0..k).map(|_| SYLLABLES[r.random_range(0..SYLLABLES.len())]).collect();
            if !nouns.contains(&w) {
                nouns.push(w);
            }
        }
        let weights: Vec<f64> = (0..nouns.len()).map(|i| (i as f64 + 2.0).powf(-ZIPF_S)).collect();
        Grammar {
            nouns,
            noun_dist: WeightedIndex::new(weights).expect("positive weights"),
            subj_dist: WeightedIndex::new(SUBJECTS.iter().map(|s| s.1)).expect("positive weights"),
        }
    }

    fn pick<'a>(r: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
        xs[r.random_range(0..xs.len())]
    }

    fn noun_phrase(&self, r: &mut ChaCha8Rng, out: &mut Vec<String>) {
        if r.random::<f64>() < 0.7 {
            out.push(Self::pick(r, DETS).into());
        }
        out.push(self.nouns[self.noun_dist.sample(r)].clone());
    }

    fn clause(&self, r: &mut ChaCha8Rng, out: &mut Vec<String>) {
        let (subj, _, verbs) = SUBJECTS[self.subj_dist.sample(r)];
        out.push(subj.into());
        out.push(Self::pick(r, verbs).into());
        let u: f64 = r.random();
        if u < 0.55 {
            self.noun_phrase(r, out);
            if r.random::<f64>() < 0.4 {
                out.push(Self::pick(r, PREPS).into());
                self.noun_phrase(r, out);
            }
        } else if u < 0.8 {
            out.push("to".into());
            out.push(Self::pick(r, VERBS).into());
            self.noun_phrase(r, out);
        } else {
            out.push(Self::pick(r, ADJS).into());
        }
    }

    fn sentence(&self, r: &mut ChaCha8Rng) -> Sentence {
        let mut s = Vec::new();
        self.clause(r, &mut s);
        if r.random::<f64>() < 0.35 {
            s.push(Self::pick(r, CONJS).into());
            self.clause(r, &mut s);
        }
        s
    }
}

/// Corpus from a seeded grammar: every sentence opens with a frequent
/// subject–verb pair and object nouns follow a Zipf law, so a frequency
/// cut leaves a rare-noun OOV tail.
pub fn make_text_population(num_users: usize, sentences_per_user: usize, seed: u64) -> Result<TextPopulation> {
    if sentences_per_user == 0 {
        return Err(Error::invalid("sentences_per_user must be >= 1"));
    }
    let grammar = Grammar::new(seed);
    let clients = (0..num_users as ClientId)
        .map(|u| {
            let mut r = rng::stream(rng::derive_seed(seed, &[purpose::DATA, u]));
            ClientDataset {
                id: u,
                style: Style::None,
                examples: (0..sentences_per_user).map(|_| grammar.sentence(&mut r)).collect(),
            }
        })
        .collect();
    Ok(TextPopulation { clients })
}

/// Outcome counts of [`apply_concat_bug`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatStats {
    pub affected: usize,
    /// Selected sentences left alone because they had fewer than two tokens.
    pub too_short: usize,
}

/// Joins the first two tokens of each sentence with probability `fraction`,
/// independently per sentence across all users.
pub fn apply_concat_bug(pop: &TextPopulation, fraction: f64, seed: u64) -> Result<(TextPopulation, ConcatStats)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must be in [0, 1], got {fraction}")));
    }
    let mut out = pop.clone();
    let mut stats = ConcatStats::default();
    for c in &mut out.clients {
        let mut r = rng::stream(rng::derive_seed(seed, &[purpose::BUG, c.id]));
        for s in &mut c.examples {
            if r.random::<f64>() >= fraction {
                continue;
            }
            if s.len() < 2 {
                stats.too_short += 1;
                continue;
            }
            let second = s.remove(1);
            s[0] = format!("{} {}", s[0], second);
            stats.affected += 1;
        }
    }
    Ok((out, stats))
}

/// `true` for each token outside the vocabulary.
pub fn mark_oov(sentence: &[String], vocab: &Vocabulary) -> Vec<bool> {
    sentence.iter().map(|w| !vocab.contains(w)).collect()
}

/// Share of corpus tokens outside the vocabulary.
pub fn overall_oov_rate(pop: &TextPopulation, vocab: &Vocabulary) -> Result<f64> {
    let (mut oov, mut total) = (0usize, 0usize);
    for s in pop.sentences() {
        oov += mark_oov(s, vocab).iter().filter(|&&f| f).count();
        total += s.len();
    }
    if total == 0 {
        return Err(Error::invalid("empty corpus"));
    }
    Ok(oov as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> TextPopulation {
        make_text_population(200, 20, 5).unwrap()
    }

    fn words(s: &[&str]) -> Sentence {
        s.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn clean_oov_rate_in_band() {
        let p = corpus();
        let v = p.vocabulary(DEFAULT_VOCAB_SIZE);
        let rate = overall_oov_rate(&p, &v).unwrap();
        assert!((0.03..=0.10).contains(&rate), "{rate}");
        // sentence openers are always in vocabulary
        assert!(p.sentences().all(|s| v.contains(&s[0]) && v.contains(&s[1])));
    }

    #[test]
    fn deterministic_and_long_enough() {
        let p = corpus();
        assert_eq!(p, corpus());
        assert!(p.sentences().all(|s| s.len() >= 2));
        assert!(make_text_population(3, 0, 1).is_err());
    }

    #[test]
    fn concat_extremes() {
        let p = corpus();
        let (same, st) = apply_concat_bug(&p, 0.0, 1).unwrap();
        assert_eq!(same, p);
        assert_eq!(st.affected, 0);
        let (all, st) = apply_concat_bug(&p, 1.0, 1).unwrap();
        assert_eq!(st.affected, 4000);
        assert_eq!(all.num_tokens(), p.num_tokens() - 4000);
        for (a, b) in p.sentences().zip(all.sentences()) {
            assert_eq!(b.len(), a.len() - 1);
            assert_eq!(b[0], format!("{} {}", a[0], a[1]));
        }
    }

    #[test]
    fn concat_fraction_over_many_sentences() {
        let p = make_text_population(1000, 100, 2).unwrap();
        let (bugged, st) = apply_concat_bug(&p, 0.1, 0).unwrap();
        assert!((st.affected as f64 - 1e4).abs() <= 100.0, "{}", st.affected);
        assert_eq!(bugged.num_tokens(), p.num_tokens() - st.affected);
        // ±1% is about one binomial sd, so also check the mean over seeds
        let mean = (0..20).map(|s| apply_concat_bug(&p, 0.1, s).unwrap().1.affected).sum::<usize>() as f64 / 20.0;
        assert!((mean - 1e4).abs() <= 60.0, "{mean}");
    }

    #[test]
    fn short_sentences_are_counted_not_changed() {
        let p = TextPopulation {
            clients: vec![ClientDataset {
                id: 0,
                style: Style::None,
                examples: vec![words(&["hi"]), words(&["a", "b", "c"])],
            }],
        };
        let (b, st) = apply_concat_bug(&p, 1.0, 0).unwrap();
        assert_eq!(st, ConcatStats { affected: 1, too_short: 1 });
        assert_eq!(b.clients[0].examples[0], words(&["hi"]));
        assert_eq!(b.clients[0].examples[1], words(&["a b", "c"]));
    }

    #[test]
    fn oov_rate_monotone_in_bug_fraction() {
        let p = corpus();
        let v = p.vocabulary(DEFAULT_VOCAB_SIZE);
        let mut last = -1.0;
        for f in [0.0, 0.01, 0.1, 1.0] {
            let rate = overall_oov_rate(&apply_concat_bug(&p, f, 7).unwrap().0, &v).unwrap();
            assert!(rate > last, "{f}: {rate}");
            last = rate;
        }
    }

    #[test]
    fn oov_flags() {
        let v = Vocabulary::new(words(&["i", "have", "code"])).unwrap();
        assert_eq!(mark_oov(&words(&["i", "have", "code"]), &v), vec![false; 3]);
        assert_eq!(mark_oov(&words(&["i have", "code"]), &v), vec![true, false]);
        assert!(mark_oov(&[], &v).is_empty());
    }

    #[test]
    fn oov_rate_extremes_and_count() {
        let p = corpus();
        let all = p.vocabulary(usize::MAX);
        assert_eq!(overall_oov_rate(&p, &all).unwrap(), 0.0);
        assert_eq!(overall_oov_rate(&p, &Vocabulary::new(vec![]).unwrap()).unwrap(), 1.0);
        // 7 OOV tokens out of 100
        let mut s = vec![words(&["x"; 93])];
        s.push(words(&["y"; 7]));
        let fixture = TextPopulation {
            clients: vec![ClientDataset {
                id: 0,
                style: Style::None,
                examples: s,
            }],
        };
        let v = Vocabulary::new(words(&["x"])).unwrap();
        assert!((overall_oov_rate(&fixture, &v).unwrap() - 0.07).abs() < 1e-15);
    }
}
