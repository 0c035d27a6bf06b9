//! Seeded toy corpora with planted salient sentences.
//!
//! Words are pseudo-words built from consonant-vowel syllables. Each document
//! has a topic word. Salient sentences open with a cue word followed by the
//! topic word; the summary repeats them, either verbatim (copy cues) or with
//! the last word swapped for a fixed synonym (paraphrase cues). Some other
//! sentences mention the topic word, which gives them a small nonzero
//! salience score. Apart from the topic word no word repeats inside a
//! document, so no trigram repeats either.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawDocument;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
pub const COPY_CUES: [&str; 5] = ["notably", "indeed", "crucially", "mainly", "chiefly"];
pub const PARAPHRASE_CUES: [&str; 5] = ["reportedly", "reputedly", "allegedly", "apparently", "seemingly"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Words per sentence, before the final period.
    pub min_words: usize,
    pub max_words: usize,
    pub max_salient: usize,
    /// Probability that a non-salient sentence mentions the topic word.
    pub topic_mention_rate: f64,
    pub lexicon_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 32,
            min_sentences: 4,
            max_sentences: 8,
            min_words: 4,
            max_words: 7,
            max_salient: 2,
            topic_mention_rate: 0.4,
            lexicon_size: 150,
            seed: 0,
        }
    }
}

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i / VOWELS.len() % CONSONANTS.len()] as char;
    let v = VOWELS[i % VOWELS.len()] as char;
    format!("{c}{v}")
}

fn syllables() -> usize {
    CONSONANTS.len() * VOWELS.len()
}

/// Two-syllable content words, deterministic in `size`.
pub fn lexicon(size: usize) -> Vec<String> {
    let n = syllables();
    assert!(size <= n * n, "lexicon too large");
    // stride coprime with n*n spreads words over the syllable space
    (0..size).map(|i| i * 37 % (n * n)).map(|k| syllable(k / n) + &syllable(k % n)).collect()
}

/// Three-syllable synonym of a content word; never itself a content word.
pub fn synonym(word: &str) -> String {
    format!("{word}{}", syllable(word.len() * 7 + word.bytes().map(usize::from).sum::<usize>()))
}

/// Planted structure of one generated document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentPlan {
    pub id: String,
    pub n_sentences: usize,
    /// 0-based positions of the salient sentences.
    pub salient: Vec<usize>,
    pub paraphrased: Vec<bool>,
}

pub fn generate_corpus(config: &SyntheticConfig) -> Vec<RawDocument> {
    generate_with_plans(config).into_iter().map(|(d, _)| d).collect()
}

pub fn generate_with_plans(config: &SyntheticConfig) -> Vec<(RawDocument, DocumentPlan)> {
    assert!(config.min_words >= 3, "salient sentences need a cue, the topic and a body word");
    assert!(config.max_salient >= 1 && config.max_salient <= config.min_sentences);
    assert!(config.max_sentences * config.max_words < config.lexicon_size);
    let words = lexicon(config.lexicon_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.n_docs).map(|i| generate_document(format!("doc{i:04}"), &words, config, &mut rng)).collect()
}

fn generate_document(id: String, words: &[String], config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> (RawDocument, DocumentPlan) {
    let n = rng.gen_range(config.min_sentences..=config.max_sentences);
    let k = rng.gen_range(1..=config.max_salient);
    let mut salient: Vec<usize> = rand::seq::index::sample(rng, n, k).into_vec();
    salient.sort_unstable();

    let mut pool: Vec<&String> = words.iter().collect();
    pool.shuffle(rng);
    let topic = pool.pop().expect("lexicon is non-empty").clone();
    let mut cues_copy = COPY_CUES.to_vec();
    let mut cues_para = PARAPHRASE_CUES.to_vec();
    cues_copy.shuffle(rng);
    cues_para.shuffle(rng);

    let mut article = Vec::with_capacity(n);
    let mut summary = Vec::new();
    let mut paraphrased = Vec::new();
    for s in 0..n {
        let len = rng.gen_range(config.min_words..=config.max_words);
        if salient.contains(&s) {
            let para = rng.gen_bool(0.5);
            let cue = if para { cues_para.pop() } else { cues_copy.pop() }.expect("enough cues");
            let mut toks = vec![cue.to_string(), topic.clone()];
            toks.extend((2..len).map(|_| pool.pop().expect("lexicon exhausted").clone()));
            article.push(format!("{} .", toks.join(" ")));
            if para {
                let last = toks.last_mut().expect("non-empty");
                *last = synonym(last);
            }
            summary.push(format!("{} .", toks.join(" ")));
            paraphrased.push(para);
        } else {
            let mut toks: Vec<String> = (0..len).map(|_| pool.pop().expect("lexicon exhausted").clone()).collect();
            if rng.gen_bool(config.topic_mention_rate) {
                let at = rng.gen_range(0..len);
                toks[at] = topic.clone();
            }
            article.push(format!("{} .", toks.join(" ")));
        }
    }
    let doc = RawDocument::new(id.clone(), article.join(" "), summary.join(" "));
    let plan = DocumentPlan {
        id,
        n_sentences: n,
        salient,
        paraphrased,
    };
    (doc, plan)
}
