//! Corpus ingestion: sentence splitting, word-level vocabulary and document
//! encoding with per-sentence marker tokens.
//!
//! Every sentence of an encoded article is prefixed with a `<sent>` marker.
//! The encoder's hidden state at that marker is later used as the sentence
//! representation, and every token (marker included) remembers the 1-based
//! index of the sentence it belongs to.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SENT: TokenId = 4;

/// Literal spellings of the special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<sent>"];

pub const DEFAULT_MAX_SRC: usize = 512;
pub const DEFAULT_MAX_TGT: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub article: String,
    #[serde(default)]
    pub summary: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, article: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            article: article.into(),
            summary: summary.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplit {
    pub sentences: Vec<String>,
    /// Byte offsets `(start, end)` of each sentence in the source text.
    pub char_spans: Vec<(usize, usize)>,
}

impl SentenceSplit {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}' | '\u{bb}')
}

/// Rule-based sentence splitter.
///
/// A sentence ends at a run of `.`, `!` or `?` that is followed by whitespace
/// or the end of the text. Quotes and closing brackets directly after the
/// terminator stay with the sentence they close.
pub fn split_sentences(text: &str) -> Result<SentenceSplit> {
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument(String::new()));
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if !is_terminator(chars[i].1) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if at_boundary {
            let end = if j == chars.len() { text.len() } else { chars[j].0 };
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
        i = j;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    if spans.is_empty() {
        let (s, e) = trimmed_bounds(text, 0, text.len()).expect("non-blank text");
        spans.push((s, e));
    }
    Ok(SentenceSplit {
        sentences: spans.iter().map(|&(s, e)| text[s..e].to_string()).collect(),
        char_spans: spans,
    })
}

fn trimmed_bounds(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some((start + lead, start + lead + trimmed.len()))
    }
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    if let Some(span) = trimmed_bounds(text, start, end) {
        spans.push(span);
    }
}

/// Lowercased word tokens: alphanumeric runs, and every other
/// non-whitespace character as a token of its own. Special-token literals
/// such as `<unk>` are kept whole so decoded text re-encodes identically.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            if let Some(special) = SPECIAL_TOKENS.iter().find(|s| rest.starts_with(**s)) {
                flush(&mut word, &mut tokens);
                tokens.push((*special).to_string());
                rest = &rest[special.len()..];
                continue;
            }
        }
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut tokens);
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

/// Tokens used for ROUGE and fragment statistics: lowercased alphanumeric
/// runs only, punctuation dropped.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    line: id + 1,
                    message: format!("expected special token {special}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate token {tok:?}"),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(SPECIAL_TOKENS[UNK as usize])
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with single spaces, dropping PAD/BOS/EOS/SENT.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | SENT))
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Frequency-ranked word vocabulary over articles and summaries. Ties are
/// broken lexicographically; `max_size` includes the five special tokens.
pub fn build_vocab(corpus: &[RawDocument], max_size: usize) -> Vocabulary {
    assert!(max_size > SPECIAL_TOKENS.len(), "max_size must leave room for words");
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for text in [&doc.article, &doc.summary] {
            for tok in tokenize(text) {
                if !SPECIAL_TOKENS.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - SPECIAL_TOKENS.len())
            .map(|(t, _)| t),
    );
    Vocabulary::from_tokens(tokens).expect("specials are in place")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDocument {
    pub id: String,
    /// Source tokens with a SENT marker prepended to every sentence.
    pub input_ids: Vec<TokenId>,
    /// 1-based sentence index of every input token.
    pub sent_index: Vec<usize>,
    pub marker_positions: Vec<usize>,
    /// `[BOS, tokens.., EOS]`.
    pub target_ids: Vec<TokenId>,
    pub n_sentences: usize,
}

impl EncodedDocument {
    pub fn src_len(&self) -> usize {
        self.input_ids.len()
    }
}

pub fn encode_document(
    doc: &RawDocument,
    vocab: &Vocabulary,
    max_src: usize,
    max_tgt: usize,
) -> Result<EncodedDocument> {
    let split = split_sentences(&doc.article).map_err(|_| Error::EmptyDocument(doc.id.clone()))?;
    encode_sentences(&doc.id, &split.sentences, &doc.summary, vocab, max_src, max_tgt)
}

/// Encodes already-split sentences. Input is truncated at `max_src` tokens
/// without ever leaving a SENT marker that has no body token after it.
pub fn encode_sentences(
    id: &str,
    sentences: &[String],
    summary: &str,
    vocab: &Vocabulary,
    max_src: usize,
    max_tgt: usize,
) -> Result<EncodedDocument> {
    assert!(max_src >= 2 && max_tgt >= 2);
    let mut input_ids = Vec::new();
    let mut sent_index = Vec::new();
    let mut marker_positions = Vec::new();
    for sentence in sentences {
        let body = vocab.encode_text(sentence);
        if body.is_empty() {
            continue;
        }
        if max_src - input_ids.len() < 2 {
            break;
        }
        let n = marker_positions.len() + 1;
        marker_positions.push(input_ids.len());
        input_ids.push(SENT);
        sent_index.push(n);
        for tok in body {
            if input_ids.len() == max_src {
                break;
            }
            input_ids.push(tok);
            sent_index.push(n);
        }
    }
    if input_ids.is_empty() {
        return Err(Error::EmptyDocument(id.to_string()));
    }

    let mut target_ids = vec![BOS];
    target_ids.extend(vocab.encode_text(summary).into_iter().take(max_tgt - 2));
    target_ids.push(EOS);

    Ok(EncodedDocument {
        id: id.to_string(),
        n_sentences: marker_positions.len(),
        input_ids,
        sent_index,
        marker_positions,
        target_ids,
    })
}

/// Recovers per-sentence text from encoded input ids, using SENT markers as
/// boundaries. Encoding the result with [`encode_sentences`] reproduces the
/// original `input_ids`.
pub fn decode_sentences(input_ids: &[TokenId], vocab: &Vocabulary) -> Vec<String> {
    let mut sentences: Vec<Vec<TokenId>> = Vec::new();
    for &id in input_ids {
        match id {
            SENT => sentences.push(Vec::new()),
            PAD => {}
            _ => match sentences.last_mut() {
                Some(s) => s.push(id),
                None => sentences.push(vec![id]),
            },
        }
    }
    sentences
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| vocab.detokenize(s))
        .collect()
}

/// Reads a JSON-lines corpus with `id`, `article` and `summary` fields.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    article: String,
    summary: Option<String>,
}

pub fn parse_corpus(text: &str) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if parsed.article.trim().is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "article is empty".into(),
            });
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::DuplicateId(parsed.id));
        }
        docs.push(RawDocument {
            id: parsed.id,
            article: parsed.article,
            summary: parsed.summary.unwrap_or_default(),
        });
    }
    if docs.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "corpus is empty".into(),
        });
    }
    Ok(docs)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(article: &str, summary: &str) -> RawDocument {
        RawDocument::new("d", article, summary)
    }

    #[test]
    fn splits_single_and_double() {
        assert_eq!(split_sentences("A cat sat.").unwrap().sentences, vec!["A cat sat."]);
        assert_eq!(split_sentences("Hi. Bye!").unwrap().sentences, vec!["Hi.", "Bye!"]);
    }

    // Hand oracle for the quote rule: the only boundary is after `."` since
    // that is the only terminator run (plus closers) followed by whitespace.
    #[test]
    fn quote_stays_with_sentence() {
        let text = "He said \"Go.\" Then left.";
        let split = split_sentences(text).unwrap();
        assert_eq!(split.sentences, vec!["He said \"Go.\"", "Then left."]);
        assert_eq!(split.char_spans, vec![(0, 13), (14, 24)]);
    }

    #[test]
    fn no_split_inside_numbers_and_fallback() {
        let split = split_sentences("Pi is 3.14 roughly").unwrap();
        assert_eq!(split.sentences, vec!["Pi is 3.14 roughly"]);
        assert!(matches!(split_sentences("  \n "), Err(Error::EmptyDocument(_))));
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(tokenize("a <unk> b"), vec!["a", "<unk>", "b"]);
        assert_eq!(metric_tokens("Hello, World!"), vec!["hello", "world"]);
    }

    #[test]
    fn vocab_frequency_order_and_truncation() {
        let corpus = vec![doc("a a b", "")];
        let v = build_vocab(&corpus, 7);
        assert_eq!(v.tokens(), &["<pad>", "<s>", "</s>", "<unk>", "<sent>", "a", "b"]);
        let v6 = build_vocab(&corpus, 6);
        assert_eq!(v6.len(), 6);
        assert_eq!(v6.id("b"), UNK);
        let tie = build_vocab(&[doc("y x y x", "")], 10);
        assert_eq!(&tie.tokens()[5..], &["x", "y"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&[doc("the cat sat on the mat.", "a cat")], 50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        fs::write(&path, "a\nb\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    #[test]
    fn encodes_with_markers() {
        let d = doc("hi. bye.", "");
        let v = build_vocab(std::slice::from_ref(&d), 20);
        let e = encode_document(&d, &v, 512, 128).unwrap();
        let (hi, bye, dot) = (v.id("hi"), v.id("bye"), v.id("."));
        assert_eq!(e.input_ids, vec![SENT, hi, dot, SENT, bye, dot]);
        assert_eq!(e.sent_index, vec![1, 1, 1, 2, 2, 2]);
        assert_eq!(e.marker_positions, vec![0, 3]);
        assert_eq!(e.n_sentences, 2);
        assert_eq!(e.target_ids, vec![BOS, EOS]);
    }

    // Hand-applied truncation: after [SENT, hi, .] one slot remains, which
    // would hold only a marker, so the second sentence is dropped entirely.
    #[test]
    fn truncation_drops_dangling_marker() {
        let d = doc("hi. bye.", "bye");
        let v = build_vocab(std::slice::from_ref(&d), 20);
        let e = encode_document(&d, &v, 4, 128).unwrap();
        assert_eq!(e.input_ids, vec![SENT, v.id("hi"), v.id(".")]);
        assert_eq!(e.n_sentences, 1);
        let e5 = encode_document(&d, &v, 5, 128).unwrap();
        assert_eq!(e5.input_ids, vec![SENT, v.id("hi"), v.id("."), SENT, v.id("bye")]);
    }

    #[test]
    fn target_truncation_keeps_eos() {
        let d = doc("a b c.", "a b c d e f");
        let v = build_vocab(std::slice::from_ref(&d), 20);
        let e = encode_document(&d, &v, 512, 4).unwrap();
        assert_eq!(e.target_ids, vec![BOS, v.id("a"), v.id("b"), EOS]);
    }

    #[test]
    fn corpus_parsing_contracts() {
        let one = r#"{"id":"1","article":"A b.","summary":"b"}"#;
        assert_eq!(parse_corpus(one).unwrap().len(), 1);
        match parse_corpus(r#"{"id":"1","summary":"b"}"#) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let three = [
            r#"{"id":"c","article":"x.","summary":""}"#,
            r#"{"id":"a","article":"y.","summary":""}"#,
            r#"{"id":"b","article":"z.","summary":""}"#,
        ]
        .join("\n");
        let ids: Vec<_> = parse_corpus(&three).unwrap().into_iter().map(|d| d.id).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
        let dup = [one, one].join("\n");
        assert!(matches!(parse_corpus(&dup), Err(Error::DuplicateId(_))));
        assert!(matches!(parse_corpus(""), Err(Error::Parse { .. })));
    }

    fn article_strategy() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec!["alpha", "beta", "Gamma", "d", "e1", "x", "\"q\"", "(p)"]);
        let sentence = (prop::collection::vec(word, 1..6), prop::sample::select(vec![".", "!", "?", ".\""]))
            .prop_map(|(w, t)| format!("{}{}", w.join(" "), t));
        prop::collection::vec(sentence, 1..8).prop_map(|s| s.join(" "))
    }

    proptest! {
        #[test]
        fn encode_invariants(article in article_strategy(), max_src in 2usize..40) {
            let d = doc(&article, "alpha beta");
            let v = build_vocab(std::slice::from_ref(&d), 9);
            let e = encode_document(&d, &v, max_src, 16).unwrap();
            prop_assert_eq!(e.sent_index.len(), e.input_ids.len());
            prop_assert!(e.input_ids.len() <= max_src);
            prop_assert_eq!(e.marker_positions.len(), e.n_sentences);
            prop_assert_eq!(e.input_ids.iter().filter(|&&t| t == SENT).count(), e.n_sentences);
            prop_assert!(e.sent_index.windows(2).all(|w| w[0] <= w[1]));
            for (j, &start) in e.marker_positions.iter().enumerate() {
                let end = e.marker_positions.get(j + 1).copied().unwrap_or(e.input_ids.len());
                prop_assert!(end - start >= 2);
                prop_assert!(e.sent_index[start..end].iter().all(|&s| s == j + 1));
            }
            let sentences = decode_sentences(&e.input_ids, &v);
            let again = encode_sentences("d", &sentences, "alpha beta", &v, max_src, 16).unwrap();
            prop_assert_eq!(again.input_ids, e.input_ids);
        }

        #[test]
        fn split_spans_cover_text(article in article_strategy()) {
            let split = split_sentences(&article).unwrap();
            let mut prev_end = 0;
            for (&(s, e), sent) in split.char_spans.iter().zip(&split.sentences) {
                prop_assert!(s >= prev_end && e <= article.len() && s < e);
                prop_assert_eq!(&article[s..e], sent.as_str());
                prop_assert!(article[prev_end..s].trim().is_empty());
                prev_end = e;
            }
            prop_assert!(article[prev_end..].trim().is_empty());
        }
    }
}
