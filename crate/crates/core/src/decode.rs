//! Guided generation: salience prediction, guidance construction and beam
//! search with length penalty, n-gram blocking and length bounds.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_document, EncodedDocument, RawDocument, TokenId, Vocabulary, BOS, EOS, PAD, SENT, UNK};
use crate::error::{Error, Result};
use crate::model::{argmax_degrees, CrossMemory, Estimation, Model, Session};
use crate::salience::{score_document, ThresholdSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// n-gram size to block; 0 disables blocking.
    pub block_ngram: usize,
    /// Minimum number of content tokens before EOS is allowed.
    pub min_len: usize,
    /// Maximum number of content tokens; EOS is forced afterwards.
    pub max_len: usize,
    pub tau: f64,
    pub estimation: Estimation,
    /// Include per-sentence degree distributions in the output.
    pub emit_probs: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            length_penalty: 1.5,
            block_ngram: 3,
            min_len: 20,
            max_len: 128,
            tau: 0.5,
            estimation: Estimation::Soft,
            emit_probs: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.block_ngram == 1 {
            return Err(Error::Config("block_ngram must be 0 or at least 2".into()));
        }
        if self.min_len >= self.max_len {
            return Err(Error::Config("min_len must be below max_len".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// BOS-prefixed.
    pub tokens: Vec<TokenId>,
    pub logprob_sum: f64,
    pub finished: bool,
    n: usize,
    /// Continuations seen after each (n-1)-token context.
    ngrams: HashMap<Vec<TokenId>, BTreeSet<TokenId>>,
}

impl BeamHypothesis {
    pub fn new(n: usize) -> Self {
        Self {
            tokens: vec![BOS],
            logprob_sum: 0.0,
            finished: false,
            n,
            ngrams: HashMap::new(),
        }
    }

    pub fn from_tokens(tokens: Vec<TokenId>, logprob_sum: f64, n: usize) -> Self {
        let mut h = Self::new(n);
        h.tokens.clear();
        for t in tokens {
            h.push_token(t);
        }
        h.logprob_sum = logprob_sum;
        h
    }

    fn push_token(&mut self, t: TokenId) {
        self.tokens.push(t);
        if self.n >= 2 && self.tokens.len() >= self.n {
            let k = self.tokens.len();
            let ctx = self.tokens[k - self.n..k - 1].to_vec();
            self.ngrams.entry(ctx).or_default().insert(t);
        }
        self.finished = t == EOS;
    }

    fn extend(&self, t: TokenId, logprob: f64) -> Self {
        let mut h = self.clone();
        h.push_token(t);
        h.logprob_sum += logprob;
        h
    }

    /// Generated length, excluding BOS.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokens that would repeat an n-gram, via the stored n-gram index.
    pub fn blocked(&self) -> BTreeSet<TokenId> {
        if self.n < 2 || self.tokens.len() < self.n - 1 {
            return BTreeSet::new();
        }
        let ctx = &self.tokens[self.tokens.len() + 1 - self.n..];
        self.ngrams.get(ctx).cloned().unwrap_or_default()
    }

    /// Content tokens, without BOS and EOS.
    pub fn content(&self) -> &[TokenId] {
        let end = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }
}

/// `logprob_sum / len^penalty`, with `len` excluding BOS.
pub fn score_hypothesis(hyp: &BeamHypothesis, length_penalty: f64) -> f64 {
    hyp.logprob_sum / (hyp.len().max(1) as f64).powf(length_penalty)
}

/// Tokens `t` such that the n-gram ending in `t` already occurs in `tokens`.
pub fn blocked_tokens(tokens: &[TokenId], n: usize) -> BTreeSet<TokenId> {
    assert!(n >= 2, "n-gram size must be at least 2");
    let mut out = BTreeSet::new();
    if tokens.len() < n - 1 {
        return out;
    }
    let ctx = &tokens[tokens.len() + 1 - n..];
    for w in tokens.windows(n) {
        if &w[..n - 1] == ctx {
            out.insert(w[n - 1]);
        }
    }
    out
}

/// Anything that can score next tokens for a prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities of the token following `prefix`.
    fn next_log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>>;
    /// Tokens never generated.
    fn forbidden(&self) -> &[TokenId] {
        &[]
    }
}

/// Applies forbidden, length and blocking masks in place.
fn mask_step(lp: &mut [f64], hyp: &BeamHypothesis, forbidden: &[TokenId], config: &DecodeConfig) {
    let neg = f64::NEG_INFINITY;
    for &t in forbidden {
        if let Some(v) = lp.get_mut(t as usize) {
            *v = neg;
        }
    }
    let content = hyp.len();
    if content >= config.max_len {
        for (t, v) in lp.iter_mut().enumerate() {
            if t != EOS as usize {
                *v = neg;
            }
        }
        return;
    }
    if content < config.min_len {
        lp[EOS as usize] = neg;
    }
    if config.block_ngram >= 2 {
        let saved: Vec<(usize, f64)> = hyp.blocked().iter().map(|&t| (t as usize, lp[t as usize])).collect();
        for &(t, _) in &saved {
            lp[t] = neg;
        }
        if lp.iter().all(|v| *v == neg) {
            log::debug!("every token blocked after {} tokens; relaxing blocking for one step", content);
            for (t, v) in saved {
                lp[t] = v;
            }
        }
    }
    if lp.iter().all(|v| *v == neg) {
        lp[EOS as usize] = 0.0;
    }
}

/// Beam search. Candidates are ranked by cumulative log-probability, ties
/// by lower token id and then earlier hypothesis. Finished hypotheses retire
/// to a pool; the pool's best length-penalized score wins.
pub fn beam_search(model: &mut dyn StepModel, config: &DecodeConfig) -> Result<BeamHypothesis> {
    let n = if config.block_ngram >= 2 { config.block_ngram } else { 0 };
    let forbidden = model.forbidden().to_vec();
    let mut live = vec![BeamHypothesis::new(n)];
    let mut pool: Vec<BeamHypothesis> = Vec::new();
    while !live.is_empty() && pool.len() < config.beam_size {
        let mut cands: Vec<(f64, TokenId, usize)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let mut lp = model.next_log_probs(&hyp.tokens)?;
            mask_step(&mut lp, hyp, &forbidden, config);
            for (t, &v) in lp.iter().enumerate() {
                if v > f64::NEG_INFINITY {
                    cands.push((hyp.logprob_sum + v, t as TokenId, hi));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(config.beam_size);
        for &(score, t, hi) in cands.iter().take(config.beam_size) {
            let lp = score - live[hi].logprob_sum;
            let h = live[hi].extend(t, lp);
            if h.finished {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    let mut best: Option<(f64, BeamHypothesis)> = None;
    for h in pool {
        let s = score_hypothesis(&h, config.length_penalty);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, h));
        }
    }
    Ok(best.map(|(_, h)| h).expect("the search always retires a hypothesis"))
}

/// Greedy decoding under the same masks as [`beam_search`].
pub fn greedy_search(model: &mut dyn StepModel, config: &DecodeConfig) -> Result<BeamHypothesis> {
    let n = if config.block_ngram >= 2 { config.block_ngram } else { 0 };
    let forbidden = model.forbidden().to_vec();
    let mut hyp = BeamHypothesis::new(n);
    while !hyp.finished {
        let mut lp = model.next_log_probs(&hyp.tokens)?;
        mask_step(&mut lp, &hyp, &forbidden, config);
        let mut best = 0;
        for (t, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = t;
            }
        }
        hyp = hyp.extend(best as TokenId, lp[best]);
    }
    Ok(hyp)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

const NEVER_GENERATED: [TokenId; 4] = [PAD, BOS, UNK, SENT];

/// A model session with a fixed encoder memory, decoding one prefix at a time.
pub struct GuidedDecoder<'m> {
    session: Session<'m>,
    memory: CrossMemory,
    base_len: usize,
    /// Degree distribution per sentence at the decode temperature.
    pub degree_probs: Vec<Vec<f64>>,
    /// Degrees of the guidance actually fed to the decoder.
    pub guidance_degrees: Vec<usize>,
    /// Argmax of the predicted distribution.
    pub predicted_degrees: Vec<usize>,
}

impl<'m> GuidedDecoder<'m> {
    pub fn new(model: &'m Model, doc: &EncodedDocument, estimation: Estimation, tau: f64, gold: Option<&[usize]>) -> Result<Self> {
        let mut s = Session::new(model);
        let enc = s.encode(&doc.input_ids, &doc.marker_positions)?;
        let probs = s.salience_probs(enc.sentence_states, tau)?;
        let probs_value = s.tape.value(probs).clone();
        let predicted = argmax_degrees(&probs_value);
        let (sent, used) = match estimation {
            Estimation::Soft => (s.salience_embedding_soft(probs)?, predicted.clone()),
            Estimation::Hard => (s.salience_embedding_hard(probs)?, predicted.clone()),
            Estimation::Gold => {
                let gold = gold.ok_or_else(|| Error::MissingReference(doc.id.clone()))?;
                if gold.len() != doc.n_sentences {
                    return Err(Error::MissingLabels(doc.id.clone()));
                }
                (s.salience_embedding_gold(gold)?, gold.to_vec())
            }
        };
        let z = s.broadcast_salience(sent, &doc.sent_index)?;
        let memory = s.cross_memory(&enc, Some(z))?;
        let base_len = s.tape.len();
        let degree_probs = (0..probs_value.rows()).map(|r| probs_value.row(r).to_vec()).collect();
        Ok(Self {
            session: s,
            memory,
            base_len,
            degree_probs,
            guidance_degrees: used,
            predicted_degrees: predicted,
        })
    }
}

impl StepModel for GuidedDecoder<'_> {
    fn vocab_size(&self) -> usize {
        self.session.model().config.vocab_size
    }

    fn next_log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let logits = self.session.decode_step(prefix, &self.memory)?;
        let lp = log_softmax(self.session.tape.value(logits).data());
        self.session.tape.truncate(self.base_len);
        Ok(lp)
    }

    fn forbidden(&self) -> &[TokenId] {
        &NEVER_GENERATED
    }
}

/// One generated summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSummary {
    pub id: String,
    pub summary: String,
    /// Predicted degree per sentence (argmax at the decode temperature).
    pub degrees: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree_probs: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub tokens: Vec<TokenId>,
}

/// Decodes one encoded document.
pub fn generate_encoded(
    model: &Model,
    vocab: &Vocabulary,
    doc: &EncodedDocument,
    gold: Option<&[usize]>,
    config: &DecodeConfig,
) -> Result<GeneratedSummary> {
    let mut dec = GuidedDecoder::new(model, doc, config.estimation, config.tau, gold)?;
    let hyp = beam_search(&mut dec, config)?;
    let tokens = hyp.content().to_vec();
    Ok(GeneratedSummary {
        id: doc.id.clone(),
        summary: vocab.detokenize(&tokens),
        degrees: dec.predicted_degrees.clone(),
        degree_probs: config.emit_probs.then(|| dec.degree_probs.clone()),
        tokens,
    })
}

/// Oracle degrees of `doc` under `thresholds`, limited to the first `n` sentences.
pub fn gold_degrees(doc: &RawDocument, thresholds: &ThresholdSpec, n: usize) -> Result<Vec<usize>> {
    let scores = score_document(doc)?;
    let mut degrees = thresholds.allocate(&scores).degrees;
    degrees.truncate(n);
    Ok(degrees)
}

/// Generates a summary for every document. Gold estimation labels each
/// document against its reference using `thresholds`.
pub fn generate(
    model: &Model,
    vocab: &Vocabulary,
    docs: &[RawDocument],
    thresholds: Option<&ThresholdSpec>,
    config: &DecodeConfig,
    max_src: usize,
) -> Result<Vec<GeneratedSummary>> {
    config.validate()?;
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let encoded = encode_document(doc, vocab, max_src, 2)?;
        let gold = match config.estimation {
            Estimation::Gold => {
                if doc.summary.trim().is_empty() {
                    return Err(Error::MissingReference(doc.id.clone()));
                }
                let spec = thresholds.ok_or_else(|| Error::Config("gold estimation needs thresholds".into()))?;
                Some(gold_degrees(doc, spec, encoded.n_sentences)?)
            }
            _ => None,
        };
        out.push(generate_encoded(model, vocab, &encoded, gold.as_deref(), config)?);
        log::debug!("generated {}", doc.id);
    }
    Ok(out)
}

/// True when some n-gram occurs twice in `tokens`.
pub fn has_repeated_ngram(tokens: &[TokenId], n: usize) -> bool {
    let mut seen = std::collections::HashSet::new();
    tokens.windows(n).any(|w| !seen.insert(w))
}
