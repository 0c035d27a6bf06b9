//! Miniature pre-norm Transformer encoder-decoder with salience guidance.
//!
//! The encoder reads the marker-augmented source; hidden states at the SENT
//! markers are the sentence representations. A linear head predicts a
//! distribution over salience degrees for each sentence. The decoder's
//! cross-attention uses `encoder_states + salience` as keys and the plain
//! encoder states as values (salience-aware cross-attention, SACA).

use std::fs;
use std::path::Path;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Number of salience degrees `L`.
    pub n_degrees: usize,
    /// Sharpening temperature for predicted guidance at inference.
    pub tau: f64,
    /// Temperature of the classification softmax during training.
    pub train_tau: f64,
    pub dropout: f64,
    pub max_positions: usize,
    /// Feed salience into cross-attention keys. When false the decoder
    /// attends with plain encoder states.
    pub saca: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            ffn_dim: 512,
            vocab_size: 0,
            n_degrees: 3,
            tau: 0.5,
            train_tau: 1.0,
            dropout: 0.1,
            max_positions: 512,
            saca: true,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.tau <= 0.0 || self.train_tau <= 0.0 {
            return fail("tau must be positive".into());
        }
        if self.n_degrees < 2 {
            return fail("n_degrees must be at least 2".into());
        }
        if self.vocab_size < 6 {
            return fail("vocab_size must be set".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Matrices get weight decay; biases and norm gains do not.
    pub fn decays(&self, i: usize) -> bool {
        self.tensors[i].shape().len() == 2
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln1: NormIdx,
    attn: AttnIdx,
    ln2: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln1: NormIdx,
    self_attn: AttnIdx,
    ln2: NormIdx,
    cross_attn: AttnIdx,
    ln3: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    enc_pos: usize,
    dec_pos: usize,
    enc: Vec<EncLayer>,
    enc_ln: NormIdx,
    dec: Vec<DecLayer>,
    dec_ln: NormIdx,
    cls_w: usize,
    cls_b: usize,
    sal_emb: usize,
}

struct Builder<'r> {
    set: ParamSet,
    rng: &'r mut ChaCha8Rng,
    std: f64,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let t = Tensor::randn(&[rows, cols], self.std, self.rng);
        self.set.add(name, t)
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.set.add(name, Tensor::zeros(&[n]))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.set.add(format!("{prefix}.gain"), Tensor::full(&[d], 1.0)),
            bias: self.bias(format!("{prefix}.bias"), d),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.weight(format!("{prefix}.wq"), d, d),
            bq: self.bias(format!("{prefix}.bq"), d),
            wk: self.weight(format!("{prefix}.wk"), d, d),
            bk: self.bias(format!("{prefix}.bk"), d),
            wv: self.weight(format!("{prefix}.wv"), d, d),
            bv: self.bias(format!("{prefix}.bv"), d),
            wo: self.weight(format!("{prefix}.wo"), d, d),
            bo: self.bias(format!("{prefix}.bo"), d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, hidden: usize) -> FfnIdx {
        FfnIdx {
            w1: self.weight(format!("{prefix}.w1"), d, hidden),
            b1: self.bias(format!("{prefix}.b1"), hidden),
            w2: self.weight(format!("{prefix}.w2"), hidden, d),
            b2: self.bias(format!("{prefix}.b2"), d),
        }
    }
}

fn build(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (ParamSet, Layout) {
    let d = config.d_model;
    let mut b = Builder {
        set: ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        },
        rng,
        std: config.init_std,
    };
    let tok_emb = b.weight("tok_emb".into(), config.vocab_size, d);
    let enc_pos = b.weight("enc_pos".into(), config.max_positions, d);
    let dec_pos = b.weight("dec_pos".into(), config.max_positions, d);
    let enc = (0..config.n_enc_layers)
        .map(|i| EncLayer {
            ln1: b.norm(&format!("enc.{i}.ln1"), d),
            attn: b.attn(&format!("enc.{i}.attn"), d),
            ln2: b.norm(&format!("enc.{i}.ln2"), d),
            ffn: b.ffn(&format!("enc.{i}.ffn"), d, config.ffn_dim),
        })
        .collect();
    let enc_ln = b.norm("enc.ln_f", d);
    let dec = (0..config.n_dec_layers)
        .map(|i| DecLayer {
            ln1: b.norm(&format!("dec.{i}.ln1"), d),
            self_attn: b.attn(&format!("dec.{i}.self_attn"), d),
            ln2: b.norm(&format!("dec.{i}.ln2"), d),
            cross_attn: b.attn(&format!("dec.{i}.cross_attn"), d),
            ln3: b.norm(&format!("dec.{i}.ln3"), d),
            ffn: b.ffn(&format!("dec.{i}.ffn"), d, config.ffn_dim),
        })
        .collect();
    let dec_ln = b.norm("dec.ln_f", d);
    let cls_w = b.weight("salience.w".into(), d, config.n_degrees);
    let cls_b = b.bias("salience.b".into(), config.n_degrees);
    let sal_emb = b.set.add("salience.emb", Tensor::zeros(&[config.n_degrees, d]));
    let layout = Layout {
        tok_emb,
        enc_pos,
        dec_pos,
        enc,
        enc_ln,
        dec,
        dec_ln,
        cls_w,
        cls_b,
        sal_emb,
    };
    (b.set, layout)
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
}

/// Which salience estimate feeds the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    /// Expected embedding under the predicted degree distribution.
    #[default]
    Soft,
    /// Embedding of the most probable degree.
    Hard,
    /// Embedding of the oracle degree.
    Gold,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = build(&config, &mut rng);
        Ok(Self { config, params, layout })
    }

    /// A twin with the same weights and the given SACA switch.
    pub fn with_saca(&self, saca: bool) -> Self {
        let mut twin = self.clone();
        twin.config.saca = saca;
        twin
    }

    /// A copy at a generic parameter point: fan-in scaled weight matrices
    /// (salience embeddings included), gains near 1 and small random biases.
    /// Finite-difference checks need this because the initial point has a
    /// tiny residual stream, where LayerNorm curvature swamps the differences.
    pub fn scrambled(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for (name, t) in out.params.names.iter().zip(out.params.tensors.iter_mut()) {
            let shape = t.shape().to_vec();
            let noise = if shape.len() == 2 {
                Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
            } else {
                Tensor::randn(&shape, 0.1, &mut rng)
            };
            let offset = if name.ends_with(".gain") { 1.0 } else { 0.0 };
            *t = Tensor::new(shape, noise.data().iter().map(|x| x + offset).collect()).expect("same shape");
        }
        out
    }

    pub fn salience_embeddings(&self) -> &Tensor {
        &self.params.tensors[self.layout.sal_emb]
    }

    pub fn salience_embeddings_mut(&mut self) -> &mut Tensor {
        &mut self.params.tensors[self.layout.sal_emb]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_model(self, None).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.into_model()
    }
}

/// Encoder output on a session tape.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[seq_len, d_model]`.
    pub token_states: Var,
    /// `[n_sentences, d_model]`, rows gathered at the SENT markers.
    pub sentence_states: Var,
    /// True at padding positions.
    pub padding: Vec<bool>,
}

/// Per-layer projected cross-attention keys and values.
#[derive(Debug, Clone)]
pub struct CrossMemory {
    keys: Vec<Var>,
    values: Vec<Var>,
    padding: Vec<bool>,
}

/// A forward pass over one tape. Parameters are bound by reference.
pub struct Session<'m> {
    pub tape: Tape<'m>,
    model: &'m Model,
    vars: Vec<Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'m> Session<'m> {
    /// Evaluation mode: no dropout.
    pub fn new(model: &'m Model) -> Self {
        let mut tape = Tape::new();
        let vars = model.params.tensors.iter().map(|t| tape.param(t)).collect();
        Self {
            tape,
            model,
            vars,
            dropout: None,
        }
    }

    /// Training mode with dropout masks drawn from `seed`.
    pub fn training(model: &'m Model, seed: u64) -> Self {
        let mut s = Self::new(model);
        if model.config.dropout > 0.0 {
            s.dropout = Some((model.config.dropout, ChaCha8Rng::seed_from_u64(seed)));
        }
        s
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let p = *p;
        let shape = self.tape.value(x).shape().to_vec();
        let keep = 1.0 / (1.0 - p);
        let n = shape.iter().product();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    fn norm(&mut self, x: Var, n: &NormIdx) -> Result<Var> {
        let (g, b) = (self.p(n.gain), self.p(n.bias));
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        let h = self.tape.matmul(x, self.p(w))?;
        self.tape.add(h, self.p(b))
    }

    fn ffn(&mut self, x: Var, f: &FfnIdx) -> Result<Var> {
        let h = self.linear(x, f.w1, f.b1)?;
        let h = self.tape.gelu(h);
        self.linear(h, f.w2, f.b2)
    }

    /// Multi-head scaled dot-product attention over projected `q`, `k`, `v`.
    /// `mask[i * k_len + j]` hides key `j` from query `i`.
    fn attend(&mut self, q: Var, k: Var, v: Var, mask: &[bool], a: &AttnIdx) -> Result<Var> {
        let d = self.model.config.d_model;
        let heads = self.model.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    self.tape.slice_cols(q, lo, hi)?,
                    self.tape.slice_cols(k, lo, hi)?,
                    self.tape.slice_cols(v, lo, hi)?,
                )
            };
            let scores = self.tape.matmul_t(qh, kh)?;
            let scores = self.tape.scale(scores, scale);
            let scores = if mask.iter().any(|&m| m) {
                self.tape.masked_fill(scores, mask, f64::NEG_INFINITY)?
            } else {
                scores
            };
            let weights = self.tape.softmax(scores, 1.0);
            outs.push(self.tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs)? };
        self.linear(joined, a.wo, a.bo)
    }

    fn self_attention(&mut self, x: Var, mask: &[bool], a: &AttnIdx) -> Result<Var> {
        let q = self.linear(x, a.wq, a.bq)?;
        let k = self.linear(x, a.wk, a.bk)?;
        let v = self.linear(x, a.wv, a.bv)?;
        self.attend(q, k, v, mask, a)
    }

    fn embed(&mut self, ids: &[TokenId], pos_table: usize) -> Result<Var> {
        let max = self.model.config.max_positions;
        if ids.len() > max {
            return Err(Error::SequenceTooLong { len: ids.len(), max });
        }
        let ids_usize: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = self.tape.embedding(self.p(self.model.layout.tok_emb), &ids_usize)?;
        let pos = self.tape.embedding(self.p(pos_table), &positions)?;
        let x = self.tape.add(tok, pos)?;
        self.dropout(x)
    }

    /// Encodes marker-augmented input. PAD tokens are masked out as keys.
    pub fn encode(&mut self, input_ids: &[TokenId], marker_positions: &[usize]) -> Result<EncoderOutput> {
        let layout = &self.model.layout;
        let n = input_ids.len();
        let padding: Vec<bool> = input_ids.iter().map(|&t| t == PAD).collect();
        let mask: Vec<bool> = (0..n * n).map(|ij| padding[ij % n]).collect();
        let mut x = self.embed(input_ids, layout.enc_pos)?;
        for layer in &layout.enc {
            let h = self.norm(x, &layer.ln1)?;
            let h = self.self_attention(h, &mask, &layer.attn)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.norm(x, &layer.ln2)?;
            let h = self.ffn(h, &layer.ffn)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
        }
        let token_states = self.norm(x, &layout.enc_ln)?;
        let idx: Vec<Option<usize>> = marker_positions.iter().map(|&p| Some(p)).collect();
        let sentence_states = self.tape.gather_rows(token_states, &idx)?;
        Ok(EncoderOutput {
            token_states,
            sentence_states,
            padding,
        })
    }

    /// Raw classifier scores `wᵀh + b`, `[N, L]`.
    pub fn salience_logits(&mut self, sentence_states: Var) -> Result<Var> {
        let l = &self.model.layout;
        self.linear(sentence_states, l.cls_w, l.cls_b)
    }

    /// Degree distribution per sentence: softmax of the logits over `tau`.
    pub fn salience_probs(&mut self, sentence_states: Var, tau: f64) -> Result<Var> {
        let logits = self.salience_logits(sentence_states)?;
        Ok(self.tape.softmax(logits, tau))
    }

    /// Embedding rows for 1-based degrees.
    pub fn salience_embedding_gold(&mut self, degrees: &[usize]) -> Result<Var> {
        let idx: Vec<Option<usize>> = degrees.iter().map(|&z| Some(z - 1)).collect();
        self.tape.gather_rows(self.p(self.model.layout.sal_emb), &idx)
    }

    /// Expected embedding `Σ_l Emb[l]·P(z=l)`.
    pub fn salience_embedding_soft(&mut self, probs: Var) -> Result<Var> {
        self.tape.matmul(probs, self.p(self.model.layout.sal_emb))
    }

    /// Embedding of the argmax degree, ties to the more salient degree.
    pub fn salience_embedding_hard(&mut self, probs: Var) -> Result<Var> {
        let degrees = argmax_degrees(self.tape.value(probs));
        self.salience_embedding_gold(&degrees)
    }

    /// Expands sentence rows to tokens: row `i` is sentence `sent_index[i]`
    /// (1-based); index 0 marks padding and yields a zero row.
    pub fn broadcast_salience(&mut self, sentence_embeddings: Var, sent_index: &[usize]) -> Result<Var> {
        let idx: Vec<Option<usize>> = sent_index.iter().map(|&o| o.checked_sub(1)).collect();
        self.tape.gather_rows(sentence_embeddings, &idx)
    }

    /// Projects encoder states into per-layer cross-attention keys and
    /// values. With SACA on, keys come from `states + token_salience`.
    pub fn cross_memory(&mut self, enc: &EncoderOutput, token_salience: Option<Var>) -> Result<CrossMemory> {
        let key_input = match token_salience {
            Some(z) if self.model.config.saca => self.tape.add(enc.token_states, z)?,
            _ => enc.token_states,
        };
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for layer in self.model.layout.dec.clone() {
            let a = &layer.cross_attn;
            keys.push(self.linear(key_input, a.wk, a.bk)?);
            values.push(self.linear(enc.token_states, a.wv, a.bv)?);
        }
        Ok(CrossMemory {
            keys,
            values,
            padding: enc.padding.clone(),
        })
    }

    /// Cross-attention of `queries` (already normalized decoder states) over
    /// the memory of decoder layer `layer`.
    pub fn cross_attention(&mut self, queries: Var, memory: &CrossMemory, layer: usize) -> Result<Var> {
        let a = self.model.layout.dec[layer].cross_attn.clone();
        let q = self.linear(queries, a.wq, a.bq)?;
        let t = self.tape.value(queries).rows();
        let s = memory.padding.len();
        let mask: Vec<bool> = (0..t * s).map(|ij| memory.padding[ij % s]).collect();
        self.attend(q, memory.keys[layer], memory.values[layer], &mask, &a)
    }

    /// Teacher-forced decoder: vocabulary logits for every prefix position,
    /// `[len, vocab]`. Row `t` predicts the token after `prefix[..=t]`.
    pub fn decode(&mut self, prefix: &[TokenId], memory: &CrossMemory) -> Result<Var> {
        let h = self.decoder_states(prefix, memory)?;
        self.tape.matmul_t(h, self.p(self.model.layout.tok_emb))
    }

    /// Logits for the next token only, `[1, vocab]`.
    pub fn decode_step(&mut self, prefix: &[TokenId], memory: &CrossMemory) -> Result<Var> {
        let h = self.decoder_states(prefix, memory)?;
        let n = self.tape.value(h).rows();
        let last = self.tape.slice_rows(h, n - 1, n)?;
        self.tape.matmul_t(last, self.p(self.model.layout.tok_emb))
    }

    fn decoder_states(&mut self, prefix: &[TokenId], memory: &CrossMemory) -> Result<Var> {
        let layout = &self.model.layout;
        let t = prefix.len();
        let causal: Vec<bool> = (0..t * t).map(|ij| ij % t > ij / t).collect();
        let mut x = self.embed(prefix, layout.dec_pos)?;
        for (i, layer) in layout.dec.iter().enumerate() {
            let h = self.norm(x, &layer.ln1)?;
            let h = self.self_attention(h, &causal, &layer.self_attn)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.norm(x, &layer.ln2)?;
            let h = self.cross_attention(h, memory, i)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
            let h = self.norm(x, &layer.ln3)?;
            let h = self.ffn(h, &layer.ffn)?;
            let h = self.dropout(h)?;
            x = self.tape.add(x, h)?;
        }
        self.norm(x, &layout.dec_ln)
    }
}

/// 1-based argmax degree per row; ties go to the smaller degree.
pub fn argmax_degrees(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (l, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = l;
                }
            }
            best + 1
        })
        .collect()
}

/// Value-level degree distribution: `softmax((h·W + b) / tau)` row-wise.
pub fn salience_probs(sentence_states: &Tensor, weight: &Tensor, bias: &Tensor, tau: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (h, w, b) = (tape.param(sentence_states), tape.param(weight), tape.param(bias));
    let logits = tape.matmul(h, w)?;
    let logits = tape.add(logits, b)?;
    let p = tape.softmax(logits, tau);
    Ok(tape.value(p).clone())
}

/// Value-level soft estimation: `probs · emb`.
pub fn salience_embedding_soft(probs: &Tensor, emb: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (p, e) = (tape.param(probs), tape.param(emb));
    let out = tape.matmul(p, e)?;
    Ok(tape.value(out).clone())
}

/// Value-level hard estimation: `emb[argmax]`.
pub fn salience_embedding_hard(probs: &Tensor, emb: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let e = tape.param(emb);
    let idx: Vec<Option<usize>> = argmax_degrees(probs).into_iter().map(|z| Some(z - 1)).collect();
    let out = tape.gather_rows(e, &idx)?;
    Ok(tape.value(out).clone())
}

/// Value-level broadcast of sentence rows to tokens (`sent_index` 1-based, 0 = padding).
pub fn broadcast_salience(sentence_embeddings: &Tensor, sent_index: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let s = tape.param(sentence_embeddings);
    let idx: Vec<Option<usize>> = sent_index.iter().map(|&o| o.checked_sub(1)).collect();
    let out = tape.gather_rows(s, &idx)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64 bytes, base64.
    data: String,
}

impl StoredTensor {
    fn pack(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    fn unpack(&self) -> Result<Tensor> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("{}: truncated data", self.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| Error::Checkpoint(format!("{}: {e}", self.name)))
    }
}

/// Optimizer and schedule state stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStateSnapshot {
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
    pub best_metric: Option<f64>,
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredMoments {
    step: u64,
    epoch: usize,
    seed: u64,
    best_metric: Option<f64>,
    first: Vec<StoredTensor>,
    second: Vec<StoredTensor>,
}

/// Self-describing JSON checkpoint: config plus named tensors with shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    tensors: Vec<StoredTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_state: Option<StoredMoments>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, state: Option<&TrainStateSnapshot>) -> Self {
        let names = model.params.names();
        let tensors = names
            .iter()
            .zip(model.params.tensors())
            .map(|(n, t)| StoredTensor::pack(n, t))
            .collect();
        let pack_all = |m: &[Vec<f64>]| -> Vec<StoredTensor> {
            names
                .iter()
                .zip(m)
                .zip(model.params.tensors())
                .map(|((n, v), t)| StoredTensor::pack(n, &Tensor::new(t.shape().to_vec(), v.clone()).expect("moment shape")))
                .collect()
        };
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            tensors,
            train_state: state.map(|s| StoredMoments {
                step: s.step,
                epoch: s.epoch,
                seed: s.seed,
                best_metric: s.best_metric,
                first: pack_all(&s.first_moments),
                second: pack_all(&s.second_moments),
            }),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        self.into_parts().map(|(m, _)| m)
    }

    pub fn into_parts(self) -> Result<(Model, Option<TrainStateSnapshot>)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut model = Model::new(self.config, 0)?;
        if self.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                self.tensors.len()
            )));
        }
        for stored in &self.tensors {
            let t = stored.unpack()?;
            let slot = model
                .params
                .get_mut(&stored.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", stored.name)))?;
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} does not match {:?}",
                    stored.name,
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        let state = match self.train_state {
            None => None,
            Some(s) => {
                let unpack_all = |v: &[StoredTensor]| -> Result<Vec<Vec<f64>>> {
                    model
                        .params
                        .names()
                        .iter()
                        .map(|n| {
                            v.iter()
                                .find(|st| &st.name == n)
                                .ok_or_else(|| Error::Checkpoint(format!("missing moment for {n}")))
                                .and_then(|st| st.unpack().map(Tensor::into_data))
                        })
                        .collect()
                };
                Some(TrainStateSnapshot {
                    step: s.step,
                    epoch: s.epoch,
                    seed: s.seed,
                    best_metric: s.best_metric,
                    first_moments: unpack_all(&s.first)?,
                    second_moments: unpack_all(&s.second)?,
                })
            }
        };
        Ok((model, state))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
