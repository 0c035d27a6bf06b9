//! Multi-task training: salience classification on smoothed degree targets
//! plus teacher-forced summary likelihood with gold salience guidance.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_document, metric_tokens, EncodedDocument, Vocabulary, PAD};
use crate::decode::{generate_encoded, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::rouge_scores;
use crate::model::{Checkpoint, Estimation, Model, ParamSet, Session, TrainStateSnapshot};
use crate::salience::{smooth_with, LabeledDocument, SmoothingKind};
use crate::tensor::{Tensor, Var};

/// Floor applied inside the classification log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the classification loss.
    pub alpha: f64,
    /// Smoothing mass moved off the gold degree.
    pub beta: f64,
    pub smoothing: SmoothingKind,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            beta: 0.2,
            smoothing: SmoothingKind::Adjacent,
            lr: 3e-4,
            warmup_steps: 200,
            weight_decay: 0.01,
            clip_norm: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= 0.0) {
            return fail("alpha must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        Ok(())
    }
}

/// `−(1/N) Σ_j Σ_l t_jl · ln max(p_jl, 1e-12)` over row-normalized inputs.
pub fn loss_cls(probs: &Tensor, targets: &Tensor) -> f64 {
    let n = probs.rows().max(1) as f64;
    let s: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| t * p.max(LOG_FLOOR).ln())
        .sum();
    -s / n
}

/// Mean token negative log-likelihood; `logits[k]` scores `targets[k]` and
/// PAD targets are left out of both the sum and the count.
pub fn loss_lm(logits: &Tensor, targets: &[u32]) -> f64 {
    let v = logits.cols();
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        let row = &logits.data()[k * v..(k + 1) * v];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t as usize];
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn loss_total(lm: f64, cls: f64, alpha: f64) -> f64 {
    lm + alpha * cls
}

/// An encoded document with its oracle degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub doc: EncodedDocument,
    pub degrees: Vec<usize>,
}

/// Encodes labeled documents; degrees of sentences lost to truncation are dropped.
pub fn prepare_examples(labeled: &[LabeledDocument], vocab: &Vocabulary, max_src: usize, max_tgt: usize) -> Result<Vec<TrainExample>> {
    labeled
        .iter()
        .map(|l| {
            let doc = encode_document(&l.doc, vocab, max_src, max_tgt)?;
            if l.degrees.len() < doc.n_sentences {
                return Err(Error::MissingLabels(l.doc.id.clone()));
            }
            let degrees = l.degrees[..doc.n_sentences].to_vec();
            Ok(TrainExample { doc, degrees })
        })
        .collect()
}

/// Loss terms of one batch, as recorded on a tape.
pub struct BatchLoss {
    pub total: Var,
    pub lm: f64,
    pub cls: f64,
    pub correct: usize,
    pub sentences: usize,
    pub tokens: usize,
}

/// Builds the multi-task loss for `batch` on the session's tape.
///
/// The LM term averages over every target token in the batch and the
/// classification term over every sentence, so padding never counts.
pub fn batch_loss(s: &mut Session<'_>, batch: &[&TrainExample], config: &TrainConfig) -> Result<BatchLoss> {
    let l = s.model().config.n_degrees;
    let train_tau = s.model().config.train_tau;
    let mut lm_terms = Vec::new();
    let mut cls_terms = Vec::new();
    let (mut tokens, mut sentences, mut correct) = (0, 0, 0);
    for ex in batch {
        let doc = &ex.doc;
        let enc = s.encode(&doc.input_ids, &doc.marker_positions)?;

        let probs = s.salience_probs(enc.sentence_states, train_tau)?;
        let predicted = crate::model::argmax_degrees(s.tape.value(probs));
        correct += predicted.iter().zip(&ex.degrees).filter(|(a, b)| a == b).count();
        let mut target = Vec::with_capacity(ex.degrees.len() * l);
        for &z in &ex.degrees {
            target.extend(smooth_with(config.smoothing, z, l, config.beta).distribution);
        }
        let target = s.tape.constant(Tensor::new(vec![ex.degrees.len(), l], target)?);
        let logp = s.tape.log(probs, LOG_FLOOR);
        let weighted = s.tape.mul(logp, target)?;
        cls_terms.push(s.tape.sum(weighted));
        sentences += ex.degrees.len();

        let sent = s.salience_embedding_gold(&ex.degrees)?;
        let z = s.broadcast_salience(sent, &doc.sent_index)?;
        let memory = s.cross_memory(&enc, Some(z))?;
        let t = doc.target_ids.len();
        let logits = s.decode(&doc.target_ids[..t - 1], &memory)?;
        let logp = s.tape.log_softmax(logits);
        let gold: Vec<usize> = doc.target_ids[1..].iter().map(|&x| x as usize).collect();
        let keep: Vec<usize> = (0..gold.len()).filter(|&k| doc.target_ids[k + 1] != PAD).collect();
        let picked = if keep.len() == gold.len() {
            s.tape.pick_cols(logp, &gold)?
        } else {
            let rows: Vec<Option<usize>> = keep.iter().map(|&k| Some(k)).collect();
            let kept = s.tape.gather_rows(logp, &rows)?;
            let cols: Vec<usize> = keep.iter().map(|&k| gold[k]).collect();
            s.tape.pick_cols(kept, &cols)?
        };
        lm_terms.push(s.tape.sum(picked));
        tokens += keep.len();
    }
    let sum_all = |s: &mut Session<'_>, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = s.tape.add(acc, t)?;
        }
        Ok(acc)
    };
    let lm_sum = sum_all(s, &lm_terms)?;
    let lm = s.tape.scale(lm_sum, -1.0 / tokens.max(1) as f64);
    let cls_sum = sum_all(s, &cls_terms)?;
    let cls = s.tape.scale(cls_sum, -1.0 / sentences.max(1) as f64);
    let weighted = s.tape.scale(cls, config.alpha);
    let total = s.tape.add(lm, weighted)?;
    Ok(BatchLoss {
        total,
        lm: s.tape.value(lm).item(),
        cls: s.tape.value(cls).item(),
        correct,
        sentences,
        tokens,
    })
}

/// Loss value and gradient for every parameter, without dropout.
pub fn loss_and_gradients(model: &Model, batch: &[&TrainExample], config: &TrainConfig) -> Result<(f64, Vec<Tensor>)> {
    compute_gradients(Session::new(model), batch, config).map(|(l, g)| (l.0, g))
}

/// Loss value only, without dropout.
pub fn loss_value(model: &Model, batch: &[&TrainExample], config: &TrainConfig) -> Result<f64> {
    let mut s = Session::new(model);
    let loss = batch_loss(&mut s, batch, config)?;
    Ok(s.tape.value(loss.total).item())
}

type StepStats = (f64, f64, f64, usize, usize);

fn compute_gradients(mut s: Session<'_>, batch: &[&TrainExample], config: &TrainConfig) -> Result<(StepStats, Vec<Tensor>)> {
    let loss = batch_loss(&mut s, batch, config)?;
    let mut grads = s.tape.backward(loss.total)?;
    let params = s.model().params.tensors();
    let out = s
        .param_vars()
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let total = s.tape.value(loss.total).item();
    Ok(((total, loss.lm, loss.cls, loss.correct, loss.sentences), out))
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

/// AdamW with decoupled weight decay and linear warmup to a constant rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, config: &TrainConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr: config.lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            warmup_steps: config.warmup_steps,
            clip_norm: config.clip_norm,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }

    /// Clips, then applies one update. Non-finite gradients abort the step
    /// before anything changes.
    pub fn step(&mut self, params: &mut ParamSet, grads: &mut [Tensor]) -> Result<f64> {
        for (name, g) in params.names().iter().zip(grads.iter()) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let norm = clip_grad_norm(grads, self.clip_norm);
        self.step += 1;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let decay = if params.decays(i) { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensors_mut()[i].data_mut();
            for (k, &g) in grads[i].data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                p[k] -= lr * (update + decay * p[k]);
            }
        }
        Ok(norm)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_lm: f64,
    pub loss_cls: f64,
    pub loss_total: f64,
    pub cls_accuracy: f64,
    pub val_rouge1: Option<f64>,
    pub val_rouge2: Option<f64>,
    #[serde(rename = "val_rougeL")]
    pub val_rouge_l: Option<f64>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Batches of similar source length, in an order shuffled per epoch.
pub fn make_batches(examples: &[TrainExample], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].doc.src_len(), i));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64));
    batches.shuffle(&mut rng);
    batches
}

/// Mean ROUGE F1 of predicted-guidance generations against the targets.
pub fn validate(model: &Model, vocab: &Vocabulary, examples: &[TrainExample], decode: &DecodeConfig) -> Result<(f64, f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let mut sums = (0.0, 0.0, 0.0);
    for ex in examples {
        let gold = (decode.estimation == Estimation::Gold).then_some(ex.degrees.as_slice());
        let out = generate_encoded(model, vocab, &ex.doc, gold, decode)?;
        let reference = metric_tokens(&vocab.detokenize(&ex.doc.target_ids));
        let r = rouge_scores(&metric_tokens(&out.summary), &reference);
        sums.0 += r.rouge1;
        sums.1 += r.rouge2;
        sums.2 += r.rouge_l;
    }
    let n = examples.len() as f64;
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub decode: DecodeConfig,
    pub vocab: Vocabulary,
    train: Vec<TrainExample>,
    val: Vec<TrainExample>,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(
        model: Model,
        vocab: Vocabulary,
        train: Vec<TrainExample>,
        val: Vec<TrainExample>,
        config: TrainConfig,
        decode: DecodeConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let l = model.config.n_degrees;
        for ex in train.iter().chain(&val) {
            if ex.degrees.len() != ex.doc.n_sentences || ex.degrees.iter().any(|&z| z == 0 || z > l) {
                return Err(Error::MissingLabels(ex.doc.id.clone()));
            }
        }
        let optimizer = AdamW::new(&model.params, &config);
        Ok(Self {
            model,
            optimizer,
            config,
            decode,
            vocab,
            train,
            val,
            epoch: 0,
            best_metric: None,
            out_dir: None,
        })
    }

    /// Writes `metrics.jsonl`, `best.json`, `last.json` and `vocab.txt` under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.vocab.save(dir.join("vocab.txt"))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    /// Restores weights and optimizer state from a checkpoint written by a trainer.
    pub fn resume(&mut self, checkpoint: impl AsRef<Path>) -> Result<()> {
        let (model, state) = Checkpoint::load(checkpoint)?.into_parts()?;
        let state = state.ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        if model.params.names() != self.model.params.names() {
            return Err(Error::Checkpoint("parameter layout differs".into()));
        }
        self.model = model;
        self.optimizer.step = state.step;
        self.optimizer.m = state.first_moments;
        self.optimizer.v = state.second_moments;
        self.epoch = state.epoch;
        self.best_metric = state.best_metric;
        self.config.seed = state.seed;
        Ok(())
    }

    pub fn snapshot(&self) -> TrainStateSnapshot {
        TrainStateSnapshot {
            step: self.optimizer.step,
            epoch: self.epoch,
            seed: self.config.seed,
            best_metric: self.best_metric,
            first_moments: self.optimizer.m.clone(),
            second_moments: self.optimizer.v.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_model(&self.model, Some(&self.snapshot())).save(path)
    }

    pub fn train_examples(&self) -> &[TrainExample] {
        &self.train
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        self.epoch += 1;
        let batches = make_batches(&self.train, self.config.batch_size, self.config.seed, self.epoch);
        let (mut lm, mut cls, mut total) = (0.0, 0.0, 0.0);
        let (mut correct, mut sentences) = (0, 0);
        for batch in &batches {
            let refs: Vec<&TrainExample> = batch.iter().map(|&i| &self.train[i]).collect();
            let session = Session::training(&self.model, mix(self.config.seed, self.optimizer.step + 1));
            let ((t, l, c, k, n), mut grads) = compute_gradients(session, &refs, &self.config)?;
            self.optimizer.step(&mut self.model.params, &mut grads)?;
            let w = refs.len() as f64;
            lm += l * w;
            cls += c * w;
            total += t * w;
            correct += k;
            sentences += n;
        }
        let n = self.train.len() as f64;
        let mut log = EpochLog {
            epoch: self.epoch,
            loss_lm: lm / n,
            loss_cls: cls / n,
            loss_total: total / n,
            cls_accuracy: correct as f64 / sentences.max(1) as f64,
            val_rouge1: None,
            val_rouge2: None,
            val_rouge_l: None,
        };
        let validate_now = self.config.eval_every > 0 && !self.val.is_empty() && self.epoch.is_multiple_of(self.config.eval_every);
        if validate_now {
            let (r1, r2, rl) = validate(&self.model, &self.vocab, &self.val, &self.decode)?;
            log.val_rouge1 = Some(r1);
            log.val_rouge2 = Some(r2);
            log.val_rouge_l = Some(rl);
        }
        log::info!(
            "epoch {} lm {:.4} cls {:.4} acc {:.3} val_rougeL {}",
            log.epoch,
            log.loss_lm,
            log.loss_cls,
            log.cls_accuracy,
            log.val_rouge_l.map_or("-".into(), |v| format!("{v:.4}"))
        );
        self.record(&log, validate_now)?;
        Ok(log)
    }

    fn record(&mut self, log: &EpochLog, validated: bool) -> Result<()> {
        // higher is better: validation ROUGE-L, or negative training loss without validation
        let metric = if validated { log.val_rouge_l } else if self.val.is_empty() { Some(-log.loss_total) } else { None };
        let improved = match (metric, self.best_metric) {
            (Some(m), Some(b)) => m > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            self.best_metric = metric;
        }
        let Some(dir) = self.out_dir.clone() else {
            return Ok(());
        };
        let path = dir.join("metrics.jsonl");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(log)?).map_err(|e| Error::io(&path, e))?;
        if improved {
            self.save_checkpoint(dir.join("best.json"))?;
        }
        self.save_checkpoint(dir.join("last.json"))
    }

    /// Runs the configured number of epochs.
    pub fn fit(&mut self) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            logs.push(self.run_epoch()?);
        }
        Ok(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::model::ModelConfig;
    use crate::salience::{label_corpus, DEFAULT_PERCENTILES};
    use crate::synthetic::{generate_corpus, SyntheticConfig};
    use crate::tensor::finite_diff_check;
    use approx::assert_relative_eq;

    #[test]
    fn loss_cls_examples() {
        let onehot = Tensor::matrix(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(loss_cls(&onehot, &onehot), 0.0);
        let uniform = Tensor::full(&[2, 3], 1.0 / 3.0);
        assert_relative_eq!(loss_cls(&uniform, &onehot), 3f64.ln(), epsilon = 1e-12);
        let smoothed = Tensor::matrix(&[vec![0.1, 0.8, 0.1]]);
        let u1 = Tensor::full(&[1, 3], 1.0 / 3.0);
        assert_relative_eq!(loss_cls(&u1, &smoothed), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_lm_examples() {
        let uniform = Tensor::zeros(&[3, 7]);
        assert_relative_eq!(loss_lm(&uniform, &[1, 2, 3]), 7f64.ln(), epsilon = 1e-12);
        let mut sharp = Tensor::zeros(&[2, 4]);
        sharp.data_mut()[1] = 800.0;
        sharp.data_mut()[4 + 3] = 800.0;
        assert!(loss_lm(&sharp, &[1, 3]) < 1e-300);
        let logits = Tensor::matrix(&[vec![0.5, -1.0, 2.0]]);
        let lse = (0.5f64.exp() + (-1f64).exp() + 2f64.exp()).ln();
        assert_relative_eq!(loss_lm(&logits, &[1]), lse + 1.0, epsilon = 1e-12);
        // padding targets are ignored
        assert_relative_eq!(loss_lm(&Tensor::zeros(&[2, 7]), &[5, PAD]), 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_total_examples() {
        assert_eq!(loss_total(2.0, 1.0, 0.0), 2.0);
        assert_eq!(loss_total(2.0, 1.0, 1.5), 3.5);
        assert_eq!(TrainConfig::default().alpha, 1.5);
    }

    fn toy_params() -> (ParamSet, TrainConfig) {
        let cfg = ModelConfig {
            vocab_size: 10,
            d_model: 4,
            n_heads: 1,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_dim: 4,
            max_positions: 8,
            ..ModelConfig::default()
        };
        (Model::new(cfg, 0).unwrap().params, TrainConfig::default())
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (mut params, mut cfg) = toy_params();
        cfg.weight_decay = 0.0;
        let before = params.clone();
        let mut opt = AdamW::new(&params, &cfg);
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        opt.step(&mut params, &mut grads).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn warmup_is_linear() {
        let (params, cfg) = toy_params();
        let opt = AdamW::new(&params, &cfg);
        assert_relative_eq!(opt.lr_at(1), 3e-4 / 200.0);
        assert_relative_eq!(opt.lr_at(100), 3e-4 / 2.0);
        assert_relative_eq!(opt.lr_at(200), 3e-4);
        assert_relative_eq!(opt.lr_at(5000), 3e-4);
    }

    #[test]
    fn clipping_rule() {
        let mut g = vec![Tensor::vector(vec![0.6, 0.0]), Tensor::vector(vec![0.0, 0.8])];
        let norm = clip_grad_norm(&mut g, 0.1);
        assert_relative_eq!(norm, 1.0);
        assert_relative_eq!(g[0].data()[0], 0.06);
        assert_relative_eq!(g[1].data()[1], 0.08);
        let mut small = vec![Tensor::vector(vec![0.03, 0.04])];
        clip_grad_norm(&mut small, 0.1);
        assert_eq!(small[0].data(), &[0.03, 0.04]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut params, cfg) = toy_params();
        let before = params.clone();
        let mut opt = AdamW::new(&params, &cfg);
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let i = params.index_of("salience.b").unwrap();
        grads[i].data_mut()[0] = f64::NAN;
        let err = opt.step(&mut params, &mut grads).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "salience.b"));
        assert_eq!(params, before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn decay_skips_vectors() {
        let (mut params, mut cfg) = toy_params();
        cfg.weight_decay = 0.5;
        cfg.warmup_steps = 0;
        cfg.lr = 0.1;
        let before = params.clone();
        let mut opt = AdamW::new(&params, &cfg);
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        opt.step(&mut params, &mut grads).unwrap();
        let gain = params.index_of("enc.0.ln1.gain").unwrap();
        assert_eq!(params.tensors()[gain], before.tensors()[gain]);
        let w = params.index_of("enc.0.attn.wq").unwrap();
        assert_relative_eq!(params.tensors()[w].data()[0], before.tensors()[w].data()[0] * 0.95);
    }

    fn tiny_setup(n_docs: usize) -> (Model, Vocabulary, Vec<TrainExample>) {
        tiny_setup_with(n_docs, 0.02)
    }

    fn tiny_setup_with(n_docs: usize, init_std: f64) -> (Model, Vocabulary, Vec<TrainExample>) {
        let docs = generate_corpus(&SyntheticConfig {
            n_docs,
            ..SyntheticConfig::default()
        });
        let vocab = build_vocab(&docs, 10_000);
        let (labeled, _) = label_corpus(&docs, &DEFAULT_PERCENTILES).unwrap();
        let examples = prepare_examples(&labeled, &vocab, 128, 40).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_dim: 16,
            max_positions: 128,
            dropout: 0.0,
            init_std,
            ..ModelConfig::default()
        };
        (Model::new(cfg, 3).unwrap(), vocab, examples)
    }

    #[test]
    fn batch_loss_matches_value_level_losses() {
        let (model, _, examples) = tiny_setup(2);
        let cfg = TrainConfig::default();
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let mut s = Session::new(&model);
        let loss = batch_loss(&mut s, &batch, &cfg).unwrap();

        let (mut lm_sum, mut tokens, mut cls_sum, mut sentences) = (0.0, 0, 0.0, 0);
        for ex in &examples {
            let mut s = Session::new(&model);
            let enc = s.encode(&ex.doc.input_ids, &ex.doc.marker_positions).unwrap();
            let probs = s.salience_probs(enc.sentence_states, 1.0).unwrap();
            let target: Vec<f64> = ex.degrees.iter().flat_map(|&z| smooth_with(cfg.smoothing, z, 3, cfg.beta).distribution).collect();
            let target = Tensor::new(vec![ex.degrees.len(), 3], target).unwrap();
            cls_sum += loss_cls(s.tape.value(probs), &target) * ex.degrees.len() as f64;
            sentences += ex.degrees.len();
            let sent = s.salience_embedding_gold(&ex.degrees).unwrap();
            let z = s.broadcast_salience(sent, &ex.doc.sent_index).unwrap();
            let mem = s.cross_memory(&enc, Some(z)).unwrap();
            let t = ex.doc.target_ids.len();
            let logits = s.decode(&ex.doc.target_ids[..t - 1], &mem).unwrap();
            lm_sum += loss_lm(s.tape.value(logits), &ex.doc.target_ids[1..]) * (t - 1) as f64;
            tokens += t - 1;
        }
        assert_relative_eq!(loss.lm, lm_sum / tokens as f64, epsilon = 1e-12);
        assert_relative_eq!(loss.cls, cls_sum / sentences as f64, epsilon = 1e-12);
        assert_relative_eq!(s.tape.value(loss.total).item(), loss_total(loss.lm, loss.cls, 1.5), epsilon = 1e-12);
    }

    #[test]
    fn classifier_gets_no_gradient_without_cls_weight() {
        let (model, _, examples) = tiny_setup(2);
        let cfg = TrainConfig {
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let (_, grads) = loss_and_gradients(&model, &batch, &cfg).unwrap();
        for name in ["salience.w", "salience.b"] {
            let g = &grads[model.params.index_of(name).unwrap()];
            assert!(g.data().iter().all(|&x| x == 0.0), "{name}");
        }
        let emb = &grads[model.params.index_of("salience.emb").unwrap()];
        assert!(emb.norm_sq() > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, _, examples) = tiny_setup(2);
        let model = model.scrambled(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = TrainConfig::default();
        let batch: Vec<&TrainExample> = examples.iter().collect();
        let (_, analytic) = loss_and_gradients(&model, &batch, &cfg).unwrap();
        let mut params = model.params.tensors().to_vec();
        let report = finite_diff_check(
            |ps: &[Tensor]| {
                let mut m = model.clone();
                m.params.tensors_mut().clone_from_slice(ps);
                loss_value(&m, &batch, &cfg).unwrap()
            },
            &mut params,
            &analytic,
            1e-3,
            3,
            &mut rng,
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn batches_cover_all_examples_and_depend_on_epoch() {
        let (_, _, examples) = tiny_setup(10);
        let b1 = make_batches(&examples, 3, 7, 1);
        let mut all: Vec<usize> = b1.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b1, make_batches(&examples, 3, 7, 1));
        let orders: Vec<_> = (1..6).map(|e| make_batches(&examples, 3, 7, e)).collect();
        assert!(orders.iter().any(|o| o != &b1));
    }

    #[test]
    fn resume_reproduces_losses() {
        let (model, vocab, examples) = tiny_setup(6);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            eval_every: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut m = model.clone();
        m.config.dropout = 0.1;
        let mut a = Trainer::new(m.clone(), vocab.clone(), examples.clone(), vec![], cfg.clone(), DecodeConfig::default()).unwrap();
        a.run_epoch().unwrap();
        a.run_epoch().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("mid.json");
        a.save_checkpoint(&ckpt).unwrap();
        let tail_a: Vec<f64> = (0..2).map(|_| a.run_epoch().unwrap().loss_total).collect();

        let mut b = Trainer::new(m, vocab, examples, vec![], cfg, DecodeConfig::default()).unwrap();
        b.resume(&ckpt).unwrap();
        let tail_b: Vec<f64> = (0..2).map(|_| b.run_epoch().unwrap().loss_total).collect();
        assert_eq!(tail_a, tail_b);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn loss_falls_over_fifty_epochs() {
        let (model, vocab, examples) = tiny_setup(32);
        let cfg = TrainConfig {
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, vocab, examples, vec![], cfg, DecodeConfig::default()).unwrap();
        let first = t.run_epoch().unwrap().loss_total;
        let last = (1..50).map(|_| t.run_epoch().unwrap().loss_total).last().unwrap();
        assert!(last < first, "epoch 1 {first}, epoch 50 {last}");
    }

    #[test]
    fn unlabeled_examples_are_rejected() {
        let (model, vocab, mut examples) = tiny_setup(2);
        examples[0].degrees.clear();
        let err = Trainer::new(model, vocab, examples, vec![], TrainConfig::default(), DecodeConfig::default());
        assert!(matches!(err, Err(Error::MissingLabels(_))));
    }
}
