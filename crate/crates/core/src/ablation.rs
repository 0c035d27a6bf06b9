//! Paired ablation runs over a seed set, reported as mean ± std ROUGE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, encode_document, metric_tokens, EncodedDocument, RawDocument, Vocabulary, DEFAULT_MAX_SRC, DEFAULT_MAX_TGT,
};
use crate::decode::{generate_encoded, gold_degrees, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{rouge_scores, RougeScores};
use crate::model::{Estimation, Model, ModelConfig};
use crate::salience::{label_corpus, SmoothingKind, ThresholdSpec, DEFAULT_PERCENTILES};
use crate::train::{prepare_examples, TrainConfig, TrainExample, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    MtlOnly,
    NoSaca,
    GoldGuidance,
    HardVsSoft,
    TauSweep,
    AlphaSweep,
    Smoothing,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::MtlOnly,
        Suite::NoSaca,
        Suite::GoldGuidance,
        Suite::HardVsSoft,
        Suite::TauSweep,
        Suite::AlphaSweep,
        Suite::Smoothing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::MtlOnly => "mtl_only",
            Suite::NoSaca => "no_saca",
            Suite::GoldGuidance => "gold_guidance",
            Suite::HardVsSoft => "hard_vs_soft",
            Suite::TauSweep => "tau_sweep",
            Suite::AlphaSweep => "alpha_sweep",
            Suite::Smoothing => "smoothing",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown ablation suite {s:?}")))
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const TAU_SWEEP: [f64; 3] = [0.25, 0.5, 1.0];
pub const ALPHA_SWEEP: [f64; 3] = [0.5, 1.0, 1.5];

/// Base settings shared by every variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub percentiles: Vec<f64>,
    pub vocab_size: usize,
    pub max_src: usize,
    pub max_tgt: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            vocab_size: 50_000,
            max_src: DEFAULT_MAX_SRC,
            max_tgt: DEFAULT_MAX_TGT,
        }
    }
}

/// One trained configuration and the decoders applied to it.
#[derive(Debug, Clone)]
pub struct TrainVariant {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decoders: Vec<(String, DecodeConfig)>,
}

/// The paired configurations of a suite.
pub fn plan(suite: Suite, base: &Experiment) -> Vec<TrainVariant> {
    let full = |name: &str| TrainVariant {
        model: base.model.clone(),
        train: base.train.clone(),
        decoders: vec![(name.to_string(), base.decode.clone())],
    };
    let with = |name: &str, f: &dyn Fn(&mut ModelConfig, &mut TrainConfig)| {
        let mut v = full(name);
        f(&mut v.model, &mut v.train);
        v
    };
    let decode_with = |name: String, f: &dyn Fn(&mut DecodeConfig)| {
        let mut d = base.decode.clone();
        f(&mut d);
        (name, d)
    };
    match suite {
        Suite::MtlOnly => vec![
            with("baseline (alpha=0, no saca)", &|m, t| {
                m.saca = false;
                t.alpha = 0.0;
            }),
            with("mtl only (no saca)", &|m, _| m.saca = false),
            full("full"),
        ],
        Suite::NoSaca => vec![full("full"), with("no saca", &|m, _| m.saca = false)],
        Suite::GoldGuidance => vec![TrainVariant {
            decoders: vec![
                decode_with("predicted (soft)".into(), &|d| d.estimation = Estimation::Soft),
                decode_with("gold".into(), &|d| d.estimation = Estimation::Gold),
            ],
            ..full("")
        }],
        Suite::HardVsSoft => vec![TrainVariant {
            decoders: vec![
                decode_with("soft".into(), &|d| d.estimation = Estimation::Soft),
                decode_with("hard".into(), &|d| d.estimation = Estimation::Hard),
            ],
            ..full("")
        }],
        Suite::TauSweep => vec![TrainVariant {
            decoders: TAU_SWEEP
                .iter()
                .map(|&tau| {
                    decode_with(format!("tau={tau}"), &|d| {
                        d.estimation = Estimation::Soft;
                        d.tau = tau;
                    })
                })
                .collect(),
            ..full("")
        }],
        Suite::AlphaSweep => ALPHA_SWEEP
            .iter()
            .map(|&a| with(&format!("alpha={a}"), &|_, t| t.alpha = a))
            .collect(),
        Suite::Smoothing => vec![
            with("none", &|_, t| t.beta = 0.0),
            with(&format!("adjacent (beta={})", base.train.beta), &|_, t| t.smoothing = SmoothingKind::Adjacent),
            with(&format!("uniform (beta={})", base.train.beta), &|_, t| t.smoothing = SmoothingKind::Uniform),
        ],
    }
}

/// Training and test material shared by all variants and seeds.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub thresholds: ThresholdSpec,
    pub train: Vec<TrainExample>,
    pub test: Vec<EncodedDocument>,
    pub test_gold: Vec<Vec<usize>>,
    pub test_references: Vec<Vec<String>>,
}

/// Labels the training corpus, applies its cutoffs to the test references
/// and encodes both sides.
pub fn prepare(train_docs: &[RawDocument], test_docs: &[RawDocument], base: &Experiment) -> Result<Prepared> {
    let vocab = build_vocab(train_docs, base.vocab_size);
    let (labeled, thresholds) = label_corpus(train_docs, &base.percentiles)?;
    let train = prepare_examples(&labeled, &vocab, base.max_src, base.max_tgt)?;
    let mut test = Vec::new();
    let mut test_gold = Vec::new();
    let mut test_references = Vec::new();
    for doc in test_docs {
        let encoded = encode_document(doc, &vocab, base.max_src, base.max_tgt)?;
        test_gold.push(gold_degrees(doc, &thresholds, encoded.n_sentences)?);
        test_references.push(metric_tokens(&doc.summary));
        test.push(encoded);
    }
    Ok(Prepared {
        vocab,
        thresholds,
        train,
        test,
        test_gold,
        test_references,
    })
}

pub fn train_model(prep: &Prepared, model: &ModelConfig, train: &TrainConfig, seed: u64) -> Result<Model> {
    let model = Model::new(
        ModelConfig {
            vocab_size: prep.vocab.len(),
            ..model.clone()
        },
        seed,
    )?;
    let config = TrainConfig {
        seed,
        eval_every: 0,
        ..train.clone()
    };
    let mut trainer = Trainer::new(model, prep.vocab.clone(), prep.train.clone(), vec![], config, DecodeConfig::default())?;
    trainer.fit()?;
    Ok(trainer.model)
}

/// Mean ROUGE F1 over the test documents.
pub fn score(model: &Model, prep: &Prepared, decode: &DecodeConfig) -> Result<RougeScores> {
    let mut sum = RougeScores::default();
    for ((doc, gold), reference) in prep.test.iter().zip(&prep.test_gold).zip(&prep.test_references) {
        let out = generate_encoded(model, &prep.vocab, doc, Some(gold), decode)?;
        let r = rouge_scores(&metric_tokens(&out.summary), reference);
        sum.rouge1 += r.rouge1;
        sum.rouge2 += r.rouge2;
        sum.rouge_l += r.rouge_l;
    }
    let n = prep.test.len().max(1) as f64;
    Ok(RougeScores {
        rouge1: sum.rouge1 / n,
        rouge2: sum.rouge2 / n,
        rouge_l: sum.rouge_l / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n.max(1.0);
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub rouge1: MeanStd,
    pub rouge2: MeanStd,
    pub rouge_l: MeanStd,
    pub per_seed: Vec<RougeScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Trains every variant once per seed and scores all of its decoders.
pub fn run_suite(suite: Suite, base: &Experiment, prep: &Prepared, seeds: &[u64]) -> Result<AblationReport> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in plan(suite, base) {
        let mut per_decoder: Vec<Vec<RougeScores>> = vec![Vec::new(); variant.decoders.len()];
        for &seed in seeds {
            let model = train_model(prep, &variant.model, &variant.train, seed)?;
            for (k, (name, decode)) in variant.decoders.iter().enumerate() {
                let r = score(&model, prep, decode)?;
                log::info!("{} seed {seed} {name}: rougeL {:.4}", suite.name(), r.rouge_l);
                per_decoder[k].push(r);
            }
        }
        for ((name, _), scores) in variant.decoders.iter().zip(per_decoder) {
            let pick = |f: fn(&RougeScores) -> f64| MeanStd::of(&scores.iter().map(f).collect::<Vec<_>>());
            rows.push(AblationRow {
                variant: name.clone(),
                rouge1: pick(|r| r.rouge1),
                rouge2: pick(|r| r.rouge2),
                rouge_l: pick(|r| r.rouge_l),
                per_seed: scores,
            });
        }
    }
    Ok(AblationReport {
        suite,
        seeds: seeds.to_vec(),
        rows,
    })
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {} over seeds {:?}", self.suite.name(), self.seeds)?;
        writeln!(f, "{:<28} {:>14} {:>14} {:>14}", "variant", "R-1", "R-2", "R-L")?;
        let cell = |m: &MeanStd| format!("{:.2}±{:.2}", 100.0 * m.mean, 100.0 * m.std);
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} {:>14} {:>14} {:>14}",
                r.variant,
                cell(&r.rouge1),
                cell(&r.rouge2),
                cell(&r.rouge_l)
            )?;
        }
        Ok(())
    }
}
