//! Command-line front end: configuration loading and the `season` subcommands.
//!
//! Settings come from an optional TOML file with one section per module,
//! overridden by flags and by `--set section.key=value`. Every command writes
//! the effective configuration to `config.toml` in its output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ablation::{self, Experiment, Suite, DEFAULT_SEEDS};
use crate::corpus::{build_vocab, load_corpus, write_jsonl, RawDocument, Vocabulary, DEFAULT_MAX_SRC, DEFAULT_MAX_TGT};
use crate::decode::{generate, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_candidates};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::salience::{
    default_grid, greedy_threshold_search, label_corpus, label_with, load_labeled, salience_stats, LabeledDocument,
    ProxyEvaluator, SalienceReport, SearchRow, ThresholdSpec, DEFAULT_PERCENTILES,
};
use crate::train::{prepare_examples, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab_size: usize,
    pub max_src: usize,
    pub max_tgt: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            test: None,
            vocab_size: 50_000,
            max_src: DEFAULT_MAX_SRC,
            max_tgt: DEFAULT_MAX_TGT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Model-free extract built from oracle degrees.
    Proxy,
    /// Train a small model per candidate and score validation ROUGE-L.
    #[default]
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SalienceSettings {
    pub percentiles: Vec<f64>,
    pub thresholds: Option<PathBuf>,
    pub grid: Vec<f64>,
    pub max_degrees: usize,
    pub eval_mode: EvalMode,
    /// Training budget per candidate in train mode.
    pub search_epochs: usize,
    /// Model trained per candidate in train mode.
    pub search_model: ModelConfig,
}

impl Default for SalienceSettings {
    fn default() -> Self {
        Self {
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            thresholds: None,
            grid: default_grid(),
            max_degrees: 4,
            eval_mode: EvalMode::Train,
            search_epochs: 3,
            search_model: ModelConfig {
                d_model: 32,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 1,
                ffn_dim: 64,
                ..ModelConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

/// Merged settings of one command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, batching and dropout.
    pub seed: u64,
    pub corpus: CorpusSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub salience: SalienceSettings,
    pub ablation: AblationSettings,
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("bad key {key:?}")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p:?} in {key:?} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `file` (if any) and applies `key=value` overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("config.toml"), &self.to_toml())
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            model: self.model.clone(),
            train: self.train.clone(),
            decode: self.decode.clone(),
            percentiles: self.salience.percentiles.clone(),
            vocab_size: self.corpus.vocab_size,
            max_src: self.corpus.max_src,
            max_tgt: self.corpus.max_tgt,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

#[derive(Debug, Parser)]
#[command(name = "season", version, about = "Salience-guided abstractive summarization toolkit")]
pub struct Cli {
    /// TOML configuration file with [corpus] [model] [train] [decode] [salience] [ablation] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input corpus (JSON lines).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "season_out")]
    pub out: PathBuf,
    /// Seed for initialisation, batching and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override any configuration key, e.g. `--set train.alpha=1.0`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score sentences against references and assign salience degrees.
    Label {
        /// Apply an existing threshold file instead of fitting percentiles.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Comma-separated percentile cutoffs, e.g. 0.15,0.5.
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
    },
    /// Greedy search for the number of degrees and their cutoffs.
    SearchThresholds {
        /// Validation corpus used to score candidates.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Largest number of degrees to try.
        #[arg(long)]
        max_degrees: Option<usize>,
        /// How each candidate is scored.
        #[arg(long, value_enum)]
        eval_mode: Option<EvalMode>,
        /// Comma-separated candidate percentile values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Train on a labeled corpus.
    Train {
        /// Raw validation corpus for best-checkpoint selection.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate summaries with a trained checkpoint.
    Generate {
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Thresholds for gold guidance; defaults to thresholds.json beside the checkpoint.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Salience estimation: soft, hard or gold.
        #[arg(long)]
        estimation: Option<String>,
    },
    /// Score generated summaries against the references in --corpus.
    Evaluate {
        /// Output of `generate`.
        #[arg(long)]
        generated: PathBuf,
    },
    /// Degree distribution of a labeled corpus.
    Stats {
        /// Threshold file to relabel with before counting.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Paired ablation over several seeds.
    Ablate {
        /// One of mtl_only, no_saca, gold_guidance, hard_vs_soft, tau_sweep, alpha_sweep, smoothing.
        #[arg(long)]
        suite: String,
        /// Held-out corpus with references.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated seeds, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

impl Cli {
    /// Flag values expressed as configuration overrides, applied after `--set`.
    fn flag_overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        let path = |p: &Path| toml::Value::String(p.display().to_string()).to_string();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(c) = &self.corpus {
            o.push(format!("corpus.train={}", path(c)));
        }
        let list = |xs: &[f64]| format!("[{}]", xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","));
        match &self.command {
            Command::Label { thresholds, percentiles } => {
                if let Some(t) = thresholds {
                    o.push(format!("salience.thresholds={}", path(t)));
                }
                if let Some(p) = percentiles {
                    o.push(format!("salience.percentiles={}", list(p)));
                }
            }
            Command::SearchThresholds {
                val,
                max_degrees,
                eval_mode,
                grid,
            } => {
                if let Some(v) = val {
                    o.push(format!("corpus.val={}", path(v)));
                }
                if let Some(m) = max_degrees {
                    o.push(format!("salience.max_degrees={m}"));
                }
                if let Some(m) = eval_mode {
                    o.push(format!("salience.eval_mode={}", toml::Value::String(format!("{m:?}").to_lowercase())));
                }
                if let Some(g) = grid {
                    o.push(format!("salience.grid={}", list(g)));
                }
            }
            Command::Train { val, epochs, .. } => {
                if let Some(v) = val {
                    o.push(format!("corpus.val={}", path(v)));
                }
                if let Some(e) = epochs {
                    o.push(format!("train.epochs={e}"));
                }
            }
            Command::Generate {
                thresholds, estimation, ..
            } => {
                if let Some(t) = thresholds {
                    o.push(format!("salience.thresholds={}", path(t)));
                }
                if let Some(e) = estimation {
                    o.push(format!("decode.estimation={}", toml::Value::String(e.clone())));
                }
            }
            Command::Stats { thresholds } => {
                if let Some(t) = thresholds {
                    o.push(format!("salience.thresholds={}", path(t)));
                }
            }
            Command::Ablate { test, seeds, .. } => {
                if let Some(t) = test {
                    o.push(format!("corpus.test={}", path(t)));
                }
                if let Some(s) = seeds {
                    let s: Vec<String> = s.iter().map(u64::to_string).collect();
                    o.push(format!("ablation.seeds=[{}]", s.join(",")));
                }
            }
            Command::Evaluate { .. } => {}
        }
        o
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("no {what} given")))
}

fn prepare_out(dir: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.write_to(dir)
}

fn print_degree_report(report: &SalienceReport) {
    println!(
        "{} documents, {} sentences, {} degrees, cutoffs {:?}",
        report.n_documents, report.n_sentences, report.n_degrees, report.cutoffs
    );
    for (l, (c, f)) in report.degree_counts.iter().zip(&report.degree_fractions).enumerate() {
        println!("degree {}: {:>7} sentences  {:>6.2}%", l + 1, c, 100.0 * f);
    }
}

fn thresholds_for(config: &RunConfig, labeled: &[LabeledDocument]) -> Result<ThresholdSpec> {
    match &config.salience.thresholds {
        Some(p) => ThresholdSpec::load(p),
        None => {
            let all: Vec<f64> = labeled.iter().flat_map(|d| d.salience_scores.iter().copied()).collect();
            Ok(ThresholdSpec::fit(&all, &config.salience.percentiles))
        }
    }
}

fn cmd_label(config: &RunConfig, out: &Path) -> Result<()> {
    let docs = load_corpus(required(&config.corpus.train, "corpus")?)?;
    let (labeled, spec) = match &config.salience.thresholds {
        Some(p) => {
            let spec = ThresholdSpec::load(p)?;
            (label_with(&docs, &spec)?, spec)
        }
        None => label_corpus(&docs, &config.salience.percentiles)?,
    };
    prepare_out(out, config)?;
    write_jsonl(out.join("labeled.jsonl"), &labeled)?;
    spec.save(out.join("thresholds.json"))?;
    print_degree_report(&salience_stats(&labeled, &spec));
    Ok(())
}

fn cmd_search(config: &RunConfig, out: &Path) -> Result<()> {
    let train = load_corpus(required(&config.corpus.train, "corpus")?)?;
    let val = match &config.corpus.val {
        Some(p) => load_corpus(p)?,
        None => train.clone(),
    };
    let s = &config.salience;
    let rows: Vec<SearchRow> = match s.eval_mode {
        EvalMode::Proxy => {
            let proxy = ProxyEvaluator::new(&train, &val)?;
            greedy_threshold_search(|p| proxy.eval(p), &s.grid, s.max_degrees)?
        }
        EvalMode::Train => {
            let mut failure = None;
            let rows = greedy_threshold_search(
                |p| match train_and_score(config, &train, &val, p) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                },
                &s.grid,
                s.max_degrees,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            rows
        }
    };
    prepare_out(out, config)?;
    write_json(&out.join("threshold_search.json"), &rows)?;
    println!("{:>3}  {:<28} {:>8}", "L", "percentiles", "score");
    for r in &rows {
        let p: Vec<String> = r.percentiles.iter().map(|x| format!("{x:.2}")).collect();
        println!("{:>3}  {:<28} {:>8.4}", r.n_degrees, p.join(" "), r.score);
    }
    let best = rows.iter().fold(&rows[0], |b, r| if r.score > b.score { r } else { b });
    let (_, spec) = label_corpus(&train, &best.percentiles)?;
    spec.save(out.join("thresholds.json"))?;
    println!("best: L={} percentiles {:?}", best.n_degrees, best.percentiles);
    Ok(())
}

fn train_and_score(config: &RunConfig, train: &[RawDocument], val: &[RawDocument], percentiles: &[f64]) -> Result<f64> {
    let mut exp = config.experiment();
    exp.percentiles = percentiles.to_vec();
    exp.model = ModelConfig {
        n_degrees: percentiles.len() + 1,
        ..config.salience.search_model.clone()
    };
    exp.train.epochs = config.salience.search_epochs;
    let prep = ablation::prepare(train, val, &exp)?;
    let model = ablation::train_model(&prep, &exp.model, &exp.train, config.seed)?;
    Ok(ablation::score(&model, &prep, &exp.decode)?.rouge_l)
}

fn cmd_train(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let labeled = load_labeled(required(&config.corpus.train, "corpus")?)?;
    let raw: Vec<RawDocument> = labeled.iter().map(|d| d.doc.clone()).collect();
    let vocab = build_vocab(&raw, config.corpus.vocab_size);
    let spec = thresholds_for(config, &labeled)?;
    let (max_src, max_tgt) = (config.corpus.max_src, config.corpus.max_tgt);
    let train = prepare_examples(&labeled, &vocab, max_src, max_tgt)?;
    let val = match &config.corpus.val {
        Some(p) => prepare_examples(&label_with(&load_corpus(p)?, &spec)?, &vocab, max_src, max_tgt)?,
        None => Vec::new(),
    };
    let model_config = ModelConfig {
        vocab_size: vocab.len(),
        n_degrees: spec.n_degrees,
        ..config.model.clone()
    };
    if model_config.max_positions < max_src.max(max_tgt) {
        return Err(Error::Config("model.max_positions is below corpus.max_src or corpus.max_tgt".into()));
    }
    let model = Model::new(model_config, config.seed)?;
    prepare_out(out, config)?;
    spec.save(out.join("thresholds.json"))?;
    let mut trainer = Trainer::new(model, vocab, train, val, config.train.clone(), config.decode.clone())?.with_output(out)?;
    if let Some(path) = resume {
        trainer.resume(path)?;
    }
    let logs = trainer.fit()?;
    if let Some(last) = logs.last() {
        println!(
            "epoch {}: loss_lm {:.4} loss_cls {:.4} accuracy {:.3} val ROUGE-L {}",
            last.epoch,
            last.loss_lm,
            last.loss_cls,
            last.cls_accuracy,
            last.val_rouge_l.map_or("-".to_string(), |v| format!("{:.4}", v))
        );
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn cmd_generate(config: &RunConfig, out: &Path, checkpoint: &Path, vocab: Option<&Path>) -> Result<()> {
    let docs = load_corpus(required(&config.corpus.train, "corpus")?)?;
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    let vocab = Vocabulary::load(vocab.map_or_else(|| sibling(checkpoint, "vocab.txt"), Path::to_path_buf))?;
    let thresholds_path = config
        .salience
        .thresholds
        .clone()
        .or_else(|| Some(sibling(checkpoint, "thresholds.json")).filter(|p| p.exists()));
    let spec = thresholds_path.map(ThresholdSpec::load).transpose()?;
    let generated = generate(&model, &vocab, &docs, spec.as_ref(), &config.decode, config.corpus.max_src)?;
    prepare_out(out, config)?;
    write_jsonl(out.join("generated.jsonl"), &generated)?;
    println!("{} summaries written to {}", generated.len(), out.join("generated.jsonl").display());
    Ok(())
}

fn cmd_evaluate(config: &RunConfig, out: &Path, generated: &Path) -> Result<()> {
    let references = load_corpus(required(&config.corpus.train, "corpus")?)?;
    let candidates = load_candidates(generated)?;
    let report = evaluate(&candidates, &references)?;
    prepare_out(out, config)?;
    write_json(&out.join("eval.json"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_stats(config: &RunConfig, out: &Path) -> Result<()> {
    let labeled = load_labeled(required(&config.corpus.train, "corpus")?)?;
    let spec = thresholds_for(config, &labeled)?;
    let report = salience_stats(&labeled, &spec);
    prepare_out(out, config)?;
    write_json(&out.join("stats.json"), &report)?;
    print_degree_report(&report);
    println!("degree-1 sentences by position: {:?}", report.degree1_by_position);
    Ok(())
}

fn cmd_ablate(config: &RunConfig, out: &Path, suite: &str) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let train = load_corpus(required(&config.corpus.train, "corpus")?)?;
    let test = load_corpus(required(&config.corpus.test, "test corpus")?)?;
    let exp = config.experiment();
    let prep = ablation::prepare(&train, &test, &exp)?;
    let report = ablation::run_suite(suite, &exp, &prep, &config.ablation.seeds)?;
    prepare_out(out, config)?;
    write_json(&out.join(format!("ablation_{}.json", suite.name())), &report)?;
    write_text(&out.join(format!("ablation_{}.txt", suite.name())), &report.to_string())?;
    print!("{report}");
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.flag_overrides())?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Label { .. } => cmd_label(&config, out),
        Command::SearchThresholds { .. } => cmd_search(&config, out),
        Command::Train { resume, .. } => cmd_train(&config, out, resume.as_deref()),
        Command::Generate { checkpoint, vocab, .. } => cmd_generate(&config, out, checkpoint, vocab.as_deref()),
        Command::Evaluate { generated } => cmd_evaluate(&config, out, generated),
        Command::Stats { .. } => cmd_stats(&config, out),
        Command::Ablate { suite, .. } => cmd_ablate(&config, out, suite),
    }
}

/// Exit status for an outcome: 0 success, 2 bad input, 1 anything else.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_input_error() => 2,
        Err(_) => 1,
    }
}

/// Parses `args`, initializes logging from `SEASON_LOG` and runs.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEASON_LOG", "info")).try_init();
    let result = execute(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
