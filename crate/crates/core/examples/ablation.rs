//! Runs one ablation suite on the synthetic corpus with a deliberately small
//! model and prints mean and sample standard deviation over seeds.
//!
//! cargo run --release --example ablation -- [suite] [n_seeds] [epochs]
//!
//! Suites: mtl_only, no_saca, gold_guidance, hard_vs_soft, tau_sweep,
//! alpha_sweep, smoothing.

use season::ablation::{prepare, run_suite, Experiment, Suite};
use season::decode::DecodeConfig;
use season::model::ModelConfig;
use season::synthetic::{generate_corpus, SyntheticConfig};
use season::train::TrainConfig;

fn main() -> season::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().unwrap_or_else(|| "gold_guidance".into()).parse()?;
    let n_seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);

    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 250,
        ..SyntheticConfig::default()
    });
    let (train, test) = docs.split_at(200);
    let base = Experiment {
        model: ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_dim: 128,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs,
            batch_size: 8,
            lr: 2e-3,
            warmup_steps: 30,
            ..TrainConfig::default()
        },
        decode: DecodeConfig {
            min_len: 4,
            max_len: 40,
            ..DecodeConfig::default()
        },
        ..Experiment::default()
    };
    let prep = prepare(train, test, &base)?;
    let seeds: Vec<u64> = (1..=n_seeds).collect();
    print!("{}", run_suite(suite, &base, &prep, &seeds)?);
    Ok(())
}
