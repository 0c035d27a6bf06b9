//! Trains a small model, then decodes held-out documents with soft, hard and
//! gold salience guidance and with guidance switched off.
//!
//! cargo run --release --example guided_generation -- [epochs]

use season::ablation::{prepare, train_model, Experiment};
use season::decode::{generate, DecodeConfig};
use season::eval::{evaluate, Candidate};
use season::model::{Estimation, ModelConfig};
use season::synthetic::{generate_corpus, SyntheticConfig};
use season::train::TrainConfig;

fn main() -> season::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 220,
        ..SyntheticConfig::default()
    });
    let (train_docs, test_docs) = docs.split_at(200);
    let exp = Experiment {
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
            warmup_steps: 50,
            ..TrainConfig::default()
        },
        decode: DecodeConfig {
            min_len: 4,
            max_len: 40,
            ..DecodeConfig::default()
        },
        ..Experiment::default()
    };
    let prep = prepare(train_docs, test_docs, &exp)?;
    let model = train_model(&prep, &exp.model, &exp.train, 1)?;

    let variants = [
        ("soft", Estimation::Soft, true),
        ("hard", Estimation::Hard, true),
        ("gold", Estimation::Gold, true),
        ("no guidance", Estimation::Soft, false),
    ];
    for (name, estimation, saca) in variants {
        let decode = DecodeConfig {
            estimation,
            emit_probs: true,
            ..exp.decode.clone()
        };
        let m = model.with_saca(saca);
        let out = generate(&m, &prep.vocab, test_docs, Some(&prep.thresholds), &decode, exp.max_src)?;
        let cands: Vec<Candidate> = out
            .iter()
            .map(|g| Candidate {
                id: g.id.clone(),
                summary: g.summary.clone(),
            })
            .collect();
        let report = evaluate(&cands, test_docs)?;
        println!(
            "{name:<12} ROUGE-1/2/L {:.2} / {:.2} / {:.2}",
            100.0 * report.rouge1,
            100.0 * report.rouge2,
            100.0 * report.rouge_l
        );
        if name == "soft" {
            let g = &out[0];
            println!("  reference: {}", test_docs[0].summary);
            println!("  generated: {}", g.summary);
            println!("  degrees:   {:?}", g.degrees);
        }
    }
    Ok(())
}
