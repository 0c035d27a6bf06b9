//! Overfits the default model on a small synthetic corpus, then regenerates
//! the training summaries with gold guidance.
//!
//! cargo run --release --example train_overfit -- [n_docs] [max_epochs]

use std::time::Instant;

use season::corpus::build_vocab;
use season::decode::{generate_encoded, DecodeConfig};
use season::model::{Estimation, Model, ModelConfig};
use season::salience::{label_corpus, DEFAULT_PERCENTILES};
use season::synthetic::{generate_corpus, SyntheticConfig};
use season::train::{prepare_examples, TrainConfig, Trainer};

fn main() -> season::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_docs = args.next().and_then(|a| a.parse().ok()).unwrap_or(32);
    let max_epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);

    let docs = generate_corpus(&SyntheticConfig {
        n_docs,
        ..SyntheticConfig::default()
    });
    let vocab = build_vocab(&docs, 10_000);
    let (labeled, _) = label_corpus(&docs, &DEFAULT_PERCENTILES)?;
    let examples = prepare_examples(&labeled, &vocab, 512, 128)?;
    let model = Model::new(
        ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        },
        0,
    )?;
    println!("{} documents, vocabulary {}, {} parameters", docs.len(), vocab.len(), model.params.numel());

    let decode = DecodeConfig {
        estimation: Estimation::Gold,
        min_len: 1,
        max_len: 40,
        ..DecodeConfig::default()
    };
    let mut trainer = Trainer::new(model, vocab, examples, vec![], TrainConfig::default(), decode.clone())?;
    let start = Instant::now();
    for _ in 0..max_epochs {
        let log = trainer.run_epoch()?;
        if log.epoch % 10 == 0 || log.loss_lm < 0.1 {
            println!(
                "epoch {:3}  lm {:.4}  cls {:.4}  acc {:.3}  {:.0}s",
                log.epoch,
                log.loss_lm,
                log.loss_cls,
                log.cls_accuracy,
                start.elapsed().as_secs_f64()
            );
        }
        if log.loss_lm < 0.1 {
            break;
        }
    }

    let mut exact = 0;
    for ex in trainer.train_examples() {
        let out = generate_encoded(&trainer.model, &trainer.vocab, &ex.doc, Some(&ex.degrees), &decode)?;
        let target = &ex.doc.target_ids[1..ex.doc.target_ids.len() - 1];
        exact += usize::from(out.tokens == target);
    }
    let n = trainer.train_examples().len();
    println!("exact-match regeneration: {exact}/{n}  total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
