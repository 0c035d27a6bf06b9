//! Directional experiments on the synthetic corpus. Magnitudes are printed,
//! only the direction is asserted.

use season::ablation::{prepare, score, train_model, Experiment};
use season::decode::DecodeConfig;
use season::model::ModelConfig;
use season::synthetic::{generate_corpus, SyntheticConfig};
use season::train::TrainConfig;

#[test]
fn classification_loss_helps_in_most_seeds() {
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 250,
        seed: 81,
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
            saca: false,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 60,
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
    let prep = prepare(train, test, &base).unwrap();
    let mut wins = 0;
    for seed in 1..=5 {
        let rouge_l = |alpha: f64| {
            let train = TrainConfig {
                alpha,
                ..base.train.clone()
            };
            let model = train_model(&prep, &base.model, &train, seed).unwrap();
            score(&model, &prep, &base.decode).unwrap().rouge_l
        };
        let (with_cls, without) = (rouge_l(1.5), rouge_l(0.0));
        println!("seed {seed}: ROUGE-L alpha=1.5 {with_cls:.4}, alpha=0 {without:.4}");
        wins += usize::from(with_cls >= without);
    }
    assert!(wins >= 3, "alpha=1.5 matched or beat alpha=0 in only {wins}/5 seeds");
}
