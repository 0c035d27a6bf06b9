//! Compares backpropagated gradients of the joint loss with central finite
//! differences on a tiny model.
//!
//! cargo run --release --example gradcheck

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use season::corpus::build_vocab;
use season::model::{Model, ModelConfig};
use season::salience::{label_corpus, DEFAULT_PERCENTILES};
use season::synthetic::{generate_corpus, SyntheticConfig};
use season::tensor::{finite_diff_check, Tensor};
use season::train::{loss_and_gradients, loss_value, prepare_examples, TrainConfig, TrainExample};

fn main() -> season::Result<()> {
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 2,
        ..SyntheticConfig::default()
    });
    let vocab = build_vocab(&docs, 1000);
    let (labeled, _) = label_corpus(&docs, &DEFAULT_PERCENTILES)?;
    let examples = prepare_examples(&labeled, &vocab, 128, 40)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_dim: 16,
        max_positions: 128,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    // weights scaled by fan-in keep the check away from saturated regions
    let model = Model::new(config, 3)?.scrambled(4);
    let batch: Vec<&TrainExample> = examples.iter().collect();
    let train = TrainConfig::default();

    let (loss, analytic) = loss_and_gradients(&model, &batch, &train)?;
    let mut params = model.params.tensors().to_vec();
    let report = finite_diff_check(
        |ps: &[Tensor]| {
            let mut m = model.clone();
            m.params.tensors_mut().clone_from_slice(ps);
            loss_value(&m, &batch, &train).expect("loss")
        },
        &mut params,
        &analytic,
        1e-3,
        3,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    println!("loss {loss:.6}");
    for (i, err, n) in &report.per_tensor {
        println!("{:<28} {n} samples  max rel error {err:.2e}", model.params.names()[*i]);
    }
    println!("overall max rel error {:.2e}", report.max_rel_error);
    Ok(())
}
