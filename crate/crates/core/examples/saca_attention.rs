//! How salience-shifted keys move cross-attention: decoder logits with zero
//! salience embeddings equal the guidance-free model, and giving one sentence
//! a large embedding changes the output distribution.
//!
//! cargo run --example saca_attention

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use season::corpus::TokenId;
use season::model::{Model, ModelConfig, Session};
use season::tensor::Tensor;

// <sent> a b <sent> c d
const INPUT: [TokenId; 6] = [4, 7, 8, 4, 9, 10];
const MARKERS: [usize; 2] = [0, 3];
const SENT_INDEX: [usize; 6] = [1, 1, 1, 2, 2, 2];

fn next_token_probs(model: &Model, degrees: &[usize]) -> season::Result<Vec<f64>> {
    let mut s = Session::new(model);
    let enc = s.encode(&INPUT, &MARKERS)?;
    let sent = s.salience_embedding_gold(degrees)?;
    let z = s.broadcast_salience(sent, &SENT_INDEX)?;
    let mem = s.cross_memory(&enc, Some(z))?;
    let logits = s.decode_step(&[1], &mem)?;
    let probs = s.tape.softmax(logits, 1.0);
    Ok(s.tape.value(probs).data().to_vec())
}

fn main() -> season::Result<()> {
    let config = ModelConfig {
        vocab_size: 12,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_dim: 32,
        max_positions: 32,
        dropout: 0.0,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, 5)?;
    let plain = model.with_saca(false);
    let show = |p: &[f64]| p.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");

    println!("no guidance         {}", show(&next_token_probs(&plain, &[1, 3])?));
    println!("zero embeddings     {}", show(&next_token_probs(&model, &[1, 3])?));

    let shape = model.salience_embeddings().shape().to_vec();
    *model.salience_embeddings_mut() = Tensor::randn(&shape, 2.0, &mut ChaCha8Rng::seed_from_u64(1));
    println!("sentence 1 salient  {}", show(&next_token_probs(&model, &[1, 3])?));
    println!("sentence 2 salient  {}", show(&next_token_probs(&model, &[3, 1])?));
    Ok(())
}
