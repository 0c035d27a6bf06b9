//! Greedy search over the number of salience degrees and their percentile
//! cutoffs, scored by the model-free proxy evaluator.
//!
//! cargo run --release --example threshold_search

use season::salience::{default_grid, greedy_threshold_search, ProxyEvaluator};
use season::synthetic::{generate_corpus, SyntheticConfig};

fn main() -> season::Result<()> {
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 240,
        ..SyntheticConfig::default()
    });
    let (train, val) = docs.split_at(200);
    let proxy = ProxyEvaluator::new(train, val)?;
    let rows = greedy_threshold_search(|p| proxy.eval(p), &default_grid(), 4)?;
    for r in &rows {
        println!("L={}  percentiles {:?}  proxy ROUGE-L {:.4}", r.n_degrees, r.percentiles, r.score);
    }
    Ok(())
}
