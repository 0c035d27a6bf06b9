//! Writes train/val/test JSON-lines splits of the synthetic corpus, ready for
//! the `season` binary.
//!
//! cargo run --example synthetic_corpus -- [out_dir] [n_train]

use std::path::PathBuf;

use season::corpus::write_jsonl;
use season::synthetic::{generate_corpus, SyntheticConfig};

fn main() -> season::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let n_train: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    std::fs::create_dir_all(&out).map_err(|e| season::Error::Config(e.to_string()))?;

    let docs = generate_corpus(&SyntheticConfig {
        n_docs: n_train + 2 * (n_train / 4).max(1),
        ..SyntheticConfig::default()
    });
    let n_held = (n_train / 4).max(1);
    let (train, rest) = docs.split_at(n_train);
    let (val, test) = rest.split_at(n_held);
    for (name, split) in [("train", train), ("val", val), ("test", test)] {
        write_jsonl(out.join(format!("{name}.jsonl")), split)?;
        println!("{name:>5}: {} documents", split.len());
    }
    println!("first document:\n  article: {}\n  summary: {}", train[0].article, train[0].summary);
    Ok(())
}
