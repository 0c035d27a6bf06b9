//! Oracle salience: per-sentence ROUGE-L against the reference, corpus-wide
//! percentile cutoffs, degree assignment and smoothed training targets.
//!
//! cargo run --example salience_labels

use season::salience::{label_corpus, salience_stats, smooth_with, SmoothingKind, DEFAULT_PERCENTILES};
use season::synthetic::{generate_corpus, SyntheticConfig};

fn main() -> season::Result<()> {
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 100,
        ..SyntheticConfig::default()
    });
    let (labeled, spec) = label_corpus(&docs, &DEFAULT_PERCENTILES)?;
    println!("percentiles {:?} -> cutoffs {:?}", spec.percentiles, spec.cutoffs);

    let d = &labeled[0];
    println!("\n{}  summary: {}", d.doc.id, d.doc.summary);
    for ((s, score), degree) in season::corpus::split_sentences(&d.doc.article)?
        .sentences
        .iter()
        .zip(&d.salience_scores)
        .zip(&d.degrees)
    {
        println!("  degree {degree}  score {score:.3}  {s}");
    }

    let report = salience_stats(&labeled, &spec);
    println!("\ndegree fractions over {} sentences: {:?}", report.n_sentences, report.degree_fractions);

    for kind in [SmoothingKind::Adjacent, SmoothingKind::Uniform] {
        let rows: Vec<Vec<f64>> = (1..=3).map(|z| smooth_with(kind, z, 3, 0.2).distribution).collect();
        println!("{kind:?} smoothing, beta 0.2: {rows:?}");
    }
    Ok(())
}
