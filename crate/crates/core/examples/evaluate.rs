//! Corpus evaluation report for two extractive baselines: the first article
//! sentence, and the sentences carrying a cue word.
//!
//! cargo run --release --example evaluate

use season::corpus::split_sentences;
use season::eval::{evaluate, Candidate};
use season::synthetic::{generate_corpus, SyntheticConfig, COPY_CUES, PARAPHRASE_CUES};

fn main() -> season::Result<()> {
    let docs = generate_corpus(&SyntheticConfig {
        n_docs: 90,
        ..SyntheticConfig::default()
    });
    let mut lead = Vec::new();
    let mut cued = Vec::new();
    for d in &docs {
        let sents = split_sentences(&d.article)?.sentences;
        lead.push(Candidate {
            id: d.id.clone(),
            summary: sents[0].clone(),
        });
        let picked: Vec<&str> = sents
            .iter()
            .filter(|s| {
                let first = s.split_whitespace().next().unwrap_or("");
                COPY_CUES.contains(&first) || PARAPHRASE_CUES.contains(&first)
            })
            .map(String::as_str)
            .collect();
        cued.push(Candidate {
            id: d.id.clone(),
            summary: picked.join(" "),
        });
    }
    println!("== lead-1 ==\n{}", evaluate(&lead, &docs)?);
    println!("== cue sentences ==\n{}", evaluate(&cued, &docs)?);
    Ok(())
}
