//! ROUGE-1/2/L and extractive fragment statistics on a pair of token lists.
//!
//! cargo run --example rouge_metrics -- "candidate text" "reference text"

use season::corpus::metric_tokens;
use season::metrics::{extractive_fragments, fragment_stats, lcs_length, rouge_l, rouge_n};

fn main() -> season::Result<()> {
    let mut args = std::env::args().skip(1);
    let cand = args.next().unwrap_or_else(|| "the cat was found under the bed".into());
    let refer = args.next().unwrap_or_else(|| "the cat was under the bed".into());
    let (c, r) = (metric_tokens(&cand), metric_tokens(&refer));

    for n in 1..=2 {
        let s = rouge_n(&c, &r, n);
        println!("ROUGE-{n}  P {:.4}  R {:.4}  F {:.4}", s.precision, s.recall, s.f1);
    }
    let l = rouge_l(&c, &r);
    println!("ROUGE-L  P {:.4}  R {:.4}  F {:.4}  (LCS {})", l.precision, l.recall, l.f1, lcs_length(&c, &r));

    // treat the reference as an article and the candidate as its summary
    let frags = extractive_fragments(&r, &c);
    let stats = fragment_stats(&r, &c)?;
    println!("fragments (summary start, length): {frags:?}");
    println!("coverage {:.4}  density {:.4}", stats.coverage, stats.density);
    Ok(())
}
