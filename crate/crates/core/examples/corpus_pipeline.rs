//! Sentence splitting, tokenization, vocabulary and source encoding with
//! sentence markers.
//!
//! cargo run --example corpus_pipeline

use season::corpus::{build_vocab, decode_sentences, encode_document, split_sentences, tokenize, RawDocument};

fn main() -> season::Result<()> {
    let doc = RawDocument::new(
        "demo",
        "The council met on Monday. It approved the budget! Mayor Lee voted no?",
        "The council approved the budget.",
    );
    let split = split_sentences(&doc.article)?;
    for (s, span) in split.sentences.iter().zip(&split.char_spans) {
        println!("{span:?}  {s:?}  -> {:?}", tokenize(s));
    }

    let vocab = build_vocab(std::slice::from_ref(&doc), 100);
    println!("vocabulary: {} entries, first ten {:?}", vocab.len(), &vocab.tokens()[..10]);

    let enc = encode_document(&doc, &vocab, 512, 128)?;
    println!("input ids       {:?}", enc.input_ids);
    println!("sentence index  {:?}", enc.sent_index);
    println!("markers at      {:?}", enc.marker_positions);
    println!("target ids      {:?}", enc.target_ids);
    println!("round trip      {:?}", decode_sentences(&enc.input_ids, &vocab));
    Ok(())
}
