//! Generate the four default synthetic languages, show a sample of each,
//! and check that a byte-gram classifier tells them apart.
//!
//!     cargo run --example synthetic_corpus

use std::collections::BTreeMap;

use lape::corpus::{default_suite, detokenize, generate_synthetic_language, make_parallel_set};
use lape::eval::LanguageClassifier;

fn main() -> lape::error::Result<()> {
    let suite = default_suite();
    let mut train = BTreeMap::new();
    let mut heldout = BTreeMap::new();
    for spec in &suite {
        let corpus = generate_synthetic_language(spec, 100_000, 1)?;
        let (a, b) = corpus.split_tail(50);
        println!(
            "{}: {} tokens in {} documents, bytes {:#04x}..={:#04x}",
            spec.code,
            corpus.len(),
            corpus.n_documents(),
            spec.alphabet.lo,
            spec.alphabet.hi
        );
        let first = corpus.documents().next().expect("one document");
        let sample = detokenize(&first[..first.len().min(48)]);
        println!("  {}", String::from_utf8_lossy(&sample).escape_debug());
        train.insert(spec.code.clone(), a);
        heldout.insert(spec.code.clone(), b);
    }

    let clf = LanguageClassifier::fit(&train)?;
    for (l, c) in &heldout {
        let docs: Vec<_> = c.documents().filter(|d| d.len() >= 32).collect();
        let hits = docs.iter().filter(|d| clf.classify_tokens(d).label() == Some(l)).count();
        println!("classifier on held-out {l}: {hits}/{}", docs.len());
    }

    // the same latent sentence rendered in every language
    let set = make_parallel_set(&suite, 2, 3)?;
    for (spec, text) in suite.iter().zip(&set.groups[0]) {
        println!("{}: {}", spec.code, String::from_utf8_lossy(&detokenize(text)).escape_debug());
    }
    Ok(())
}
