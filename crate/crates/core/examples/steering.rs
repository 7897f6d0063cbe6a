//! Generate from short prompts with and without a language's neurons held
//! at their mean activation, then try to push one language's prompts into
//! another.
//!
//!     cargo run --release --example steering [-- checkpoint.lpck]

use std::collections::BTreeMap;

use lape::eval::{cross_steering_eval, prompts_from_corpus, steering_eval, LanguageClassifier, SteeringConfig};

#[path = "common/mod.rs"]
mod common;

fn main() -> lape::error::Result<()> {
    let setup = common::setup();
    let (stats, sel) = common::lape(&setup);
    let clf = LanguageClassifier::fit(&setup.train)?;
    let prompts: BTreeMap<_, _> = setup
        .heldout
        .iter()
        .map(|(l, c)| (l.clone(), prompts_from_corpus(c, 10, 8)))
        .collect();
    let cfg = SteeringConfig {
        max_new_tokens: 24,
        ..SteeringConfig::default()
    };
    let report = steering_eval(&setup.model, &prompts, &sel, &stats, &clf, &cfg)?;
    print!("{}", report.to_table().to_text());
    if let Some(t) = report.languages.first().and_then(|l| l.transcripts.first()) {
        println!("prompt  {:?}\nnormal  {:?}\nsteered {:?}", t.prompt, t.normal, t.steered);
    }

    let langs: Vec<_> = prompts.keys().cloned().collect();
    let x = cross_steering_eval(&setup.model, &prompts[&langs[0]], &langs[0], &langs[1], &sel, &stats, &clf, &cfg)?;
    println!("{} -> {}: {}/{} continuations now read as {}", x.source, x.target, x.flipped, x.prompts, x.target);
    Ok(())
}
