//! Shared setup for the examples: corpora from the default suite and a toy
//! model, either loaded from the checkpoint named by the first argument or
//! trained briefly on the spot.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use lape::corpus::{default_suite, generate_synthetic_language, Corpus, LanguageId};
use lape::identify::{lape_scores, select_lape, NeuronSelection, SelectionConfig};
use lape::model::{load_checkpoint, Model, ModelConfig};
use lape::probe::{probe_corpora, ActivationStats};
use lape::trainer::{train, TrainConfig};

pub struct Setup {
    pub model: Model,
    pub train: BTreeMap<LanguageId, Corpus>,
    pub heldout: BTreeMap<LanguageId, Corpus>,
}

pub fn corpora() -> (BTreeMap<LanguageId, Corpus>, BTreeMap<LanguageId, Corpus>) {
    let (mut train, mut heldout) = (BTreeMap::new(), BTreeMap::new());
    for spec in default_suite() {
        let all = generate_synthetic_language(&spec, 200_000, 1).expect("valid spec");
        let (a, b) = all.split_tail(100);
        train.insert(spec.code.clone(), a);
        heldout.insert(spec.code, b);
    }
    (train, heldout)
}

pub fn setup() -> Setup {
    let (train_c, heldout) = corpora();
    let model = match std::env::args().nth(1) {
        Some(path) => {
            println!("loading {path}");
            load_checkpoint(Path::new(&path)).expect("readable checkpoint")
        }
        None => {
            println!("no checkpoint given; training the toy model for 400 steps");
            let langs: Vec<LanguageId> = train_c.keys().cloned().collect();
            let mut tc = TrainConfig::toy(&langs, 1);
            tc.max_steps = Some(400);
            train(ModelConfig::toy(), &train_c, &tc).expect("training").0
        }
    };
    Setup {
        model,
        train: train_c,
        heldout,
    }
}

/// Probe 40k training tokens per language and keep the bottom 1% by LAPE.
pub fn lape(setup: &Setup) -> (ActivationStats, NeuronSelection) {
    let samples: Vec<Corpus> = setup
        .train
        .values()
        .map(|c| lape::corpus::sample_tokens(c, 40_000, 7).expect("non-empty corpus"))
        .collect();
    let stats = probe_corpora(&setup.model, &samples).expect("probe");
    let sel = select_lape(&lape_scores(&stats).expect("scores"), &stats, &SelectionConfig::default()).expect("select");
    (stats, sel)
}
