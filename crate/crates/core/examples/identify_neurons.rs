//! Probe activation statistics and compare the neuron sets found by LAPE,
//! the probability cutoff, activation-value entropy and random selection.
//!
//!     cargo run --release --example identify_neurons [-- checkpoint.lpck]

use lape::analysis::layer_distribution;
use lape::identify::{lave_scores, select_lap, select_lave, select_random_matched, SelectionConfig};
use lape::probe::MeanMode;

#[path = "common/mod.rs"]
mod common;

fn main() -> lape::error::Result<()> {
    let setup = common::setup();
    let (stats, lape) = common::lape(&setup);
    println!(
        "LAPE: {} candidates, threshold {:.3}, sizes {:?}, {} shared",
        lape.provenance.candidates,
        lape.provenance.threshold.unwrap_or(f64::NAN),
        lape.counts(),
        lape.shared().len()
    );
    print!("{}", layer_distribution(&lape).layer_table().to_text());

    let lap = select_lap(&stats, 0.95)?;
    println!("LAP (p > 0.95): sizes {:?}", lap.counts());
    let lave = select_lave(&lave_scores(&stats, MeanMode::Unconditional)?, &stats, &SelectionConfig::default())?;
    println!("LAVE: sizes {:?}", lave.counts());
    let random = select_random_matched(&lape, 5)?;
    println!("random: sizes {:?}", random.counts());

    for rec in lape.records.iter().take(5) {
        println!(
            "neuron {}:{} entropy {:.3} p {:?} -> {:?}",
            rec.layer,
            rec.index,
            rec.entropy.unwrap_or(f64::NAN),
            rec.values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            rec.languages
        );
    }
    Ok(())
}
