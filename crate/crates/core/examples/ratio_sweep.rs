//! Grow one language's neuron set by raising the bottom fraction and watch
//! its perplexity as the set is deactivated.
//!
//!     cargo run --release --example ratio_sweep [-- checkpoint.lpck]

use lape::eval::ratio_sweep;
use lape::identify::SelectionConfig;

#[path = "common/mod.rs"]
mod common;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = common::setup();
    let (stats, _) = common::lape(&setup);
    let swept = stats.languages()[0].clone();
    let fractions = [0.005, 0.01, 0.02, 0.05, 0.1];
    let (sweep, _) = ratio_sweep(&setup.model, &stats, &setup.heldout, &fractions, &swept, &SelectionConfig::default())?;
    print!("{}", sweep.to_table().to_text());
    println!("{swept} PPL by fraction: {:?}", sweep.swept_ppl());
    std::fs::write("ratio_sweep.svg", sweep.plot())?;
    println!("wrote ratio_sweep.svg");
    Ok(())
}
