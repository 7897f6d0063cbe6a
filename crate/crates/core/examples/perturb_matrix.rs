//! Deactivate each language's neurons in turn and measure held-out
//! perplexity in every language, for LAPE and a size-matched random draw.
//!
//!     cargo run --release --example perturb_matrix [-- checkpoint.lpck]

use lape::eval::ppl_change_matrix;
use lape::identify::select_random_matched;

#[path = "common/mod.rs"]
mod common;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = common::setup();
    let (_, lape) = common::lape(&setup);
    let m = ppl_change_matrix(&setup.model, &lape, &setup.heldout)?;
    println!("baseline PPL {:?}", m.baseline_ppl);
    println!("PPL change, rows deactivated, columns evaluated:");
    print!("{}", m.delta_grid().to_text());
    println!("diagonal is the row maximum: {:?}", m.diagonal_dominance());
    println!("diagonal contrast: {:?}", m.diagonal_contrast());

    let random = ppl_change_matrix(&setup.model, &select_random_matched(&lape, 5)?, &setup.heldout)?;
    println!("random selection diagonal: {:?}", random.diagonal_delta());
    println!("LAPE diagonal:             {:?}", m.diagonal_delta());
    std::fs::write("perturb_matrix.svg", m.heatmap("PPL change"))?;
    println!("wrote perturb_matrix.svg");
    Ok(())
}
