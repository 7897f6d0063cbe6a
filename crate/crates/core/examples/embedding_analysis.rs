//! Where the selected neurons sit, how similar aligned sentences are layer
//! by layer, and which language the others map onto best.
//!
//!     cargo run --release --example embedding_analysis [-- checkpoint.lpck]

use lape::analysis::{layer_distribution, ParallelEmbeddings};
use lape::corpus::{default_suite, make_parallel_set};

#[path = "common/mod.rs"]
mod common;

fn main() -> lape::error::Result<()> {
    let setup = common::setup();
    let (_, sel) = common::lape(&setup);
    print!("{}", layer_distribution(&sel).layer_table().to_text());

    let set = make_parallel_set(&default_suite(), 50, 2)?;
    let emb = ParallelEmbeddings::compute(&setup.model, &set)?;
    let ses = emb.ses_curve()?;
    println!("sentence similarity by layer: {:?}", ses.mean);
    for l in &set.languages {
        let d = emb.dominance_curve(l)?;
        println!("mapped into {l}: mean {:.3}, by layer {:?}", d.score(), d.mean);
    }
    Ok(())
}
