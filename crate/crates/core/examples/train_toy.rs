//! Train a small model on the four synthetic languages and save it.
//!
//!     cargo run --release --example train_toy -- 300 /tmp/toy.lpck

use std::path::PathBuf;

use lape::corpus::LanguageId;
use lape::model::{save_checkpoint, ModelConfig};
use lape::trainer::{train, TrainConfig};

#[path = "common/mod.rs"]
mod common;

fn main() -> lape::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("step count"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy.lpck".into()));

    let (train_c, heldout) = common::corpora();
    let langs: Vec<LanguageId> = train_c.keys().cloned().collect();
    let mut tc = TrainConfig::toy(&langs, 1);
    tc.max_steps = Some(steps);
    let (model, report) = train(ModelConfig::toy(), &train_c, &tc)?;

    for (i, chunk) in report.loss_curve.chunks(50).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>4}..{:<4} loss {mean:.3}", i * 50, i * 50 + chunk.len());
    }
    for (l, c) in &heldout {
        println!("{l}: held-out PPL {:.3}", lape::eval::perplexity(&model, c, None)?);
    }
    save_checkpoint(&model, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
