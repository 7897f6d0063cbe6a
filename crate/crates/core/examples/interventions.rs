//! Override individual neurons during a forward pass and inspect captured
//! activations.
//!
//!     cargo run --example interventions

use lape::corpus::{tokenize, BOS};
use lape::model::{FfnKind, InterventionPlan, Model, ModelConfig, NeuronId};

fn main() -> lape::error::Result<()> {
    let model = Model::init(ModelConfig::tiny(32, 2, FfnKind::Gated), 1)?;
    let mut tokens = vec![BOS];
    tokens.extend(tokenize(b"abc def"));

    let base = model.forward(&tokens, None, true)?;
    let cap = base.capture.as_ref().expect("capture requested");
    let neuron = NeuronId::new(2, 5);
    let col: Vec<f64> = cap.activations[1].column(5).to_vec();
    println!("{neuron} activations: {col:.3?}");

    let mut plan = InterventionPlan::new();
    plan.set_zero(neuron);
    plan.set_value(NeuronId::new(1, 0), 2.5)?;
    let out = model.forward(&tokens, Some(&plan), false)?;
    let diff = (&out.logits - &base.logits).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    println!("max logit change under {} overrides: {diff:.4}", plan.len());

    let text = model.generate(&tokens[1..], Some(&plan), 8, 1.1)?;
    println!("generated {} tokens with the plan applied", text.len());
    Ok(())
}
