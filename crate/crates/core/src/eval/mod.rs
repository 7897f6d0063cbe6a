//! Intervention plans and their measured effects.

mod classify;
mod matrix;
mod plans;
mod ppl;
mod steer;
mod sweep;

pub use classify::{Classification, LanguageClassifier, AMBIGUITY_CUTOFF};
pub use matrix::{param_ppl_change_matrix, ppl_change_matrix, ppl_change_matrix_with, Perturbation, PplChangeMatrix};
pub use plans::{deactivation_plan, steering_plan};
pub use ppl::{corpus_nll, perplexity, ppl_from_nll};
pub use steer::{
    cross_steering_eval, prompts_from_corpus, steering_eval, CrossSteering, LanguageSteering, SteeringConfig,
    SteeringReport, Transcript,
};
pub use sweep::{ratio_sweep, RatioSweep, SweepRow};
