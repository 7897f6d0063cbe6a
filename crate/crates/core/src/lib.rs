//! Language-specific neuron identification and intervention for small
//! decoder-only byte-level transformers.

pub(crate) mod binio;
pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod identify;
pub mod model;
pub mod probe;
pub mod report;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use seed::derive_seed;
