//! The `lape` pipeline: one function per subcommand, driven by a
//! [`RunConfig`]. Artifacts go under `paths.out_dir`:
//!
//! ```text
//! corpora/{train,heldout}/<lang>.txt, corpora/{train,heldout}.toml
//! checkpoints/base.lpck (+ .json), checkpoints/ft_<lang>.lpck
//! traces/activations.trace
//! selections/<method>.jsonl, <method>_counts.csv, <method>_layers.csv
//! reports/<experiment>/*.csv, *.svg, manifest.json; reports/summary.txt
//! ```

mod commands;
mod config;

pub use commands::{
    cmd_experiment, cmd_finetune, cmd_gen_corpus, cmd_identify, cmd_probe, cmd_report, cmd_train, ExperimentKind,
};
pub use config::{
    CorpusConfig, ExperimentSection, FinetuneSection, Layout, PathsConfig, ProbeSection, RunConfig, TrainSection,
};
