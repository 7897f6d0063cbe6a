use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lape::cli::{self, ExperimentKind, RunConfig};
use lape::corpus::LanguageId;
use lape::identify::Method;

#[derive(Parser)]
#[command(name = "lape", version, about = "Find, perturb and analyse language-specific neurons")]
struct Args {
    /// Run configuration (TOML). Defaults apply to every missing field.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override `paths.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or split) the per-language corpora.
    GenCorpus,
    /// Train the base model.
    Train,
    /// Monolingual fine-tunes for parameter variation.
    Finetune {
        #[arg(long, value_delimiter = ',')]
        languages: Option<Vec<String>>,
    },
    /// Record activation statistics.
    Probe,
    /// Select language-specific neurons.
    Identify {
        #[arg(long, default_value = "lape", value_parser = parse_method)]
        method: Method,
    },
    /// Run an experiment on a selection.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Selection to use; defaults to `experiment.method`.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
    },
    /// Collect report tables into one text summary.
    Report,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: lape::Error| e.to_string())
}

fn run(args: Args) -> lape::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = args.out_dir {
        cfg.paths.out_dir = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let files = match args.command {
        Command::GenCorpus => cli::cmd_gen_corpus(&cfg)?,
        Command::Train => cli::cmd_train(&cfg)?,
        Command::Finetune { languages } => {
            let ls = languages
                .map(|v| v.into_iter().map(LanguageId::new).collect::<lape::Result<Vec<_>>>())
                .transpose()?;
            cli::cmd_finetune(&cfg, ls.as_deref())?
        }
        Command::Probe => cli::cmd_probe(&cfg)?,
        Command::Identify { method } => cli::cmd_identify(&cfg, method)?,
        Command::Experiment { kind, method } => {
            if let Some(m) = method {
                cfg.experiment.method = m;
            }
            cli::cmd_experiment(&cfg, kind)?
        }
        Command::Report => vec![cli::cmd_report(&cfg)?],
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
