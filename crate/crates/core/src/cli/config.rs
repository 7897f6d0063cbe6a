//! Declarative run configuration (TOML) and the artifact layout under the
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{default_suite, validate_suite, LanguageId, SyntheticLanguageSpec};
use crate::error::{Error, Result};
use crate::eval::SteeringConfig;
use crate::identify::{Method, SelectionConfig};
use crate::model::{ModelConfig, ParamKind};
use crate::probe::MeanMode;
use crate::seed::derive_seed;
use crate::trainer::{Optimizer, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stochastic stage derives its own from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default = "ModelConfig::toy")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root of every artifact; relative paths resolve against the config
    /// file's directory.
    pub out_dir: PathBuf,
    /// Use these corpora (a corpus manifest) instead of generating
    /// synthetic languages.
    pub corpus_manifest: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("runs/default"),
            corpus_manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub tokens_per_language: usize,
    /// Documents at the end of each corpus held out for evaluation.
    pub heldout_documents: usize,
    pub languages: Vec<SyntheticLanguageSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            tokens_per_language: 400_000,
            heldout_documents: 100,
            languages: default_suite(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: f64,
    pub max_steps: Option<usize>,
    pub seq_len: usize,
    pub warmup_steps: usize,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    /// Sampling weights per language; uniform when absent.
    pub mixture: Option<BTreeMap<LanguageId, f64>>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let tc = TrainConfig::toy(&[], 0);
        let weight_decay = match tc.optimizer {
            Optimizer::Adam { weight_decay, .. } => weight_decay,
            Optimizer::SgdMomentum { .. } => 0.0,
        };
        TrainSection {
            lr: tc.lr,
            batch_size: tc.batch_size,
            epochs: tc.epochs,
            max_steps: tc.max_steps,
            seq_len: tc.seq_len,
            warmup_steps: tc.warmup_steps,
            grad_clip: tc.grad_clip,
            weight_decay,
            mixture: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, languages: &[LanguageId], seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::toy(languages, seed);
        tc.lr = self.lr;
        tc.batch_size = self.batch_size;
        tc.epochs = self.epochs;
        tc.max_steps = self.max_steps;
        tc.seq_len = self.seq_len;
        tc.warmup_steps = self.warmup_steps;
        tc.grad_clip = self.grad_clip;
        if let Optimizer::Adam { weight_decay, .. } = &mut tc.optimizer {
            *weight_decay = self.weight_decay;
        }
        if let Some(m) = &self.mixture {
            tc.language_mixture = m.clone();
        }
        tc.validate()?;
        Ok(tc)
    }
}

/// Monolingual continuation for the parameter-variation method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
    pub epochs: f64,
    pub seq_len: usize,
    pub frozen: Vec<ParamKind>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            lr: 1e-4,
            batch_size: 16,
            max_steps: Some(200),
            epochs: 2.0,
            seq_len: 64,
            frozen: vec![ParamKind::TokEmb, ParamKind::PosEmb],
        }
    }
}

impl FinetuneSection {
    pub fn to_train_config(&self, language: &LanguageId, seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::full_scale_pv(language.clone(), self.seq_len, seed);
        tc.lr = self.lr;
        tc.batch_size = self.batch_size;
        tc.max_steps = self.max_steps;
        tc.epochs = self.epochs;
        tc.frozen = self.frozen.clone();
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// Tokens sampled per language from the training corpora; all when absent.
    pub tokens_per_language: Option<usize>,
    pub shards: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            tokens_per_language: Some(40_000),
            shards: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Selection the experiments read.
    pub method: Method,
    pub lap_cutoff: f64,
    pub random_baseline: bool,
    pub sweep_fractions: Vec<f64>,
    /// Languages to sweep; all when absent.
    pub sweep_languages: Option<Vec<LanguageId>>,
    pub steering_prompts: usize,
    pub prompt_len: usize,
    pub max_new_tokens: usize,
    pub repetition_penalty: f64,
    pub mean_mode: MeanMode,
    pub parallel_groups: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let s = SteeringConfig::default();
        ExperimentSection {
            method: Method::Lape,
            lap_cutoff: 0.95,
            random_baseline: true,
            sweep_fractions: vec![0.005, 0.01, 0.02, 0.05, 0.1],
            sweep_languages: None,
            steering_prompts: 50,
            prompt_len: 8,
            max_new_tokens: s.max_new_tokens,
            repetition_penalty: s.repetition_penalty,
            mean_mode: s.mean_mode,
            parallel_groups: 100,
        }
    }
}

impl ExperimentSection {
    pub fn steering(&self) -> SteeringConfig {
        SteeringConfig {
            max_new_tokens: self.max_new_tokens,
            repetition_penalty: self.repetition_penalty,
            mean_mode: self.mean_mode,
            ..SteeringConfig::default()
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            model: ModelConfig::toy(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            probe: ProbeSection::default(),
            selection: SelectionConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.out_dir);
        if let Some(m) = self.paths.corpus_manifest.as_mut() {
            fix(m);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.selection.validate()?;
        if self.paths.corpus_manifest.is_none() {
            if self.corpus.languages.len() < 2 {
                return Err(Error::Config("at least two languages are needed".into()));
            }
            validate_suite(&self.corpus.languages)?;
            if self.corpus.tokens_per_language == 0 {
                return Err(Error::Config("tokens_per_language must be positive".into()));
            }
        } else if let Some(m) = &self.paths.corpus_manifest {
            if !m.is_file() {
                return Err(Error::Config(format!("corpus manifest {} does not exist", m.display())));
            }
        }
        if self.paths.out_dir.is_file() {
            return Err(Error::Config(format!("out_dir {} is a file", self.paths.out_dir.display())));
        }
        if self.probe.tokens_per_language == Some(0) {
            return Err(Error::Config("probe.tokens_per_language must be positive".into()));
        }
        if self.probe.shards == 0 {
            return Err(Error::Config("probe.shards must be positive".into()));
        }
        if self.train.seq_len > self.model.max_seq_len || self.finetune.seq_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "seq_len exceeds model.max_seq_len {}",
                self.model.max_seq_len
            )));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    /// Languages in configured order; from the synthetic specs unless an
    /// external manifest is used (then unknown until it is loaded).
    pub fn synthetic_languages(&self) -> Vec<LanguageId> {
        self.corpus.languages.iter().map(|s| s.code.clone()).collect()
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.paths.out_dir.clone(),
        }
    }
}

/// Where each artifact lives under the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn train_corpus(&self, l: &LanguageId) -> PathBuf {
        self.root.join("corpora/train").join(format!("{l}.txt"))
    }
    pub fn heldout_corpus(&self, l: &LanguageId) -> PathBuf {
        self.root.join("corpora/heldout").join(format!("{l}.txt"))
    }
    pub fn train_manifest(&self) -> PathBuf {
        self.root.join("corpora/train.toml")
    }
    pub fn heldout_manifest(&self) -> PathBuf {
        self.root.join("corpora/heldout.toml")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/base.lpck")
    }
    pub fn finetuned(&self, l: &LanguageId) -> PathBuf {
        self.root.join("checkpoints").join(format!("ft_{l}.lpck"))
    }
    pub fn trace(&self) -> PathBuf {
        self.root.join("traces/activations.trace")
    }
    pub fn selection(&self, m: Method) -> PathBuf {
        match m {
            Method::Pv => self.root.join("selections/pv.json"),
            _ => self.root.join("selections").join(format!("{}.jsonl", m.name())),
        }
    }
    pub fn reports(&self, kind: &str) -> PathBuf {
        self.root.join("reports").join(kind)
    }
}
