//! From-scratch training of the toy model and monolingual fine-tunes.
//!
//! Training is next-token cross entropy over `[BOS] + chunk` windows cut
//! from whole documents. Batch composition is a pure function of the seed:
//! every slot draws a language from the mixture and then takes the next
//! window of that language's shuffled window list.

mod backward;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LanguageId, TokenId, BOS};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::model::{Model, ModelConfig, ParamKind, Weights};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    /// Adam with decoupled weight decay on every matrix (norm gains are
    /// never decayed).
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Passes over the mixture's windows; ignored when `max_steps` is set.
    pub epochs: f64,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Window length including `BOS`; at most the model's `max_seq_len`.
    pub seq_len: usize,
    pub language_mixture: BTreeMap<LanguageId, f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Linear warm-up length; the rate is constant afterwards.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Parameter kinds left untouched by updates.
    #[serde(default)]
    pub frozen: Vec<ParamKind>,
    #[serde(default)]
    pub preset: Option<String>,
}

impl TrainConfig {
    /// Uniform mixture over `languages`, 1500 steps of Adam with decoupled
    /// weight decay 1.0; about seven minutes for the toy model on one core.
    pub fn toy(languages: &[LanguageId], seed: u64) -> Self {
        let w = 1.0 / languages.len().max(1) as f64;
        TrainConfig {
            lr: 3e-3,
            batch_size: 16,
            epochs: 1.0,
            max_steps: Some(1500),
            seq_len: 64,
            language_mixture: languages.iter().map(|l| (l.clone(), w)).collect(),
            seed,
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.98,
                eps: 1e-8,
                weight_decay: 1.0,
            },
            grad_clip: Some(1.0),
            warmup_steps: 50,
            frozen: Vec::new(),
            preset: None,
        }
    }

    /// Monolingual continuation used for parameter-variation fine-tunes:
    /// two epochs, batch 128, constant rate 1e-5, embeddings frozen.
    pub fn full_scale_pv(language: LanguageId, seq_len: usize, seed: u64) -> Self {
        TrainConfig {
            lr: 1e-5,
            batch_size: 128,
            epochs: 2.0,
            max_steps: None,
            seq_len,
            language_mixture: [(language, 1.0)].into_iter().collect(),
            seed,
            optimizer: Optimizer::adam(),
            grad_clip: None,
            warmup_steps: 0,
            frozen: vec![ParamKind::TokEmb, ParamKind::PosEmb],
            preset: Some("full-scale-pv".into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.epochs >= 0.0 && self.epochs.is_finite()) {
            return Err(Error::Config(format!("epochs must be >= 0, got {}", self.epochs)));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if self.language_mixture.is_empty() {
            return Err(Error::Config("language_mixture is empty".into()));
        }
        let mut sum = 0.0;
        for (l, &w) in &self.language_mixture {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("mixture weight for {l} must be >= 0, got {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {sum}, expected 1")));
        }
        match self.optimizer {
            Optimizer::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
            } if !((0.0..1.0).contains(&beta1)
                && (0.0..1.0).contains(&beta2)
                && eps > 0.0
                && weight_decay >= 0.0) =>
            {
                return Err(Error::Config(
                    "adam needs beta1, beta2 in [0, 1), eps > 0 and weight_decay >= 0".into(),
                ));
            }
            _ => {}
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

/// Per-step losses and final metrics of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub tokens_seen: u64,
    /// Mean batch NLL per step, in nats.
    pub loss_curve: Vec<f64>,
    /// Perplexity on each mixture language's training corpus (capped sample).
    pub final_ppl: BTreeMap<LanguageId, f64>,
}

/// What gets written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub base_checkpoint: Option<String>,
    pub report: TrainReport,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Mean token cross entropy (nats) of `logits` rows against `targets`.
pub fn loss(logits: &Array2<f64>, targets: &[TokenId]) -> Result<f64> {
    if logits.nrows() != targets.len() {
        return Err(Error::Argument(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Argument("loss of zero targets".into()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let t = t as usize;
        if t >= row.len() {
            return Err(Error::Argument(format!("target {t} outside {} logits", row.len())));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Mean NLL over `windows` (each starting with `BOS`) and its gradient.
pub fn loss_and_gradient(model: &Model, windows: &[Vec<TokenId>]) -> Result<(f64, Weights)> {
    let n_pred: usize = windows.iter().map(|w| w.len().saturating_sub(1)).sum();
    if n_pred == 0 {
        return Err(Error::Argument("no predicted positions".into()));
    }
    let mut grad = Weights::zeros(&model.config);
    let weight = 1.0 / n_pred as f64;
    let mut total = 0.0;
    for w in windows {
        total += backward::accumulate_window(model, w, weight, &mut grad)?;
    }
    Ok((total * weight, grad))
}

struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptState {
    fn new(w: &Weights) -> Self {
        let m: Vec<Vec<f64>> = w.tensors().iter().map(|(_, s)| vec![0.0; s.len()]).collect();
        OptState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    fn step(&mut self, opt: &Optimizer, lr: f64, frozen: &[ParamKind], w: &mut Weights, g: &Weights) {
        self.t += 1;
        let grads = g.tensors();
        for (i, (key, param)) in w.tensors_mut().into_iter().enumerate() {
            if frozen.contains(&key.kind) {
                continue;
            }
            let grad = grads[i].1;
            let m = &mut self.m[i];
            match *opt {
                Optimizer::SgdMomentum { momentum } => {
                    for j in 0..param.len() {
                        m[j] = momentum * m[j] + grad[j];
                        param[j] -= lr * m[j];
                    }
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let v = &mut self.v[i];
                    let c1 = 1.0 - beta1.powi(self.t as i32);
                    let c2 = 1.0 - beta2.powi(self.t as i32);
                    let decay = if key.kind.is_norm() { 1.0 } else { 1.0 - lr * weight_decay };
                    for j in 0..param.len() {
                        param[j] *= decay;
                        m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                        param[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn grad_norm(g: &Weights) -> f64 {
    g.tensors()
        .iter()
        .flat_map(|(_, s)| s.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

fn scale_grad(g: &mut Weights, c: f64) {
    for (_, s) in g.tensors_mut() {
        s.iter_mut().for_each(|x| *x *= c);
    }
}

/// Deterministic batch stream over the mixture.
struct BatchSampler<'a> {
    windows: Vec<Vec<&'a [TokenId]>>,
    cursor: Vec<usize>,
    pick: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    fn new(corpora: &'a BTreeMap<LanguageId, Corpus>, tc: &TrainConfig) -> Result<Self> {
        let mut n_languages = 0;
        let mut weights = Vec::new();
        let mut windows = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "batches"));
        for (l, &w) in &tc.language_mixture {
            if w == 0.0 {
                continue;
            }
            let corpus = corpora
                .get(l)
                .ok_or_else(|| Error::Argument(format!("mixture language {l} has no corpus")))?;
            let mut ws: Vec<&[TokenId]> = corpus.windows(tc.seq_len - 1).collect();
            if ws.is_empty() {
                return Err(Error::Argument(format!("corpus for {l} is empty")));
            }
            ws.shuffle(&mut rng);
            n_languages += 1;
            weights.push(w);
            windows.push(ws);
        }
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| Error::Config(format!("language mixture: {e}")))?;
        Ok(BatchSampler {
            cursor: vec![0; n_languages],
            windows,
            pick,
            rng,
        })
    }

    fn total_windows(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    fn next_window(&mut self) -> Vec<TokenId> {
        let k = self.pick.sample(&mut self.rng);
        if self.cursor[k] == self.windows[k].len() {
            self.windows[k].shuffle(&mut self.rng);
            self.cursor[k] = 0;
        }
        let w = self.windows[k][self.cursor[k]];
        self.cursor[k] += 1;
        let mut out = Vec::with_capacity(w.len() + 1);
        out.push(BOS);
        out.extend_from_slice(w);
        out
    }
}

/// Number of optimizer steps a config asks for over these corpora.
pub fn planned_steps(corpora: &BTreeMap<LanguageId, Corpus>, tc: &TrainConfig) -> Result<usize> {
    tc.validate()?;
    if let Some(s) = tc.max_steps {
        return Ok(s);
    }
    let sampler = BatchSampler::new(corpora, tc)?;
    Ok((tc.epochs * sampler.total_windows() as f64 / tc.batch_size as f64).ceil() as usize)
}

/// Windows per language scored for the final perplexity in a report.
const REPORT_PPL_DOCS: usize = 64;

/// Continue training `model` in place.
pub fn train_model(
    model: &mut Model,
    corpora: &BTreeMap<LanguageId, Corpus>,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    tc.validate()?;
    if tc.seq_len > model.config.max_seq_len {
        return Err(Error::Config(format!(
            "seq_len {} exceeds max_seq_len {}",
            tc.seq_len, model.config.max_seq_len
        )));
    }
    let steps = planned_steps(corpora, tc)?;
    let mut sampler = BatchSampler::new(corpora, tc)?;
    let mut state = OptState::new(&model.weights);
    let mut curve = Vec::with_capacity(steps);
    let mut tokens_seen = 0u64;
    let mut batch = Vec::with_capacity(tc.batch_size);
    for step in 0..steps {
        batch.clear();
        for _ in 0..tc.batch_size {
            batch.push(sampler.next_window());
        }
        let (l, mut g) = match loss_and_gradient(model, &batch) {
            Ok(x) => x,
            Err(Error::Numeric { .. }) => {
                return Err(Error::Divergence {
                    step,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        if !l.is_finite() {
            return Err(Error::Divergence { step, loss: l });
        }
        if let Some(c) = tc.grad_clip {
            let n = grad_norm(&g);
            if !n.is_finite() {
                return Err(Error::Divergence { step, loss: l });
            }
            if n > c {
                scale_grad(&mut g, c / n);
            }
        }
        state.step(&tc.optimizer, tc.lr_at(step), &tc.frozen, &mut model.weights, &g);
        tokens_seen += batch.iter().map(|w| w.len() as u64 - 1).sum::<u64>();
        curve.push(l);
        if step % 50 == 0 || step + 1 == steps {
            log::info!("step {}/{} loss {:.4}", step + 1, steps, l);
        }
    }
    let mut final_ppl = BTreeMap::new();
    for (l, &w) in &tc.language_mixture {
        if w == 0.0 {
            continue;
        }
        let c = &corpora[l];
        let docs: Vec<&[TokenId]> = c.documents().take(REPORT_PPL_DOCS).collect();
        let sample = Corpus::from_documents(l.clone(), docs)?;
        final_ppl.insert(l.clone(), perplexity(model, &sample, None)?);
    }
    Ok(TrainReport {
        steps,
        tokens_seen,
        loss_curve: curve,
        final_ppl,
    })
}

/// Train a freshly initialised model; initialisation uses `tc.seed`.
pub fn train(
    config: ModelConfig,
    corpora: &BTreeMap<LanguageId, Corpus>,
    tc: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let mut model = Model::init(config, derive_seed(tc.seed, "init"))?;
    let report = train_model(&mut model, corpora, tc)?;
    Ok((model, report))
}

/// Continue LM training of a copy of `base` on one language only. The
/// mixture in `tc` is replaced by that language alone.
pub fn finetune_monolingual(
    base: &Model,
    language: &LanguageId,
    corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if corpus.language() != language {
        return Err(Error::Argument(format!(
            "corpus is {}, fine-tune language is {language}",
            corpus.language()
        )));
    }
    let mut tc = tc.clone();
    tc.language_mixture = [(language.clone(), 1.0)].into_iter().collect();
    let corpora: BTreeMap<LanguageId, Corpus> = [(language.clone(), corpus.clone())].into_iter().collect();
    let mut model = base.clone();
    let report = train_model(&mut model, &corpora, &tc)?;
    Ok((model, report))
}
