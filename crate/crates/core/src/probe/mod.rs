//! Per-neuron, per-language activation statistics.
//!
//! Counting runs over every byte position of `[BOS] + chunk` windows; the
//! `BOS` position itself is skipped, so `token_count` equals the corpus
//! length. Value sums are accumulated per window and then combined
//! pairwise, so long streams do not drift.

mod trace;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LanguageId, TokenId, BOS};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, NeuronId};

pub use trace::{export_trace, import_trace, read_trace, write_trace};

/// Which mean a steering value uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    /// `value_sum / token_count` over every token of the language.
    #[default]
    Unconditional,
    /// Mean over the tokens on which the neuron was activated.
    Conditional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    n_layers: usize,
    ffn_width: usize,
    languages: Vec<LanguageId>,
    token_count: Vec<u64>,
    /// `[language][flat neuron]`
    activated: Vec<Vec<u64>>,
    value_sum: Vec<Vec<f64>>,
    /// Sum of strictly positive values; absent in traces without it.
    positive_sum: Option<Vec<Vec<f64>>>,
}

impl ActivationStats {
    pub fn new(n_layers: usize, ffn_width: usize, languages: Vec<LanguageId>) -> Result<Self> {
        if n_layers == 0 || ffn_width == 0 {
            return Err(Error::Geometry("stats need at least one layer and one neuron".into()));
        }
        for (i, l) in languages.iter().enumerate() {
            if languages[..i].contains(l) {
                return Err(Error::Argument(format!("language {l} listed twice")));
            }
        }
        let n = n_layers * ffn_width;
        let k = languages.len();
        Ok(ActivationStats {
            n_layers,
            ffn_width,
            token_count: vec![0; k],
            activated: vec![vec![0; n]; k],
            value_sum: vec![vec![0.0; n]; k],
            positive_sum: Some(vec![vec![0.0; n]; k]),
            languages,
        })
    }

    pub fn for_model(config: &ModelConfig, languages: Vec<LanguageId>) -> Result<Self> {
        ActivationStats::new(config.n_layers, config.ffn_width, languages)
    }

    /// Assemble from raw counters (as read from a trace).
    pub fn from_parts(
        n_layers: usize,
        ffn_width: usize,
        languages: Vec<LanguageId>,
        token_count: Vec<u64>,
        activated: Vec<Vec<u64>>,
        value_sum: Vec<Vec<f64>>,
        positive_sum: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let mut s = ActivationStats::new(n_layers, ffn_width, languages)?;
        let n = s.n_neurons();
        let k = s.languages.len();
        let rows_ok = |lens: Vec<usize>| lens.len() == k && lens.iter().all(|&x| x == n);
        if token_count.len() != k
            || !rows_ok(activated.iter().map(Vec::len).collect())
            || !rows_ok(value_sum.iter().map(Vec::len).collect())
            || positive_sum
                .as_ref()
                .is_some_and(|p| !rows_ok(p.iter().map(Vec::len).collect()))
        {
            return Err(Error::Geometry("counter arrays do not match the declared geometry".into()));
        }
        for li in 0..k {
            if let Some(j) = activated[li].iter().position(|&a| a > token_count[li]) {
                return Err(Error::Format(format!(
                    "neuron {} of {} activated {} times in {} tokens",
                    NeuronId::from_flat(j, ffn_width),
                    s.languages[li],
                    activated[li][j],
                    token_count[li]
                )));
            }
            if let Some(j) = value_sum[li].iter().position(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "value sum of {} for {} is not finite",
                    NeuronId::from_flat(j, ffn_width),
                    s.languages[li]
                )));
            }
        }
        s.token_count = token_count;
        s.activated = activated;
        s.value_sum = value_sum;
        s.positive_sum = positive_sum;
        Ok(s)
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_width
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.ffn_width
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    pub fn language_index(&self, language: &LanguageId) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| Error::Argument(format!("language {language} is not in these statistics")))
    }

    pub fn token_count(&self, language: &LanguageId) -> Result<u64> {
        Ok(self.token_count[self.language_index(language)?])
    }

    pub fn activated_count(&self, neuron: NeuronId, language: &LanguageId) -> Result<u64> {
        let j = self.flat(neuron)?;
        Ok(self.activated[self.language_index(language)?][j])
    }

    pub fn value_sum(&self, neuron: NeuronId, language: &LanguageId) -> Result<f64> {
        let j = self.flat(neuron)?;
        Ok(self.value_sum[self.language_index(language)?][j])
    }

    pub fn has_positive_sums(&self) -> bool {
        self.positive_sum.is_some()
    }

    pub(crate) fn raw(&self) -> (&[u64], &[Vec<u64>], &[Vec<f64>], Option<&[Vec<f64>]>) {
        (
            &self.token_count,
            &self.activated,
            &self.value_sum,
            self.positive_sum.as_deref(),
        )
    }

    fn flat(&self, n: NeuronId) -> Result<usize> {
        if n.layer == 0 || n.layer as usize > self.n_layers || n.index as usize >= self.ffn_width {
            return Err(Error::Argument(format!(
                "neuron {n} outside {} layers × {} neurons",
                self.n_layers, self.ffn_width
            )));
        }
        Ok(n.flat(self.ffn_width))
    }

    fn nonzero_tokens(&self, li: usize) -> Result<u64> {
        match self.token_count[li] {
            0 => Err(Error::UndefinedStatistic(format!(
                "no tokens recorded for {}",
                self.languages[li]
            ))),
            n => Ok(n),
        }
    }

    /// Fraction of the language's tokens on which the neuron's activation
    /// was strictly positive.
    pub fn activation_probability(&self, neuron: NeuronId, language: &LanguageId) -> Result<f64> {
        let li = self.language_index(language)?;
        let n = self.nonzero_tokens(li)?;
        Ok(self.activated[li][self.flat(neuron)?] as f64 / n as f64)
    }

    pub fn mean_activation(&self, neuron: NeuronId, language: &LanguageId, mode: MeanMode) -> Result<f64> {
        let li = self.language_index(language)?;
        let j = self.flat(neuron)?;
        match mode {
            MeanMode::Unconditional => Ok(self.value_sum[li][j] / self.nonzero_tokens(li)? as f64),
            MeanMode::Conditional => {
                let pos = self.positive_sum.as_ref().ok_or_else(|| {
                    Error::UndefinedStatistic("these statistics carry no positive-value sums".into())
                })?;
                match self.activated[li][j] {
                    0 => Err(Error::UndefinedStatistic(format!(
                        "neuron {neuron} never activated for {language}"
                    ))),
                    a => Ok(pos[li][j] / a as f64),
                }
            }
        }
    }

    /// `n_neurons × n_languages` matrix of activation probabilities, rows in
    /// flat (layer-major) neuron order.
    pub fn probability_matrix(&self) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((self.n_neurons(), self.languages.len()));
        for li in 0..self.languages.len() {
            let n = self.nonzero_tokens(li)? as f64;
            for (j, &a) in self.activated[li].iter().enumerate() {
                m[[j, li]] = a as f64 / n;
            }
        }
        Ok(m)
    }

    /// `n_neurons × n_languages` matrix of mean activation values.
    pub fn mean_matrix(&self, mode: MeanMode) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((self.n_neurons(), self.languages.len()));
        for li in 0..self.languages.len() {
            let n = self.nonzero_tokens(li)? as f64;
            for j in 0..self.n_neurons() {
                m[[j, li]] = match mode {
                    MeanMode::Unconditional => self.value_sum[li][j] / n,
                    MeanMode::Conditional => {
                        let pos = self.positive_sum.as_ref().ok_or_else(|| {
                            Error::UndefinedStatistic("these statistics carry no positive-value sums".into())
                        })?;
                        match self.activated[li][j] {
                            0 => 0.0,
                            a => pos[li][j] / a as f64,
                        }
                    }
                };
            }
        }
        Ok(m)
    }

    /// Add one block of activations for `language`: one `T × ffn_width`
    /// array per layer, every row a counted token.
    pub fn observe(&mut self, language: &LanguageId, activations: &[ArrayView2<'_, f64>]) -> Result<()> {
        let li = self.language_index(language)?;
        let mut block = Block::new(self.n_neurons());
        block.add(activations, self.ffn_width, self.n_layers)?;
        self.absorb(li, block);
        Ok(())
    }

    fn absorb(&mut self, li: usize, block: Block) {
        self.token_count[li] += block.tokens;
        for (a, b) in self.activated[li].iter_mut().zip(&block.activated) {
            *a += b;
        }
        for (a, b) in self.value_sum[li].iter_mut().zip(&block.value_sum) {
            *a += b;
        }
        if let Some(p) = self.positive_sum.as_mut() {
            for (a, b) in p[li].iter_mut().zip(&block.positive_sum) {
                *a += b;
            }
        }
    }

    /// Fieldwise sum. Both sides must share geometry and language list.
    pub fn merge(&self, other: &ActivationStats) -> Result<ActivationStats> {
        if self.n_layers != other.n_layers || self.ffn_width != other.ffn_width {
            return Err(Error::Geometry(format!(
                "cannot merge {}×{} statistics with {}×{}",
                self.n_layers, self.ffn_width, other.n_layers, other.ffn_width
            )));
        }
        if self.languages != other.languages {
            return Err(Error::Geometry("cannot merge statistics over different language lists".into()));
        }
        let mut out = self.clone();
        out.positive_sum = match (&self.positive_sum, &other.positive_sum) {
            (Some(a), Some(b)) => Some(add_nested(a, b)),
            _ => None,
        };
        for li in 0..self.languages.len() {
            out.token_count[li] += other.token_count[li];
            for (a, b) in out.activated[li].iter_mut().zip(&other.activated[li]) {
                *a += b;
            }
        }
        out.value_sum = add_nested(&self.value_sum, &other.value_sum);
        Ok(out)
    }
}

fn add_nested(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Counters for one contiguous run of tokens.
struct Block {
    tokens: u64,
    activated: Vec<u64>,
    value_sum: Vec<f64>,
    positive_sum: Vec<f64>,
}

impl Block {
    fn new(n: usize) -> Self {
        Block {
            tokens: 0,
            activated: vec![0; n],
            value_sum: vec![0.0; n],
            positive_sum: vec![0.0; n],
        }
    }

    fn add(&mut self, layers: &[ArrayView2<'_, f64>], ffn_width: usize, n_layers: usize) -> Result<()> {
        if layers.len() != n_layers {
            return Err(Error::Geometry(format!(
                "{} activation layers for {n_layers}-layer statistics",
                layers.len()
            )));
        }
        let rows = layers.first().map_or(0, |a| a.nrows());
        for (li, a) in layers.iter().enumerate() {
            if a.ncols() != ffn_width || a.nrows() != rows {
                return Err(Error::Geometry(format!(
                    "layer {} block is {}×{}, expected {rows}×{ffn_width}",
                    li + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
            let off = li * ffn_width;
            for row in a.axis_iter(Axis(0)) {
                for (j, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Numeric {
                            layer: li as u32 + 1,
                            neuron: j as u32,
                            position: 0,
                            detail: format!("activation is {v}"),
                        });
                    }
                    self.value_sum[off + j] += v;
                    if v > 0.0 {
                        self.activated[off + j] += 1;
                        self.positive_sum[off + j] += v;
                    }
                }
            }
        }
        self.tokens += rows as u64;
        Ok(())
    }

    fn combine(&mut self, other: &Block) {
        self.tokens += other.tokens;
        for (a, b) in self.activated.iter_mut().zip(&other.activated) {
            *a += b;
        }
        for (a, b) in self.value_sum.iter_mut().zip(&other.value_sum) {
            *a += b;
        }
        for (a, b) in self.positive_sum.iter_mut().zip(&other.positive_sum) {
            *a += b;
        }
    }
}

/// Binary-counter pairwise reduction of per-window blocks: slot `i` holds
/// the sum of `2^i` windows, so every value takes part in O(log n) adds.
struct Pairwise {
    slots: Vec<Option<Block>>,
}

impl Pairwise {
    fn push(&mut self, mut b: Block) {
        let mut level = 0;
        loop {
            if level == self.slots.len() {
                self.slots.push(None);
            }
            match self.slots[level].take() {
                None => {
                    self.slots[level] = Some(b);
                    return;
                }
                Some(prev) => {
                    let mut merged = prev;
                    merged.combine(&b);
                    b = merged;
                    level += 1;
                }
            }
        }
    }

    fn finish(self, n: usize) -> Block {
        let mut out = Block::new(n);
        for b in self.slots.into_iter().flatten() {
            out.combine(&b);
        }
        out
    }
}

/// Stream `corpus` through `model` and add its counters to the corpus
/// language's entry of `stats`.
pub fn accumulate(model: &Model, corpus: &Corpus, stats: &mut ActivationStats) -> Result<()> {
    let cfg = &model.config;
    if cfg.n_layers != stats.n_layers || cfg.ffn_width != stats.ffn_width {
        return Err(Error::Geometry(format!(
            "model is {}×{}, statistics are {}×{}",
            cfg.n_layers, cfg.ffn_width, stats.n_layers, stats.ffn_width
        )));
    }
    let li = stats.language_index(corpus.language())?;
    if corpus.is_empty() {
        return Ok(());
    }
    let chunk = cfg.max_seq_len.checked_sub(1).filter(|&c| c > 0).ok_or_else(|| {
        Error::Config("max_seq_len must be at least 2 to probe text".into())
    })?;
    let n = stats.n_neurons();
    let mut pairwise = Pairwise { slots: Vec::new() };
    let mut input: Vec<TokenId> = Vec::with_capacity(chunk + 1);
    for w in corpus.windows(chunk) {
        input.clear();
        input.push(BOS);
        input.extend_from_slice(w);
        let out = model.forward(&input, None, true)?;
        let cap = out.capture.expect("capture requested");
        let views: Vec<ArrayView2<'_, f64>> = cap
            .activations
            .iter()
            .map(|a| a.slice(ndarray::s![1.., ..]))
            .collect();
        let mut block = Block::new(n);
        block.add(&views, stats.ffn_width, stats.n_layers)?;
        pairwise.push(block);
    }
    stats.absorb(li, pairwise.finish(n));
    Ok(())
}

/// [`accumulate`] over `n_shards` document-aligned shards on scoped threads,
/// merged in shard order.
pub fn accumulate_sharded(
    model: &Model,
    corpus: &Corpus,
    stats: &mut ActivationStats,
    n_shards: usize,
) -> Result<()> {
    let shards = corpus.split_documents(n_shards.max(1));
    let empty = ActivationStats {
        token_count: vec![0; stats.languages.len()],
        activated: vec![vec![0; stats.n_neurons()]; stats.languages.len()],
        value_sum: vec![vec![0.0; stats.n_neurons()]; stats.languages.len()],
        positive_sum: stats
            .positive_sum
            .as_ref()
            .map(|_| vec![vec![0.0; stats.n_neurons()]; stats.languages.len()]),
        ..stats.clone()
    };
    let results: Vec<Result<ActivationStats>> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .map(|shard| {
                let mut local = empty.clone();
                s.spawn(move || accumulate(model, shard, &mut local).map(|_| local))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("probe worker panicked"))
            .collect()
    });
    let mut total = stats.clone();
    for r in results {
        total = total.merge(&r?)?;
    }
    *stats = total;
    Ok(())
}

/// Probe every corpus into fresh statistics, languages in the given order.
pub fn probe_corpora<'a>(
    model: &Model,
    corpora: impl IntoIterator<Item = &'a Corpus>,
) -> Result<ActivationStats> {
    let corpora: Vec<&Corpus> = corpora.into_iter().collect();
    let langs = corpora.iter().map(|c| c.language().clone()).collect();
    let mut stats = ActivationStats::for_model(&model.config, langs)?;
    for c in corpora {
        accumulate(model, c, &mut stats)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang};
    use crate::model::FfnKind;
    use ndarray::array;

    #[test]
    fn strict_positive_counting() {
        let mut s = ActivationStats::new(1, 1, vec![lang("a")]).unwrap();
        let a = array![[0.5], [-0.2], [0.0], [1.3]];
        s.observe(&lang("a"), &[a.view()]).unwrap();
        let n = NeuronId::new(1, 0);
        assert_eq!(s.activated_count(n, &lang("a")).unwrap(), 2);
        assert_eq!(s.token_count(&lang("a")).unwrap(), 4);
        assert!((s.value_sum(n, &lang("a")).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(s.activation_probability(n, &lang("a")).unwrap(), 0.5);
        assert!((s.mean_activation(n, &lang("a"), MeanMode::Unconditional).unwrap() - 0.4).abs() < 1e-15);
        assert!((s.mean_activation(n, &lang("a"), MeanMode::Conditional).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn never_and_always_activated() {
        let mut s = ActivationStats::new(1, 2, vec![lang("a")]).unwrap();
        let a = array![[0.0, 2.0], [-1.0, 0.1], [-3.0, 5.0]];
        s.observe(&lang("a"), &[a.view()]).unwrap();
        assert_eq!(s.activation_probability(NeuronId::new(1, 0), &lang("a")).unwrap(), 0.0);
        assert_eq!(s.activation_probability(NeuronId::new(1, 1), &lang("a")).unwrap(), 1.0);
        let z = ActivationStats::new(1, 2, vec![lang("a")]).unwrap();
        assert!(matches!(
            z.activation_probability(NeuronId::new(1, 0), &lang("a")),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(matches!(
            z.mean_activation(NeuronId::new(1, 0), &lang("a"), MeanMode::Unconditional),
            Err(Error::UndefinedStatistic(_))
        ));
    }

    #[test]
    fn all_zero_mean() {
        let mut s = ActivationStats::new(1, 1, vec![lang("a")]).unwrap();
        s.observe(&lang("a"), &[Array2::<f64>::zeros((5, 1)).view()]).unwrap();
        assert_eq!(s.mean_activation(NeuronId::new(1, 0), &lang("a"), MeanMode::Unconditional).unwrap(), 0.0);
    }

    #[test]
    fn merge_identity_and_geometry() {
        let mut a = ActivationStats::new(2, 3, vec![lang("x"), lang("y")]).unwrap();
        let blk = Array2::from_shape_fn((4, 3), |(i, j)| i as f64 - j as f64);
        a.observe(&lang("y"), &[blk.view(), blk.view()]).unwrap();
        let e = ActivationStats::new(2, 3, vec![lang("x"), lang("y")]).unwrap();
        assert_eq!(a.merge(&e).unwrap(), a);
        assert_eq!(e.merge(&a).unwrap(), a);
        let other = ActivationStats::new(3, 3, vec![lang("x"), lang("y")]).unwrap();
        assert!(matches!(a.merge(&other), Err(Error::Geometry(_))));
        let langs = ActivationStats::new(2, 3, vec![lang("y"), lang("x")]).unwrap();
        assert!(a.merge(&langs).is_err());
    }

    #[test]
    fn empty_stream_changes_nothing() {
        let m = Model::init(ModelConfig::tiny(8, 2, FfnKind::Gated), 1).unwrap();
        let mut s = ActivationStats::for_model(&m.config, vec![lang("a")]).unwrap();
        let before = s.clone();
        accumulate(&m, &Corpus::empty(lang("a")), &mut s).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn bos_is_not_counted() {
        let m = Model::init(ModelConfig::tiny(8, 1, FfnKind::Standard), 1).unwrap();
        let c = ingest_text(b"abc\nde", lang("a"));
        let mut s = ActivationStats::for_model(&m.config, vec![lang("a")]).unwrap();
        accumulate(&m, &c, &mut s).unwrap();
        assert_eq!(s.token_count(&lang("a")).unwrap(), 6);
    }

    #[test]
    fn unknown_language_and_geometry_rejected() {
        let m = Model::init(ModelConfig::tiny(8, 1, FfnKind::Standard), 1).unwrap();
        let c = ingest_text(b"abc", lang("zz"));
        let mut s = ActivationStats::for_model(&m.config, vec![lang("a")]).unwrap();
        assert!(matches!(accumulate(&m, &c, &mut s), Err(Error::Argument(_))));
        let mut g = ActivationStats::new(2, 32, vec![lang("zz")]).unwrap();
        assert!(matches!(accumulate(&m, &c, &mut g), Err(Error::Geometry(_))));
    }
}
