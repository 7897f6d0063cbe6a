//! Per-language neuron selection.
//!
//! Entropy-based selection (LAPE over activation probabilities, LAVE over
//! clamped mean values) follows one pipeline:
//!
//! 1. rank neurons with a defined entropy by `(entropy, layer, index)` and
//!    keep the first `ceil(bottom_fraction · n_defined)`;
//! 2. take `τ` as the nearest-rank `threshold_percentile` of the pooled
//!    values of every (neuron, language) pair;
//! 3. drop kept neurons whose largest value is `≤ τ`;
//! 4. assign each survivor to every language whose value is `> τ`.

mod file;
mod pv;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::probe::{write_trace, ActivationStats, MeanMode};
use crate::seed::derive_seed;

pub use file::{read_selection, write_selection};
pub use pv::{pv_scores, pv_select, ParamIndex, ParamSelection, PvScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lape,
    Lap,
    Lave,
    Pv,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lape => "lape",
            Method::Lap => "lap",
            Method::Lave => "lave",
            Method::Pv => "pv",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lape" => Method::Lape,
            "lap" => Method::Lap,
            "lave" => Method::Lave,
            "pv" => Method::Pv,
            "random" | "rs" => Method::Random,
            _ => return Err(Error::Argument(format!("unknown method {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub bottom_fraction: f64,
    pub threshold_percentile: f64,
    /// Used by random selection only.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            bottom_fraction: 0.01,
            threshold_percentile: 95.0,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bottom_fraction > 0.0 && self.bottom_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "bottom_fraction must be in (0, 1], got {}",
                self.bottom_fraction
            )));
        }
        if !(self.threshold_percentile > 0.0 && self.threshold_percentile < 100.0) {
            return Err(Error::Config(format!(
                "threshold_percentile must be in (0, 100), got {}",
                self.threshold_percentile
            )));
        }
        Ok(())
    }
}

/// L1-normalised profile and its natural-log entropy, `0 · ln 0 = 0`.
/// `None` when every entry is zero. Entries must be `≥ 0`.
pub fn profile_entropy(values: &[f64]) -> Option<(Vec<f64>, f64)> {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let p: Vec<f64> = values.iter().map(|v| v / total).collect();
    let h = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    Some((p, h.max(0.0)))
}

/// Nearest-rank percentile: the element at rank `ceil(P/100 · n)` (1-based)
/// of the ascending sort.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedStatistic("percentile of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// Entropy scores for every neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub languages: Vec<LanguageId>,
    pub n_layers: usize,
    pub ffn_width: usize,
    /// `n_neurons × n_languages` values the entropy was computed from
    /// (probabilities for LAPE, clamped means for LAVE).
    pub values: Array2<f64>,
    /// Normalised profiles `p′`; zero rows where undefined.
    pub profiles: Array2<f64>,
    /// `None` for all-zero profiles.
    pub entropy: Vec<Option<f64>>,
}

impl ScoreTable {
    pub fn from_values(
        languages: Vec<LanguageId>,
        n_layers: usize,
        ffn_width: usize,
        values: Array2<f64>,
    ) -> Result<Self> {
        if values.nrows() != n_layers * ffn_width || values.ncols() != languages.len() {
            return Err(Error::Geometry(format!(
                "value table is {}×{}, expected {}×{}",
                values.nrows(),
                values.ncols(),
                n_layers * ffn_width,
                languages.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!("profile values must be finite and >= 0, got {v}")));
        }
        let mut profiles = Array2::zeros(values.raw_dim());
        let mut entropy = Vec::with_capacity(values.nrows());
        for (j, row) in values.rows().into_iter().enumerate() {
            let row: Vec<f64> = row.to_vec();
            match profile_entropy(&row) {
                Some((p, h)) => {
                    for (k, x) in p.into_iter().enumerate() {
                        profiles[[j, k]] = x;
                    }
                    entropy.push(Some(h));
                }
                None => entropy.push(None),
            }
        }
        Ok(ScoreTable {
            languages,
            n_layers,
            ffn_width,
            values,
            profiles,
            entropy,
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.entropy.len()
    }

    pub fn n_defined(&self) -> usize {
        self.entropy.iter().filter(|e| e.is_some()).count()
    }

    /// Defined neurons in ascending `(entropy, layer, index)` order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_neurons()).filter(|&j| self.entropy[j].is_some()).collect();
        // flat index order equals (layer, index) order
        idx.sort_by(|&a, &b| {
            self.entropy[a]
                .unwrap()
                .total_cmp(&self.entropy[b].unwrap())
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Entropy of each neuron's activation-probability profile.
pub fn lape_scores(stats: &ActivationStats) -> Result<ScoreTable> {
    ScoreTable::from_values(
        stats.languages().to_vec(),
        stats.n_layers(),
        stats.ffn_width(),
        stats.probability_matrix()?,
    )
}

/// Entropy of each neuron's mean-activation profile, means clamped at 0.
pub fn lave_scores(stats: &ActivationStats, mode: MeanMode) -> Result<ScoreTable> {
    let means = stats.mean_matrix(mode)?.mapv(|v| v.max(0.0));
    ScoreTable::from_values(stats.languages().to_vec(), stats.n_layers(), stats.ffn_width(), means)
}

/// One neuron line of a selection file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub layer: u32,
    pub index: u32,
    /// Absent for methods without a score.
    pub entropy: Option<f64>,
    /// Per-language values in [`NeuronSelection::languages`] order.
    pub values: Vec<f64>,
    pub languages: Vec<LanguageId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: SelectionConfig,
    /// sha256 of the statistics trace the selection came from.
    pub stats_digest: Option<String>,
    /// Value threshold τ applied in step 3/4, when there is one.
    pub threshold: Option<f64>,
    /// Number of neurons kept by the bottom-fraction step.
    pub candidates: usize,
}

/// Per-language neuron sets. A neuron may belong to several languages.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronSelection {
    pub method: Method,
    pub languages: Vec<LanguageId>,
    pub n_layers: usize,
    pub ffn_width: usize,
    pub sets: BTreeMap<LanguageId, BTreeSet<NeuronId>>,
    /// Selected neurons in `(layer, index)` order.
    pub records: Vec<NeuronRecord>,
    pub provenance: Provenance,
}

impl NeuronSelection {
    pub fn set(&self, language: &LanguageId) -> Result<&BTreeSet<NeuronId>> {
        self.sets
            .get(language)
            .ok_or_else(|| Error::Argument(format!("language {language} is not in the selection")))
    }

    pub fn counts(&self) -> BTreeMap<LanguageId, usize> {
        self.sets.iter().map(|(l, s)| (l.clone(), s.len())).collect()
    }

    pub fn union(&self) -> BTreeSet<NeuronId> {
        self.sets.values().flatten().copied().collect()
    }

    /// Neurons assigned to more than one language.
    pub fn shared(&self) -> BTreeSet<NeuronId> {
        let mut seen = BTreeSet::new();
        let mut shared = BTreeSet::new();
        for s in self.sets.values() {
            for &n in s {
                if !seen.insert(n) {
                    shared.insert(n);
                }
            }
        }
        shared
    }

    fn from_assignments(
        method: Method,
        languages: Vec<LanguageId>,
        n_layers: usize,
        ffn_width: usize,
        records: Vec<NeuronRecord>,
        provenance: Provenance,
    ) -> Self {
        let mut sets: BTreeMap<LanguageId, BTreeSet<NeuronId>> =
            languages.iter().map(|l| (l.clone(), BTreeSet::new())).collect();
        for r in &records {
            for l in &r.languages {
                sets.get_mut(l).expect("assigned language is listed").insert(NeuronId::new(r.layer, r.index));
            }
        }
        NeuronSelection {
            method,
            languages,
            n_layers,
            ffn_width,
            sets,
            records,
            provenance,
        }
    }
}

/// sha256 hex digest of the statistics' trace encoding.
pub fn stats_digest(stats: &ActivationStats) -> Result<String> {
    Ok(hex::encode(Sha256::digest(write_trace(stats)?)))
}

/// Steps 1–4 of the entropy pipeline on any score table.
pub fn select_by_entropy(scores: &ScoreTable, cfg: &SelectionConfig, method: Method) -> Result<NeuronSelection> {
    cfg.validate()?;
    let ranking = scores.ranking();
    let keep = (cfg.bottom_fraction * ranking.len() as f64).ceil() as usize;
    let candidates = &ranking[..keep.min(ranking.len())];
    let pooled: Vec<f64> = scores.values.iter().copied().collect();
    let tau = nearest_rank(&pooled, cfg.threshold_percentile)?;
    let mut records = Vec::new();
    for &j in candidates {
        let row = scores.values.row(j);
        let langs: Vec<LanguageId> = row
            .iter()
            .zip(&scores.languages)
            .filter(|(&v, _)| v > tau)
            .map(|(_, l)| l.clone())
            .collect();
        if langs.is_empty() {
            continue;
        }
        let n = NeuronId::from_flat(j, scores.ffn_width);
        records.push(NeuronRecord {
            layer: n.layer,
            index: n.index,
            entropy: scores.entropy[j],
            values: row.to_vec(),
            languages: langs,
        });
    }
    if records.is_empty() {
        log::warn!(
            "{}: no neuron among {} candidates exceeds threshold {tau}",
            method.name(),
            candidates.len()
        );
    }
    records.sort_by_key(|r| (r.layer, r.index));
    Ok(NeuronSelection::from_assignments(
        method,
        scores.languages.clone(),
        scores.n_layers,
        scores.ffn_width,
        records,
        Provenance {
            config: cfg.clone(),
            stats_digest: None,
            threshold: Some(tau),
            candidates: candidates.len(),
        },
    ))
}

fn check_scores_match(scores: &ScoreTable, stats: &ActivationStats) -> Result<()> {
    if scores.languages != stats.languages()
        || scores.n_layers != stats.n_layers()
        || scores.ffn_width != stats.ffn_width()
    {
        return Err(Error::Geometry("scores were not computed from these statistics".into()));
    }
    Ok(())
}

pub fn select_lape(scores: &ScoreTable, stats: &ActivationStats, cfg: &SelectionConfig) -> Result<NeuronSelection> {
    check_scores_match(scores, stats)?;
    let mut sel = select_by_entropy(scores, cfg, Method::Lape)?;
    sel.provenance.stats_digest = Some(stats_digest(stats)?);
    Ok(sel)
}

pub fn select_lave(scores: &ScoreTable, stats: &ActivationStats, cfg: &SelectionConfig) -> Result<NeuronSelection> {
    check_scores_match(scores, stats)?;
    let mut sel = select_by_entropy(scores, cfg, Method::Lave)?;
    sel.provenance.stats_digest = Some(stats_digest(stats)?);
    Ok(sel)
}

/// Assign a neuron to language `k` whenever `p^k > prob_cutoff`.
pub fn select_lap(stats: &ActivationStats, prob_cutoff: f64) -> Result<NeuronSelection> {
    if !(0.0..=1.0).contains(&prob_cutoff) {
        return Err(Error::Argument(format!("probability cutoff must be in [0, 1], got {prob_cutoff}")));
    }
    let probs = stats.probability_matrix()?;
    let languages = stats.languages().to_vec();
    let mut records = Vec::new();
    for (j, row) in probs.rows().into_iter().enumerate() {
        let langs: Vec<LanguageId> = row
            .iter()
            .zip(&languages)
            .filter(|(&p, _)| p > prob_cutoff)
            .map(|(_, l)| l.clone())
            .collect();
        if !langs.is_empty() {
            let n = NeuronId::from_flat(j, stats.ffn_width());
            records.push(NeuronRecord {
                layer: n.layer,
                index: n.index,
                entropy: None,
                values: row.to_vec(),
                languages: langs,
            });
        }
    }
    Ok(NeuronSelection::from_assignments(
        Method::Lap,
        languages,
        stats.n_layers(),
        stats.ffn_width(),
        records,
        Provenance {
            config: SelectionConfig::default(),
            stats_digest: Some(stats_digest(stats)?),
            threshold: Some(prob_cutoff),
            candidates: probs.nrows(),
        },
    ))
}

/// Uniform draws without replacement, one independent draw per language.
pub fn select_random(
    n_per_language: &BTreeMap<LanguageId, usize>,
    n_layers: usize,
    ffn_width: usize,
    seed: u64,
) -> Result<NeuronSelection> {
    let total = n_layers * ffn_width;
    let languages: Vec<LanguageId> = n_per_language.keys().cloned().collect();
    let mut assigned: BTreeMap<usize, Vec<LanguageId>> = BTreeMap::new();
    for (l, &n) in n_per_language {
        if n > total {
            return Err(Error::Argument(format!("cannot draw {n} of {total} neurons for {l}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("random/{l}")));
        for j in rand::seq::index::sample(&mut rng, total, n) {
            assigned.entry(j).or_default().push(l.clone());
        }
    }
    let records = assigned
        .into_iter()
        .map(|(j, langs)| {
            let n = NeuronId::from_flat(j, ffn_width);
            NeuronRecord {
                layer: n.layer,
                index: n.index,
                entropy: None,
                values: Vec::new(),
                languages: langs,
            }
        })
        .collect();
    Ok(NeuronSelection::from_assignments(
        Method::Random,
        languages,
        n_layers,
        ffn_width,
        records,
        Provenance {
            config: SelectionConfig {
                seed,
                ..SelectionConfig::default()
            },
            stats_digest: None,
            threshold: None,
            candidates: total,
        },
    ))
}

/// Random selection with the same per-language sizes as `reference`.
pub fn select_random_matched(reference: &NeuronSelection, seed: u64) -> Result<NeuronSelection> {
    select_random(&reference.counts(), reference.n_layers, reference.ffn_width, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use ndarray::array;

    fn stats_from_counts(tokens: &[u64], counts: &[&[u64]]) -> ActivationStats {
        // counts[neuron][language]
        let k = tokens.len();
        let langs: Vec<LanguageId> = (0..k).map(|i| lang(&format!("L{i}"))).collect();
        let n = counts.len();
        let mut act = vec![vec![0u64; n]; k];
        for (j, row) in counts.iter().enumerate() {
            for (li, &c) in row.iter().enumerate() {
                act[li][j] = c;
            }
        }
        ActivationStats::from_parts(1, n, langs, tokens.to_vec(), act, vec![vec![0.0; n]; k], None).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let (_, h) = profile_entropy(&[0.5; 6]).unwrap();
        assert!((h - 6f64.ln()).abs() < 1e-12);
        let (p, h) = profile_entropy(&[0.9, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(h, 0.0);
        assert_eq!(p[0], 1.0);
        let (p, h) = profile_entropy(&[0.6, 0.6, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0, 0.0]);
        assert!((h - 2f64.ln()).abs() < 1e-12);
        assert!(profile_entropy(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn nearest_rank_values() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0).unwrap(), 19.0);
        assert_eq!(nearest_rank(&v, 50.0).unwrap(), 10.0);
        assert_eq!(nearest_rank(&[3.0], 95.0).unwrap(), 3.0);
        assert_eq!(nearest_rank(&v, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn single_neuron_single_language() {
        let s = stats_from_counts(&[4], &[&[4]]);
        let sel = select_lape(&lape_scores(&s).unwrap(), &s, &SelectionConfig::default()).unwrap();
        // τ is the only pooled value (1.0) so nothing is strictly above it
        assert!(sel.set(&lang("L0")).unwrap().is_empty());
        let cfg = SelectionConfig {
            threshold_percentile: 50.0,
            ..Default::default()
        };
        let s2 = stats_from_counts(&[4, 4], &[&[4, 0]]);
        let sel = select_lape(&lape_scores(&s2).unwrap(), &s2, &cfg).unwrap();
        assert_eq!(sel.set(&lang("L0")).unwrap().len(), 1);
        assert!(sel.set(&lang("L1")).unwrap().is_empty());
    }

    #[test]
    fn lap_is_strict() {
        let s = stats_from_counts(&[100, 100], &[&[95, 10], &[99, 99], &[96, 0]]);
        let sel = select_lap(&s, 0.95).unwrap();
        let l0: Vec<u32> = sel.set(&lang("L0")).unwrap().iter().map(|n| n.index).collect();
        let l1: Vec<u32> = sel.set(&lang("L1")).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(l0, vec![1, 2]);
        assert_eq!(l1, vec![1]);
    }

    #[test]
    fn lave_clamps_negative_means() {
        let langs = vec![lang("a"), lang("b")];
        let t = ScoreTable::from_values(langs.clone(), 1, 2, array![[0.4, 0.4], [0.4, 0.0]]).unwrap();
        assert!((t.entropy[0].unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(t.entropy[1], Some(0.0));
        let s = ActivationStats::from_parts(
            1,
            1,
            langs,
            vec![10, 10],
            vec![vec![5], vec![0]],
            vec![vec![4.0], vec![-1.0]],
            None,
        )
        .unwrap();
        let lave = lave_scores(&s, MeanMode::Unconditional).unwrap();
        assert_eq!(lave.values.row(0).to_vec(), vec![0.4, 0.0]);
        assert_eq!(lave.entropy[0], Some(0.0));
    }

    #[test]
    fn random_selection_properties() {
        let sizes: BTreeMap<LanguageId, usize> = [(lang("a"), 5), (lang("b"), 12)].into_iter().collect();
        let a = select_random(&sizes, 2, 6, 7).unwrap();
        let b = select_random(&sizes, 2, 6, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts(), sizes);
        let c = select_random(&sizes, 2, 6, 8).unwrap();
        assert_ne!(a.sets, c.sets);
        let all = select_random(&[(lang("a"), 12)].into_iter().collect(), 2, 6, 1).unwrap();
        assert_eq!(all.union().len(), 12);
        assert!(select_random(&[(lang("a"), 13)].into_iter().collect(), 2, 6, 1).is_err());
    }

    #[test]
    fn shared_accounting() {
        let s = stats_from_counts(&[10, 10, 10], &[&[10, 10, 0], &[10, 0, 0], &[0, 0, 1], &[1, 1, 1]]);
        let sel = select_lap(&s, 0.5).unwrap();
        let total: usize = sel.counts().values().sum();
        assert_eq!(total, 3);
        assert_eq!(sel.union().len(), 2);
        assert_eq!(sel.shared().len(), 1);
    }
}
