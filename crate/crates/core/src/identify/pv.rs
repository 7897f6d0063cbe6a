//! Parameter-variation scores from monolingual fine-tunes.
//!
//! For every scalar of the attention and FFN matrices and every language
//! `k`: `r_k = |θ_k − θ_base| / (|θ_base| + 1e-8)`, refined to
//! `s_k = max_j r_j − r_k`, then L1-normalised and scored by entropy. A
//! selected parameter belongs to language `k` when its normalised `s′_k`
//! exceeds the pooled percentile of all normalised values.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{nearest_rank, profile_entropy, SelectionConfig};
use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::model::{Model, ParamKey, ParamKind};

const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamIndex {
    pub key: ParamKey,
    /// Row-major offset inside the tensor.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PvScores {
    pub languages: Vec<LanguageId>,
    /// Scored tensors and their lengths, in checkpoint order.
    pub tensors: Vec<(ParamKey, usize)>,
    /// Per scalar, in tensor order; `None` when `s` is all zero.
    pub entropy: Vec<Option<f64>>,
    /// Normalised `s′`, `n_scalars × n_languages` row-major.
    pub profiles: Vec<f64>,
}

impl PvScores {
    pub fn n_scalars(&self) -> usize {
        self.entropy.len()
    }

    pub fn index_of(&self, flat: usize) -> ParamIndex {
        let mut rest = flat;
        for &(key, len) in &self.tensors {
            if rest < len {
                return ParamIndex { key, offset: rest };
            }
            rest -= len;
        }
        panic!("scalar {flat} out of range");
    }
}

fn scored(kind: ParamKind) -> bool {
    kind.is_block_matrix()
}

/// Entropy of the refined change-ratio profile of every block-matrix
/// scalar. All fine-tunes must share the base geometry.
pub fn pv_scores(base: &Model, finetuned: &BTreeMap<LanguageId, Model>) -> Result<PvScores> {
    if finetuned.len() < 2 {
        return Err(Error::Argument("parameter variation needs at least two fine-tuned models".into()));
    }
    for (l, m) in finetuned {
        if m.config != base.config {
            return Err(Error::Geometry(format!("fine-tune for {l} does not share the base geometry")));
        }
    }
    let languages: Vec<LanguageId> = finetuned.keys().cloned().collect();
    let k = languages.len();
    let base_t = base.weights.tensors();
    let tuned: Vec<Vec<(ParamKey, &[f64])>> = finetuned.values().map(|m| m.weights.tensors()).collect();
    let mut tensors = Vec::new();
    let mut entropy = Vec::new();
    let mut profiles = Vec::new();
    let mut r = vec![0.0; k];
    let mut s = vec![0.0; k];
    for (ti, (key, theta)) in base_t.iter().enumerate() {
        if !scored(key.kind) {
            continue;
        }
        tensors.push((*key, theta.len()));
        for (i, &b) in theta.iter().enumerate() {
            for (li, t) in tuned.iter().enumerate() {
                r[li] = (t[ti].1[i] - b).abs() / (b.abs() + EPS);
            }
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for li in 0..k {
                s[li] = max - r[li];
            }
            match profile_entropy(&s) {
                Some((p, h)) => {
                    entropy.push(Some(h));
                    profiles.extend(p);
                }
                None => {
                    entropy.push(None);
                    profiles.extend(std::iter::repeat_n(0.0, k));
                }
            }
        }
    }
    Ok(PvScores {
        languages,
        tensors,
        entropy,
        profiles,
    })
}

/// Per-language parameter sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSelection {
    pub languages: Vec<LanguageId>,
    pub sets: BTreeMap<LanguageId, BTreeSet<ParamIndex>>,
    pub threshold: f64,
    pub candidates: usize,
}

impl ParamSelection {
    pub fn counts(&self) -> BTreeMap<LanguageId, usize> {
        self.sets.iter().map(|(l, s)| (l.clone(), s.len())).collect()
    }

    /// Copy of `model` with the language's parameters set to zero.
    pub fn zeroed_model(&self, model: &Model, language: &LanguageId) -> Result<Model> {
        let set = self
            .sets
            .get(language)
            .ok_or_else(|| Error::Argument(format!("language {language} is not in the selection")))?;
        let mut out = model.clone();
        let mut tensors = out.weights.tensors_mut();
        for p in set {
            let (_, t) = tensors
                .iter_mut()
                .find(|(k, _)| *k == p.key)
                .ok_or_else(|| Error::Geometry(format!("model has no tensor {}", p.key)))?;
            let slot = t
                .get_mut(p.offset)
                .ok_or_else(|| Error::Geometry(format!("offset {} outside {}", p.offset, p.key)))?;
            *slot = 0.0;
        }
        Ok(out)
    }
}

pub fn pv_select(scores: &PvScores, cfg: &SelectionConfig) -> Result<ParamSelection> {
    cfg.validate()?;
    let k = scores.languages.len();
    let mut ranking: Vec<usize> = (0..scores.n_scalars()).filter(|&i| scores.entropy[i].is_some()).collect();
    ranking.sort_by(|&a, &b| {
        scores.entropy[a]
            .unwrap()
            .total_cmp(&scores.entropy[b].unwrap())
            .then(a.cmp(&b))
    });
    let keep = ((cfg.bottom_fraction * ranking.len() as f64).ceil() as usize).min(ranking.len());
    let pooled: Vec<f64> = ranking
        .iter()
        .flat_map(|&i| scores.profiles[i * k..(i + 1) * k].iter().copied())
        .collect();
    let tau = if pooled.is_empty() {
        0.0
    } else {
        nearest_rank(&pooled, cfg.threshold_percentile)?
    };
    let mut sets: BTreeMap<LanguageId, BTreeSet<ParamIndex>> =
        scores.languages.iter().map(|l| (l.clone(), BTreeSet::new())).collect();
    for &i in &ranking[..keep] {
        let idx = scores.index_of(i);
        for (li, l) in scores.languages.iter().enumerate() {
            if scores.profiles[i * k + li] > tau {
                sets.get_mut(l).expect("listed").insert(idx);
            }
        }
    }
    Ok(ParamSelection {
        languages: scores.languages.clone(),
        sets,
        threshold: tau,
        candidates: keep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use crate::model::{FfnKind, ModelConfig};

    fn base() -> Model {
        Model::init(ModelConfig::tiny(4, 1, FfnKind::Standard), 2).unwrap()
    }

    #[test]
    fn identical_change_is_excluded() {
        let b = base();
        let mut ft = BTreeMap::new();
        for l in ["a", "b", "c"] {
            let mut m = b.clone();
            m.weights.layers[0].w_q[[0, 0]] *= 2.0;
            ft.insert(lang(l), m);
        }
        let s = pv_scores(&b, &ft).unwrap();
        assert!(s.entropy.iter().all(|e| e.is_none()));
        let sel = pv_select(&s, &SelectionConfig::default()).unwrap();
        assert!(sel.sets.values().all(|s| s.is_empty()));
    }

    #[test]
    fn one_hot_after_refinement() {
        let b = base();
        let theta = b.weights.layers[0].w_q[[0, 1]];
        let mut ft = BTreeMap::new();
        for (i, (l, r)) in [("a", 0.0), ("b", 1.0), ("c", 1.0)].into_iter().enumerate() {
            // every other scalar moves by a language-dependent amount so the
            // threshold pool is not degenerate
            let mut m = Model::init(b.config.clone(), 40 + i as u64).unwrap();
            for ((_, t), (_, b0)) in m.weights.tensors_mut().into_iter().zip(b.weights.tensors()) {
                for (x, &y) in t.iter_mut().zip(b0) {
                    *x = y + 0.1 * *x;
                }
            }
            m.weights.layers[0].w_q[[0, 1]] = theta + r * (theta.abs() + EPS);
            ft.insert(lang(l), m);
        }
        let s = pv_scores(&b, &ft).unwrap();
        let first_wq = s.tensors.iter().position(|(k, _)| k.kind == ParamKind::Wq).unwrap();
        let off: usize = s.tensors[..first_wq].iter().map(|(_, n)| n).sum::<usize>() + 1;
        assert_eq!(s.entropy[off], Some(0.0));
        let p = &s.profiles[off * 3..off * 3 + 3];
        assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-9 && p[2].abs() < 1e-9);
        let sel = pv_select(&s, &SelectionConfig::default()).unwrap();
        assert!(sel.sets[&lang("a")].contains(&s.index_of(off)));
    }

    #[test]
    fn geometry_mismatch() {
        let b = base();
        let other = Model::init(ModelConfig::tiny(8, 1, FfnKind::Standard), 2).unwrap();
        let ft: BTreeMap<_, _> = [(lang("a"), b.clone()), (lang("b"), other)].into_iter().collect();
        assert!(matches!(pv_scores(&b, &ft), Err(Error::Geometry(_))));
    }

    #[test]
    fn zeroed_model_touches_only_selected() {
        let b = base();
        let key = ParamKey {
            kind: ParamKind::W1,
            layer: Some(1),
        };
        let sel = ParamSelection {
            languages: vec![lang("a")],
            sets: [(lang("a"), [ParamIndex { key, offset: 3 }].into_iter().collect())]
                .into_iter()
                .collect(),
            threshold: 0.0,
            candidates: 1,
        };
        let z = sel.zeroed_model(&b, &lang("a")).unwrap();
        assert_eq!(z.weights.layers[0].w_1.as_slice().unwrap()[3], 0.0);
        let mut again = z.clone();
        again.weights.layers[0].w_1.as_slice_mut().unwrap()[3] = b.weights.layers[0].w_1.as_slice().unwrap()[3];
        assert_eq!(again, b);
    }
}
