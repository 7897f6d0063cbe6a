use ndarray::{Array1, Axis};

use crate::corpus::{LanguageId, ParallelSet, TokenId, BOS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::report::{line_plot_svg, Table};

/// Mean hidden state of `text` at the output of every layer (index 0 is
/// layer 1). The model sees `[BOS] + text`; the `BOS` position is not
/// pooled.
pub fn layer_embeddings(model: &Model, text: &[TokenId]) -> Result<Vec<Array1<f64>>> {
    if text.is_empty() {
        return Err(Error::Argument("cannot embed an empty text".into()));
    }
    if text.len() + 1 > model.config.max_seq_len {
        return Err(Error::Argument(format!(
            "text of {} tokens does not fit max_seq_len {} (one slot is BOS)",
            text.len(),
            model.config.max_seq_len
        )));
    }
    let mut input = Vec::with_capacity(text.len() + 1);
    input.push(BOS);
    input.extend_from_slice(text);
    let cap = model.forward(&input, None, true)?.capture.expect("capture requested");
    Ok(cap
        .hidden
        .iter()
        .map(|h| h.slice(ndarray::s![1.., ..]).mean_axis(Axis(0)).expect("non-empty text"))
        .collect())
}

/// Mean-pooled hidden state of `text` at the output of 1-based `layer`.
pub fn sentence_embedding(model: &Model, text: &[TokenId], layer: usize) -> Result<Array1<f64>> {
    if layer == 0 || layer > model.config.n_layers {
        return Err(Error::Argument(format!("layer {layer} outside 1..={}", model.config.n_layers)));
    }
    Ok(layer_embeddings(model, text)?.swap_remove(layer - 1))
}

/// Cosine similarity clamped to `[-1, 1]`; `None` when either vector is zero.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Option<f64> {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Move `h` from one language's region to another's: `h − v_from + v_to`,
/// evaluated as `h + (v_to − v_from)` so that equal vectors give `h` exactly.
pub fn map_to_language(h: &Array1<f64>, v_from: &Array1<f64>, v_to: &Array1<f64>) -> Array1<f64> {
    h + &(v_to - v_from)
}

/// Per-layer similarity curve (index 0 is layer 1).
#[derive(Clone, Debug, PartialEq)]
pub struct SesCurve {
    /// Mean over every contributing pair.
    pub mean: Vec<f64>,
    /// The same mean restricted to one language pair (SES) or one source
    /// language (dominance). `NaN` where no pair contributed.
    pub series: Vec<(String, Vec<f64>)>,
    /// Pairs dropped because an embedding was zero.
    pub skipped: usize,
}

impl SesCurve {
    pub fn n_layers(&self) -> usize {
        self.mean.len()
    }

    /// Mean of the curve over layers.
    pub fn score(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            ["layer".to_string(), "mean".to_string()]
                .into_iter()
                .chain(self.series.iter().map(|(n, _)| n.clone())),
        );
        for i in 0..self.n_layers() {
            t.push(
                [(i + 1).to_string(), self.mean[i].to_string()]
                    .into_iter()
                    .chain(self.series.iter().map(|(_, s)| s[i].to_string())),
            );
        }
        t
    }

    pub fn plot(&self, title: &str) -> String {
        let pts = |s: &[f64]| s.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
        let series: Vec<(String, Vec<(f64, f64)>)> = std::iter::once(("mean".to_string(), pts(&self.mean)))
            .chain(self.series.iter().map(|(n, s)| (n.clone(), pts(s))))
            .collect();
        line_plot_svg(title, "layer", &series)
    }
}

/// Embeddings of every text of a parallel set at every layer.
#[derive(Clone, Debug)]
pub struct ParallelEmbeddings {
    pub languages: Vec<LanguageId>,
    pub n_layers: usize,
    /// `emb[g][k][i]`: group `g`, language `k`, layer `i + 1`.
    pub emb: Vec<Vec<Vec<Array1<f64>>>>,
}

impl ParallelEmbeddings {
    /// Texts are embedded on scoped threads, one chunk of groups each.
    pub fn compute(model: &Model, set: &ParallelSet) -> Result<Self> {
        if set.languages.len() < 2 || set.groups.is_empty() {
            return Err(Error::Argument("need at least two languages and one group".into()));
        }
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let chunk = set.groups.len().div_ceil(threads);
        let embed_group = |g: &Vec<Vec<TokenId>>| g.iter().map(|t| layer_embeddings(model, t)).collect::<Result<Vec<_>>>();
        let emb = if threads == 1 {
            set.groups.iter().map(embed_group).collect::<Result<Vec<_>>>()?
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = set
                    .groups
                    .chunks(chunk)
                    .map(|c| s.spawn(move || c.iter().map(embed_group).collect::<Result<Vec<_>>>()))
                    .collect();
                let mut all = Vec::with_capacity(set.groups.len());
                for h in handles {
                    all.extend(h.join().expect("embedding thread panicked")?);
                }
                Ok::<_, Error>(all)
            })?
        };
        Ok(ParallelEmbeddings {
            languages: set.languages.clone(),
            n_layers: model.config.n_layers,
            emb,
        })
    }

    fn language_index(&self, l: &LanguageId) -> Result<usize> {
        self.languages
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::Argument(format!("{l} is not in the parallel set")))
    }

    /// Mean embedding of each language over all groups: `v[k][i]`.
    pub fn language_vectors(&self) -> Vec<Vec<Array1<f64>>> {
        let n = self.emb.len() as f64;
        (0..self.languages.len())
            .map(|k| {
                (0..self.n_layers)
                    .map(|i| self.emb.iter().fold(Array1::zeros(self.emb[0][k][i].len()), |acc, g| acc + &g[k][i]) / n)
                    .collect()
            })
            .collect()
    }

    /// Cosine over every aligned cross-language pair.
    pub fn ses_curve(&self) -> Result<SesCurve> {
        let n = self.languages.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let labels = pairs
            .iter()
            .map(|&(a, b)| format!("{}-{}", self.languages[a], self.languages[b]))
            .collect();
        self.curve(labels, |g, i| {
            pairs
                .iter()
                .enumerate()
                .map(|(p, &(a, b))| (p, cosine(&self.emb[g][a][i], &self.emb[g][b][i])))
                .collect()
        })
    }

    /// Map every non-target text into the target's region and compare it with
    /// the aligned target text.
    pub fn dominance_curve(&self, target: &LanguageId) -> Result<SesCurve> {
        let c = self.language_index(target)?;
        let v = self.language_vectors();
        let sources: Vec<usize> = (0..self.languages.len()).filter(|&k| k != c).collect();
        let labels = sources.iter().map(|&k| self.languages[k].to_string()).collect();
        self.curve(labels, |g, i| {
            sources
                .iter()
                .enumerate()
                .map(|(s, &k)| {
                    let mapped = map_to_language(&self.emb[g][k][i], &v[k][i], &v[c][i]);
                    (s, cosine(&mapped, &self.emb[g][c][i]))
                })
                .collect()
        })
    }

    /// Average `(series, similarity)` values per layer over groups.
    fn curve<F>(&self, labels: Vec<String>, sims: F) -> Result<SesCurve>
    where
        F: Fn(usize, usize) -> Vec<(usize, Option<f64>)>,
    {
        let mut mean = Vec::with_capacity(self.n_layers);
        let mut per: Vec<Vec<f64>> = vec![Vec::with_capacity(self.n_layers); labels.len()];
        let mut skipped = 0;
        for i in 0..self.n_layers {
            let mut sum = vec![0.0; labels.len()];
            let mut cnt = vec![0usize; labels.len()];
            for g in 0..self.emb.len() {
                for (s, sim) in sims(g, i) {
                    match sim {
                        Some(x) => {
                            sum[s] += x;
                            cnt[s] += 1;
                        }
                        None => {
                            skipped += 1;
                            log::warn!("zero embedding in group {g}, layer {}; pair skipped", i + 1);
                        }
                    }
                }
            }
            let total: usize = cnt.iter().sum();
            if total == 0 {
                return Err(Error::Argument(format!("no non-zero embedding pairs at layer {}", i + 1)));
            }
            mean.push(sum.iter().sum::<f64>() / total as f64);
            for (s, p) in per.iter_mut().enumerate() {
                p.push(if cnt[s] == 0 { f64::NAN } else { sum[s] / cnt[s] as f64 });
            }
        }
        Ok(SesCurve {
            mean,
            series: labels.into_iter().zip(per).collect(),
            skipped,
        })
    }
}

/// Mean cross-language similarity per layer over a parallel set.
pub fn ses_curve(model: &Model, set: &ParallelSet) -> Result<SesCurve> {
    ParallelEmbeddings::compute(model, set)?.ses_curve()
}

/// Similarity of non-target texts mapped into `target`'s region with the
/// aligned target texts, per layer.
pub fn dominance_curve(model: &Model, set: &ParallelSet, target: &LanguageId) -> Result<SesCurve> {
    let e = ParallelEmbeddings::compute(model, set)?;
    e.language_index(target)?;
    e.dominance_curve(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use crate::model::{FfnKind, ModelConfig};
    use ndarray::array;

    fn model() -> Model {
        Model::init(ModelConfig::tiny(8, 3, FfnKind::Gated), 21).unwrap()
    }

    fn toks(s: &[u8]) -> Vec<TokenId> {
        s.iter().map(|&b| b as TokenId).collect()
    }

    #[test]
    fn single_token_is_its_hidden_state() {
        let m = model();
        let cap = m.forward(&[BOS, 65], None, true).unwrap().capture.unwrap();
        for layer in 1..=3 {
            let e = sentence_embedding(&m, &toks(b"A"), layer).unwrap();
            assert_eq!(e, cap.hidden[layer - 1].row(1).to_owned());
        }
        assert!(sentence_embedding(&m, &toks(b"A"), 0).is_err());
        assert!(sentence_embedding(&m, &toks(b"A"), 4).is_err());
        assert!(sentence_embedding(&m, &[], 1).is_err());
    }

    #[test]
    fn mean_of_per_token_states() {
        let m = model();
        let text = toks(b"xxyx");
        let cap = m.forward(&[BOS, 120, 120, 121, 120], None, true).unwrap().capture.unwrap();
        let e = sentence_embedding(&m, &text, 2).unwrap();
        let mut want = Array1::<f64>::zeros(8);
        for t in 1..5 {
            want += &cap.hidden[1].row(t);
        }
        want /= 4.0;
        assert!((&e - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn cosine_and_mapping() {
        assert_eq!(cosine(&array![1.0, 0.0], &array![0.0, 2.0]), Some(0.0));
        assert_eq!(cosine(&array![1.0, 0.0], &array![0.0, 0.0]), None);
        assert_eq!(map_to_language(&array![1.0, 0.0], &array![1.0, 0.0], &array![0.0, 1.0]), array![0.0, 1.0]);
        let h = array![0.1, -7.3e-5, 3.3];
        let v = array![1.0 / 3.0, 2.0e8, -0.7];
        assert_eq!(map_to_language(&h, &v, &v), h);
    }

    #[test]
    fn identical_texts_give_unit_curves() {
        let m = model();
        let set = ParallelSet::from_texts(
            vec![lang("a"), lang("b")],
            vec![vec![toks(b"abc"), toks(b"abc")], vec![toks(b"ca b"), toks(b"ca b")]],
        )
        .unwrap();
        let s = ses_curve(&m, &set).unwrap();
        assert_eq!(s.n_layers(), 3);
        assert!(s.mean.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let d = dominance_curve(&m, &set, &lang("b")).unwrap();
        assert!(d.mean.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(d.series.len(), 1);
        assert!(dominance_curve(&m, &set, &lang("zz")).is_err());
        assert_eq!(s.to_table().rows.len(), 3);
    }

    #[test]
    fn zero_embeddings_are_skipped() {
        let z = Array1::<f64>::zeros(2);
        let e = ParallelEmbeddings {
            languages: vec![lang("a"), lang("b")],
            n_layers: 1,
            emb: vec![
                vec![vec![array![1.0, 0.0]], vec![array![0.0, 1.0]]],
                vec![vec![z.clone()], vec![array![1.0, 1.0]]],
            ],
        };
        let s = e.ses_curve().unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.mean, vec![0.0]);
        let all_zero = ParallelEmbeddings {
            languages: vec![lang("a"), lang("b")],
            n_layers: 1,
            emb: vec![vec![vec![z.clone()], vec![z]]],
        };
        assert!(all_zero.ses_curve().is_err());
    }
}
