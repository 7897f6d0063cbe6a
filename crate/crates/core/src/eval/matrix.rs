use std::collections::BTreeMap;

use ndarray::Array2;

use super::{deactivation_plan, perplexity};
use crate::corpus::{Corpus, LanguageId};
use crate::error::{Error, Result};
use crate::identify::{NeuronSelection, ParamSelection};
use crate::model::{InterventionPlan, Model};
use crate::report::{heatmap_svg, Table};

/// One perturbation of the model: neuron overrides, or a modified copy of
/// the weights.
pub enum Perturbation {
    Neurons(InterventionPlan),
    Weights(Model),
}

/// PPL of every evaluated language `j` after perturbing the region of every
/// language `i`. Rows are perturbed languages, columns evaluated ones.
#[derive(Clone, Debug, PartialEq)]
pub struct PplChangeMatrix {
    pub languages: Vec<LanguageId>,
    pub baseline_ppl: Vec<f64>,
    pub perturbed_ppl: Array2<f64>,
}

impl PplChangeMatrix {
    /// `perturbed − baseline`.
    pub fn delta(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.perturbed_ppl.dim(), |(i, j)| {
            self.perturbed_ppl[[i, j]] - self.baseline_ppl[j]
        })
    }

    /// `perturbed / baseline`.
    pub fn ratio(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.perturbed_ppl.dim(), |(i, j)| {
            self.perturbed_ppl[[i, j]] / self.baseline_ppl[j]
        })
    }

    /// `(perturbed − baseline) / baseline`.
    pub fn normalized_delta(&self) -> Array2<f64> {
        self.ratio().mapv(|r| r - 1.0)
    }

    pub fn diagonal_delta(&self) -> Vec<f64> {
        let d = self.delta();
        (0..self.languages.len()).map(|k| d[[k, k]]).collect()
    }

    /// Per row: the diagonal delta strictly exceeds every other delta.
    pub fn diagonal_dominance(&self) -> Vec<bool> {
        let d = self.delta();
        let n = self.languages.len();
        (0..n)
            .map(|k| (0..n).filter(|&j| j != k).all(|j| d[[k, k]] > d[[k, j]]))
            .collect()
    }

    /// Per row: normalised diagonal delta over the mean normalised
    /// off-diagonal delta. Infinite when the off-diagonal mean is not
    /// positive but the diagonal is.
    pub fn diagonal_contrast(&self) -> Vec<f64> {
        let d = self.normalized_delta();
        let n = self.languages.len();
        (0..n)
            .map(|k| {
                let off: Vec<f64> = (0..n).filter(|&j| j != k).map(|j| d[[k, j]]).collect();
                let mean = off.iter().sum::<f64>() / off.len().max(1) as f64;
                if mean > 0.0 {
                    d[[k, k]] / mean
                } else if d[[k, k]] > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn labels(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.to_string()).collect()
    }

    /// Long-form table: one row per cell.
    pub fn to_table(&self) -> Table {
        let (delta, ratio, norm) = (self.delta(), self.ratio(), self.normalized_delta());
        let mut t = Table::new([
            "perturbed",
            "evaluated",
            "baseline_ppl",
            "perturbed_ppl",
            "delta",
            "ratio",
            "normalized_delta",
        ]);
        for (i, li) in self.languages.iter().enumerate() {
            for (j, lj) in self.languages.iter().enumerate() {
                t.push([
                    li.to_string(),
                    lj.to_string(),
                    self.baseline_ppl[j].to_string(),
                    self.perturbed_ppl[[i, j]].to_string(),
                    delta[[i, j]].to_string(),
                    ratio[[i, j]].to_string(),
                    norm[[i, j]].to_string(),
                ]);
            }
        }
        t
    }

    /// Square grid of absolute deltas.
    pub fn delta_grid(&self) -> Table {
        let l = self.labels();
        Table::grid("perturbed\\evaluated", &l, &l, &self.delta())
    }

    pub fn heatmap(&self, title: &str) -> String {
        let l = self.labels();
        heatmap_svg(title, &l, &l, &self.delta())
    }
}

fn corpus_for<'a>(corpora: &'a BTreeMap<LanguageId, Corpus>, l: &LanguageId) -> Result<&'a Corpus> {
    corpora
        .get(l)
        .ok_or_else(|| Error::Argument(format!("no evaluation corpus for {l}")))
}

/// Baseline PPL for each language, then one row per language `i` with the
/// perturbation built for `i`.
pub fn ppl_change_matrix_with<F>(
    model: &Model,
    languages: &[LanguageId],
    corpora: &BTreeMap<LanguageId, Corpus>,
    mut build: F,
) -> Result<PplChangeMatrix>
where
    F: FnMut(&LanguageId) -> Result<Perturbation>,
{
    let n = languages.len();
    let eval: Vec<&Corpus> = languages.iter().map(|l| corpus_for(corpora, l)).collect::<Result<_>>()?;
    let baseline_ppl: Vec<f64> = eval.iter().map(|c| perplexity(model, c, None)).collect::<Result<_>>()?;
    let mut perturbed_ppl = Array2::zeros((n, n));
    for (i, li) in languages.iter().enumerate() {
        match build(li)? {
            Perturbation::Neurons(plan) => {
                for (j, c) in eval.iter().enumerate() {
                    perturbed_ppl[[i, j]] = if plan.is_empty() {
                        baseline_ppl[j]
                    } else {
                        perplexity(model, c, Some(&plan))?
                    };
                }
            }
            Perturbation::Weights(m) => {
                for (j, c) in eval.iter().enumerate() {
                    perturbed_ppl[[i, j]] = perplexity(&m, c, None)?;
                }
            }
        }
        log::info!("perturbed {li}: {:?}", perturbed_ppl.row(i).to_vec());
    }
    Ok(PplChangeMatrix {
        languages: languages.to_vec(),
        baseline_ppl,
        perturbed_ppl,
    })
}

/// Deactivate each language's neurons in turn.
pub fn ppl_change_matrix(
    model: &Model,
    selection: &NeuronSelection,
    corpora: &BTreeMap<LanguageId, Corpus>,
) -> Result<PplChangeMatrix> {
    if selection.n_layers != model.config.n_layers || selection.ffn_width != model.config.ffn_width {
        return Err(Error::Geometry("selection does not match the model".into()));
    }
    ppl_change_matrix_with(model, &selection.languages, corpora, |l| {
        Ok(Perturbation::Neurons(deactivation_plan(selection, l)?))
    })
}

/// Zero each language's parameters in turn.
pub fn param_ppl_change_matrix(
    model: &Model,
    selection: &ParamSelection,
    corpora: &BTreeMap<LanguageId, Corpus>,
) -> Result<PplChangeMatrix> {
    ppl_change_matrix_with(model, &selection.languages, corpora, |l| {
        Ok(Perturbation::Weights(selection.zeroed_model(model, l)?))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang};
    use crate::identify::select_random;
    use crate::model::{FfnKind, ModelConfig, NeuronId};
    use ndarray::array;

    fn setup() -> (Model, BTreeMap<LanguageId, Corpus>) {
        let m = Model::init(ModelConfig::tiny(8, 2, FfnKind::Gated), 5).unwrap();
        let c = [
            (lang("a"), ingest_text(b"abcabc abca\nbcab", lang("a"))),
            (lang("b"), ingest_text(b"xyz xyzzy\nzyx", lang("b"))),
        ]
        .into_iter()
        .collect();
        (m, c)
    }

    #[test]
    fn empty_selection_gives_zero_grid() {
        let (m, c) = setup();
        let sizes = [(lang("a"), 0), (lang("b"), 0)].into_iter().collect();
        let sel = select_random(&sizes, 2, m.config.ffn_width, 1).unwrap();
        let g = ppl_change_matrix(&m, &sel, &c).unwrap();
        assert!(g.delta().iter().all(|&d| d == 0.0));
        assert!(g.ratio().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn rows_follow_the_builder() {
        let (m, c) = setup();
        let mut plan = InterventionPlan::new();
        for i in 0..m.config.ffn_width as u32 {
            plan.set_zero(NeuronId::new(1, i));
        }
        let langs = vec![lang("a"), lang("b")];
        let g = ppl_change_matrix_with(&m, &langs, &c, |l| {
            Ok(Perturbation::Neurons(if l.as_str() == "a" { plan.clone() } else { InterventionPlan::new() }))
        })
        .unwrap();
        let direct = perplexity(&m, &c[&lang("b")], Some(&plan)).unwrap();
        assert_eq!(g.perturbed_ppl[[0, 1]], direct);
        assert_eq!(g.perturbed_ppl.row(1).to_vec(), g.baseline_ppl);
        assert!(ppl_change_matrix_with(&m, &[lang("zz")], &c, |_| Ok(Perturbation::Weights(m.clone()))).is_err());
    }

    #[test]
    fn dominance_and_contrast() {
        let g = PplChangeMatrix {
            languages: vec![lang("a"), lang("b"), lang("c")],
            baseline_ppl: vec![2.0, 4.0, 5.0],
            perturbed_ppl: array![[4.0, 4.4, 5.0], [2.2, 8.0, 5.5], [2.0, 4.0, 5.0]],
        };
        assert_eq!(g.diagonal_dominance(), vec![true, true, false]);
        let c = g.diagonal_contrast();
        // row a: diag 1.0, off mean (0.1 + 0) / 2
        assert!((c[0] - 20.0).abs() < 1e-12);
        assert!((c[1] - 1.0 / 0.1).abs() < 1e-9);
        assert_eq!(c[2], 0.0);
        assert_eq!(g.to_table().rows.len(), 9);
    }
}
