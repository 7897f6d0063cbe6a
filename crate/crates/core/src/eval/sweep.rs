use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{deactivation_plan, perplexity};
use crate::corpus::{Corpus, LanguageId};
use crate::error::{Error, Result};
use crate::identify::{lape_scores, select_lape, NeuronSelection, SelectionConfig};
use crate::model::Model;
use crate::probe::ActivationStats;
use crate::report::{line_plot_svg, Table};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    /// Size of the swept language's set.
    pub set_size: usize,
    /// PPL of every language with the swept set deactivated.
    pub ppl: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSweep {
    pub swept: LanguageId,
    pub languages: Vec<LanguageId>,
    pub baseline_ppl: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl RatioSweep {
    fn column(&self, l: &LanguageId) -> usize {
        self.languages.iter().position(|x| x == l).expect("listed language")
    }

    /// The swept language's PPL at each fraction.
    pub fn swept_ppl(&self) -> Vec<f64> {
        let c = self.column(&self.swept);
        self.rows.iter().map(|r| r.ppl[c]).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            ["fraction".to_string(), "set_size".to_string()]
                .into_iter()
                .chain(self.languages.iter().map(|l| format!("ppl_{l}"))),
        );
        t.push(
            ["0".to_string(), "0".to_string()]
                .into_iter()
                .chain(self.baseline_ppl.iter().map(|p| p.to_string())),
        );
        for r in &self.rows {
            t.push(
                [r.fraction.to_string(), r.set_size.to_string()]
                    .into_iter()
                    .chain(r.ppl.iter().map(|p| p.to_string())),
            );
        }
        t
    }

    pub fn plot(&self) -> String {
        let series: Vec<(String, Vec<(f64, f64)>)> = self
            .languages
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let pts = std::iter::once((0.0, self.baseline_ppl[j]))
                    .chain(self.rows.iter().map(|r| (100.0 * r.fraction, r.ppl[j])))
                    .collect();
                (l.to_string(), pts)
            })
            .collect();
        line_plot_svg(&format!("PPL while deactivating {}", self.swept), "selected neurons (%)", &series)
    }
}

/// Re-select with each bottom fraction and deactivate the swept language's
/// set, evaluating every language. Also returns the selections so callers
/// can inspect nesting.
pub fn ratio_sweep(
    model: &Model,
    stats: &ActivationStats,
    corpora: &BTreeMap<LanguageId, Corpus>,
    fractions: &[f64],
    swept: &LanguageId,
    base: &SelectionConfig,
) -> Result<(RatioSweep, Vec<NeuronSelection>)> {
    if fractions.is_empty() {
        return Err(Error::Argument("no fractions to sweep".into()));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 0.1)) {
        return Err(Error::Argument(format!("sweep fraction {f} outside (0, 0.1]")));
    }
    let languages = stats.languages().to_vec();
    if !languages.contains(swept) {
        return Err(Error::Argument(format!("{swept} is not covered by the statistics")));
    }
    let eval: Vec<&Corpus> = languages
        .iter()
        .map(|l| corpora.get(l).ok_or_else(|| Error::Argument(format!("no evaluation corpus for {l}"))))
        .collect::<Result<_>>()?;
    let baseline_ppl: Vec<f64> = eval.iter().map(|c| perplexity(model, c, None)).collect::<Result<_>>()?;
    let scores = lape_scores(stats)?;
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for &fraction in fractions {
        let cfg = SelectionConfig {
            bottom_fraction: fraction,
            ..base.clone()
        };
        let sel = select_lape(&scores, stats, &cfg)?;
        let plan = deactivation_plan(&sel, swept)?;
        let ppl = eval
            .iter()
            .zip(&baseline_ppl)
            .map(|(c, &b)| if plan.is_empty() { Ok(b) } else { perplexity(model, c, Some(&plan)) })
            .collect::<Result<Vec<_>>>()?;
        log::info!("sweep {swept} at {fraction}: {} neurons, ppl {ppl:?}", plan.len());
        rows.push(SweepRow {
            fraction,
            set_size: plan.len(),
            ppl,
        });
        selections.push(sel);
    }
    Ok((
        RatioSweep {
            swept: swept.clone(),
            languages,
            baseline_ppl,
            rows,
        },
        selections,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang};
    use crate::model::{FfnKind, ModelConfig};
    use crate::probe::accumulate;

    #[test]
    fn sweep_is_nested_and_bounded() {
        let m = Model::init(ModelConfig::tiny(8, 2, FfnKind::Gated), 9).unwrap();
        let corpora: BTreeMap<_, _> = [
            (lang("a"), ingest_text(b"abcabc abca\nbcab cabab\n", lang("a"))),
            (lang("b"), ingest_text(b"XYZ XZY\nZYX ZZY XXY\n", lang("b"))),
        ]
        .into_iter()
        .collect();
        let mut stats = ActivationStats::for_model(&m.config, vec![lang("a"), lang("b")]).unwrap();
        for c in corpora.values() {
            accumulate(&m, c, &mut stats).unwrap();
        }
        let fr = [0.01, 0.05, 0.1];
        let (sw, sels) = ratio_sweep(&m, &stats, &corpora, &fr, &lang("a"), &SelectionConfig::default()).unwrap();
        assert_eq!(sw.rows.len(), 3);
        for w in sels.windows(2) {
            for l in [lang("a"), lang("b")] {
                assert!(w[0].set(&l).unwrap().is_subset(w[1].set(&l).unwrap()));
            }
        }
        assert_eq!(sw.to_table().rows.len(), 4);
        assert!(ratio_sweep(&m, &stats, &corpora, &[0.2], &lang("a"), &SelectionConfig::default()).is_err());
        assert!(ratio_sweep(&m, &stats, &corpora, &[0.0], &lang("a"), &SelectionConfig::default()).is_err());
    }
}
