use serde::{Deserialize, Serialize};

use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::identify::NeuronSelection;
use crate::report::{line_plot_svg, Table};

/// Header of the first column in per-layer tables.
pub const LAYER_COLUMN: &str = "#Layer";

/// Selected neurons per language and 1-based layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub languages: Vec<LanguageId>,
    pub n_layers: usize,
    /// `counts[k][i]` neurons of `languages[k]` sit in layer `i + 1`.
    pub counts: Vec<Vec<usize>>,
}

impl LayerHistogram {
    pub fn from_counts(languages: Vec<LanguageId>, counts: Vec<Vec<usize>>) -> Result<Self> {
        if counts.len() != languages.len() {
            return Err(Error::Argument(format!(
                "{} count rows for {} languages",
                counts.len(),
                languages.len()
            )));
        }
        let n_layers = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|c| c.len() != n_layers) {
            return Err(Error::Argument("count rows differ in length".into()));
        }
        Ok(LayerHistogram {
            languages,
            n_layers,
            counts,
        })
    }

    fn index(&self, language: &LanguageId) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| Error::Argument(format!("{language} is not in the histogram")))
    }

    /// Count for a 1-based layer.
    pub fn count(&self, language: &LanguageId, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.n_layers {
            return Err(Error::Argument(format!("layer {layer} outside 1..={}", self.n_layers)));
        }
        Ok(self.counts[self.index(language)?][layer - 1])
    }

    pub fn layer_counts(&self, language: &LanguageId) -> Result<&[usize]> {
        Ok(&self.counts[self.index(language)?])
    }

    /// Per-language sums over layers.
    pub fn totals(&self) -> Vec<usize> {
        self.counts.iter().map(|c| c.iter().sum()).collect()
    }

    /// One row per layer: `#Layer, <lang>...`.
    pub fn layer_table(&self) -> Table {
        let mut t = Table::new(
            std::iter::once(LAYER_COLUMN.to_string()).chain(self.languages.iter().map(|l| l.to_string())),
        );
        for i in 0..self.n_layers {
            t.push(std::iter::once((i + 1).to_string()).chain(self.counts.iter().map(|c| c[i].to_string())));
        }
        t
    }

    /// Inverse of [`LayerHistogram::layer_table`]; layers must run 1, 2, ...
    pub fn from_layer_table(table: &Table) -> Result<Self> {
        let (first, langs) = table
            .header
            .split_first()
            .ok_or_else(|| Error::Format("empty layer table".into()))?;
        if first != LAYER_COLUMN {
            return Err(Error::Format(format!("first column is {first:?}, expected {LAYER_COLUMN:?}")));
        }
        let languages = langs.iter().map(LanguageId::new).collect::<Result<Vec<_>>>()?;
        let mut counts = vec![Vec::with_capacity(table.rows.len()); languages.len()];
        for (i, row) in table.rows.iter().enumerate() {
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("row {}: {s:?} is not a count", i + 1)))
            };
            if row.len() != table.header.len() {
                return Err(Error::Format(format!("row {} has {} cells", i + 1, row.len())));
            }
            if num(&row[0])? != i + 1 {
                return Err(Error::Format(format!("row {} is labelled layer {}", i + 1, row[0])));
            }
            for (k, cell) in row[1..].iter().enumerate() {
                counts[k].push(num(cell)?);
            }
        }
        Self::from_counts(languages, counts)
    }

    /// Language-count summary: the languages as header, one row of totals.
    pub fn totals_table(&self) -> Table {
        let mut t = Table::new(self.languages.iter().map(|l| l.to_string()));
        t.push(self.totals().into_iter().map(|c| c.to_string()));
        t
    }

    pub fn plot(&self) -> String {
        let series: Vec<(String, Vec<(f64, f64)>)> = self
            .languages
            .iter()
            .zip(&self.counts)
            .map(|(l, c)| {
                let pts = c.iter().enumerate().map(|(i, &n)| ((i + 1) as f64, n as f64)).collect();
                (l.to_string(), pts)
            })
            .collect();
        line_plot_svg("Language-specific neurons per layer", "layer", &series)
    }
}

/// Count each language's selected neurons per layer.
pub fn layer_distribution(selection: &NeuronSelection) -> LayerHistogram {
    let counts = selection
        .languages
        .iter()
        .map(|l| {
            let mut c = vec![0; selection.n_layers];
            for n in selection.sets.get(l).into_iter().flatten() {
                c[n.layer as usize - 1] += 1;
            }
            c
        })
        .collect();
    LayerHistogram {
        languages: selection.languages.clone(),
        n_layers: selection.n_layers,
        counts,
    }
}
