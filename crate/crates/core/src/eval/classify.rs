use std::collections::{BTreeMap, HashMap};

use crate::corpus::{is_special, Corpus, LanguageId, TokenId};
use crate::error::{Error, Result};

/// Decisions at or below this confidence are flagged ambiguous.
pub const AMBIGUITY_CUTOFF: f64 = 0.6;

const MAX_N: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// Nearest profile; `None` for empty text or no overlap with any profile.
    pub language: Option<LanguageId>,
    /// Best cosine over the sum of positive cosines.
    pub confidence: f64,
    pub ambiguous: bool,
}

impl Classification {
    /// The language when the decision is unambiguous.
    pub fn label(&self) -> Option<&LanguageId> {
        if self.ambiguous {
            None
        } else {
            self.language.as_ref()
        }
    }
}

/// Nearest-profile language identification over byte 1- to 3-grams.
/// Grams are weighted by `ln(L / df)`, `df` being the number of profiles
/// that contain them, so grams every language uses carry no weight.
#[derive(Clone, Debug)]
pub struct LanguageClassifier {
    languages: Vec<LanguageId>,
    profiles: Vec<HashMap<u32, f64>>,
    idf: HashMap<u32, f64>,
}

fn key(gram: &[u8]) -> u32 {
    gram.iter().fold(gram.len() as u32, |k, &b| (k << 8) | b as u32)
}

fn counts<'a>(segments: impl Iterator<Item = &'a [u8]>) -> HashMap<u32, f64> {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for seg in segments {
        for n in 1..=MAX_N {
            for g in seg.windows(n) {
                *counts.entry(key(g)).or_default() += 1.0;
            }
        }
    }
    counts
}

fn weighted(mut counts: HashMap<u32, f64>, idf: &HashMap<u32, f64>) -> HashMap<u32, f64> {
    counts.retain(|k, _| idf.get(k).is_some_and(|&w| w > 0.0));
    counts.iter_mut().for_each(|(k, c)| *c *= idf[k]);
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.values_mut().for_each(|c| *c /= norm);
    }
    counts
}

fn bytes(tokens: &[TokenId]) -> Vec<u8> {
    tokens.iter().filter(|&&t| !is_special(t)).map(|&t| t as u8).collect()
}

impl LanguageClassifier {
    /// One profile per corpus, built from its documents.
    pub fn fit(corpora: &BTreeMap<LanguageId, Corpus>) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Argument("classifier needs at least one corpus".into()));
        }
        let mut languages = Vec::new();
        let mut raw = Vec::new();
        for (l, c) in corpora {
            if c.is_empty() {
                return Err(Error::Argument(format!("corpus for {l} is empty")));
            }
            let docs: Vec<Vec<u8>> = c.documents().map(bytes).collect();
            languages.push(l.clone());
            raw.push(counts(docs.iter().map(Vec::as_slice)));
        }
        let mut df: HashMap<u32, usize> = HashMap::new();
        for p in &raw {
            for &k in p.keys() {
                *df.entry(k).or_default() += 1;
            }
        }
        let total = raw.len() as f64;
        let idf: HashMap<u32, f64> = if raw.len() == 1 {
            df.into_keys().map(|k| (k, 1.0)).collect()
        } else {
            df.into_iter().map(|(k, d)| (k, (total / d as f64).ln())).collect()
        };
        let profiles = raw.into_iter().map(|p| weighted(p, &idf)).collect();
        Ok(LanguageClassifier {
            languages,
            profiles,
            idf,
        })
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    /// Cosine similarity of the text's profile to every language.
    pub fn similarities(&self, text: &[u8]) -> Vec<f64> {
        let p = weighted(counts(std::iter::once(text)), &self.idf);
        self.profiles
            .iter()
            .map(|q| p.iter().map(|(k, v)| v * q.get(k).copied().unwrap_or(0.0)).sum())
            .collect()
    }

    pub fn classify(&self, text: &[u8]) -> Classification {
        let sims = self.similarities(text);
        let positive: f64 = sims.iter().filter(|&&s| s > 0.0).sum();
        if positive <= 0.0 {
            return Classification {
                language: None,
                confidence: 0.0,
                ambiguous: true,
            };
        }
        let mut best = 0;
        for (i, &s) in sims.iter().enumerate() {
            if s > sims[best] {
                best = i;
            }
        }
        let confidence = sims[best] / positive;
        Classification {
            language: Some(self.languages[best].clone()),
            confidence,
            ambiguous: confidence <= AMBIGUITY_CUTOFF,
        }
    }

    /// Classify token ids; special tokens are dropped.
    pub fn classify_tokens(&self, tokens: &[TokenId]) -> Classification {
        self.classify(&bytes(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang};

    fn fitted() -> LanguageClassifier {
        let c = [
            (lang("up"), ingest_text(b"ABC ABD BCA\nCAB DAB ABCD\n", lang("up"))),
            (lang("lo"), ingest_text(b"xyz xzy yzx\nzxy wxyz\n", lang("lo"))),
        ]
        .into_iter()
        .collect();
        LanguageClassifier::fit(&c).unwrap()
    }

    #[test]
    fn verbatim_text() {
        let c = fitted();
        let r = c.classify(b"ABC ABD");
        assert_eq!(r.label(), Some(&lang("up")));
        assert!(r.confidence > 0.6 && !r.ambiguous);
    }

    #[test]
    fn half_and_half_is_ambiguous() {
        let c = fitted();
        let r = c.classify(b"ABCABxyzxy");
        assert!(r.confidence <= 0.6, "{r:?}");
        assert!(r.ambiguous && r.label().is_none());
    }

    #[test]
    fn empty_and_unseen() {
        let c = fitted();
        assert_eq!(c.classify(b"").language, None);
        assert_eq!(c.classify(b"999").language, None);
    }

    #[test]
    fn shared_grams_carry_no_weight() {
        let c = [
            (lang("up"), ingest_text(b"AB. BA. AAB.\n", lang("up"))),
            (lang("lo"), ingest_text(b"xy. yx. xxy.\n", lang("lo"))),
        ]
        .into_iter()
        .collect();
        let c = LanguageClassifier::fit(&c).unwrap();
        assert_eq!(c.classify(b". . .").language, None);
        let r = c.classify(b"AB. AB. xy");
        assert_eq!(r.label(), Some(&lang("up")));
    }
}
