use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{steering_plan, LanguageClassifier};
use crate::corpus::{detokenize, Corpus, LanguageId, TokenId};
use crate::error::{Error, Result};
use crate::identify::NeuronSelection;
use crate::model::{InterventionPlan, Model};
use crate::probe::{ActivationStats, MeanMode};
use crate::report::Table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub max_new_tokens: usize,
    pub repetition_penalty: f64,
    pub mean_mode: MeanMode,
    /// Transcripts kept per language.
    pub transcripts: usize,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            max_new_tokens: 32,
            repetition_penalty: 1.1,
            mean_mode: MeanMode::Unconditional,
            transcripts: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub normal: String,
    pub steered: String,
    pub normal_label: Option<LanguageId>,
    pub steered_label: Option<LanguageId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSteering {
    pub language: LanguageId,
    pub prompts: usize,
    pub normal_accuracy: f64,
    pub steered_accuracy: f64,
    pub transcripts: Vec<Transcript>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub languages: Vec<LanguageSteering>,
}

impl SteeringReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["language", "prompts", "normal_accuracy", "steered_accuracy"]);
        for l in &self.languages {
            t.push([
                l.language.to_string(),
                l.prompts.to_string(),
                l.normal_accuracy.to_string(),
                l.steered_accuracy.to_string(),
            ]);
        }
        t
    }
}

/// The first `len` tokens of each of the first `n` documents at least that
/// long.
pub fn prompts_from_corpus(corpus: &Corpus, n: usize, len: usize) -> Vec<Vec<TokenId>> {
    corpus
        .documents()
        .filter(|d| d.len() >= len)
        .take(n)
        .map(|d| d[..len].to_vec())
        .collect()
}

fn text(tokens: &[TokenId]) -> String {
    String::from_utf8_lossy(&detokenize(tokens)).into_owned()
}

struct Outcome {
    tokens: Vec<TokenId>,
    label: Option<LanguageId>,
}

fn run(
    model: &Model,
    prompt: &[TokenId],
    plan: Option<&InterventionPlan>,
    classifier: &LanguageClassifier,
    cfg: &SteeringConfig,
) -> Result<Outcome> {
    let tokens = model.generate(prompt, plan, cfg.max_new_tokens, cfg.repetition_penalty)?;
    let label = classifier.classify_tokens(&tokens).label().cloned();
    Ok(Outcome { tokens, label })
}

/// For each language, generate from its prompts with and without its
/// neurons raised to their mean activation, and score how often the
/// continuation is classified as that language.
pub fn steering_eval(
    model: &Model,
    prompts: &BTreeMap<LanguageId, Vec<Vec<TokenId>>>,
    selection: &NeuronSelection,
    stats: &ActivationStats,
    classifier: &LanguageClassifier,
    cfg: &SteeringConfig,
) -> Result<SteeringReport> {
    let mut languages = Vec::new();
    for (l, ps) in prompts {
        if ps.is_empty() {
            return Err(Error::Argument(format!("no prompts for {l}")));
        }
        let plan = steering_plan(selection, l, stats, None, cfg.mean_mode)?;
        let (mut normal_hits, mut steered_hits) = (0usize, 0usize);
        let mut transcripts = Vec::new();
        for p in ps {
            let a = run(model, p, None, classifier, cfg)?;
            let b = run(model, p, Some(&plan), classifier, cfg)?;
            normal_hits += usize::from(a.label.as_ref() == Some(l));
            steered_hits += usize::from(b.label.as_ref() == Some(l));
            if transcripts.len() < cfg.transcripts {
                transcripts.push(Transcript {
                    prompt: text(p),
                    normal: text(&a.tokens),
                    steered: text(&b.tokens),
                    normal_label: a.label,
                    steered_label: b.label,
                });
            }
        }
        let n = ps.len() as f64;
        log::info!("steering {l}: normal {normal_hits}/{} steered {steered_hits}/{}", ps.len(), ps.len());
        languages.push(LanguageSteering {
            language: l.clone(),
            prompts: ps.len(),
            normal_accuracy: normal_hits as f64 / n,
            steered_accuracy: steered_hits as f64 / n,
            transcripts,
        });
    }
    Ok(SteeringReport { languages })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSteering {
    pub source: LanguageId,
    pub target: LanguageId,
    pub prompts: usize,
    /// Unsteered continuations labelled `target`.
    pub normal_target: usize,
    /// Steered continuations labelled `target`.
    pub flipped: usize,
    pub transcripts: Vec<Transcript>,
}

impl CrossSteering {
    pub fn flip_rate(&self) -> f64 {
        self.flipped as f64 / self.prompts as f64
    }
}

/// Prompts in `source`; deactivate `source`'s neurons and activate
/// `target`'s.
#[allow(clippy::too_many_arguments)]
pub fn cross_steering_eval(
    model: &Model,
    prompts: &[Vec<TokenId>],
    source: &LanguageId,
    target: &LanguageId,
    selection: &NeuronSelection,
    stats: &ActivationStats,
    classifier: &LanguageClassifier,
    cfg: &SteeringConfig,
) -> Result<CrossSteering> {
    if prompts.is_empty() {
        return Err(Error::Argument(format!("no prompts for {source}")));
    }
    let plan = steering_plan(selection, target, stats, Some(source), cfg.mean_mode)?;
    let (mut normal_target, mut flipped) = (0usize, 0usize);
    let mut transcripts = Vec::new();
    for p in prompts {
        let a = run(model, p, None, classifier, cfg)?;
        let b = run(model, p, Some(&plan), classifier, cfg)?;
        normal_target += usize::from(a.label.as_ref() == Some(target));
        flipped += usize::from(b.label.as_ref() == Some(target));
        if transcripts.len() < cfg.transcripts {
            transcripts.push(Transcript {
                prompt: text(p),
                normal: text(&a.tokens),
                steered: text(&b.tokens),
                normal_label: a.label,
                steered_label: b.label,
            });
        }
    }
    Ok(CrossSteering {
        source: source.clone(),
        target: target.clone(),
        prompts: prompts.len(),
        normal_target,
        flipped,
        transcripts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang};
    use crate::identify::select_random;
    use crate::model::{FfnKind, ModelConfig};

    #[test]
    fn empty_selection_changes_nothing() {
        let m = Model::init(ModelConfig::tiny(8, 1, FfnKind::Gated), 3).unwrap();
        let corpora: BTreeMap<_, _> = [
            (lang("a"), ingest_text(b"abab abba\nbaba abab\n", lang("a"))),
            (lang("b"), ingest_text(b"xyxy yxxy\nxxyy yyxx\n", lang("b"))),
        ]
        .into_iter()
        .collect();
        let classifier = LanguageClassifier::fit(&corpora).unwrap();
        let mut stats = ActivationStats::for_model(&m.config, vec![lang("a"), lang("b")]).unwrap();
        crate::probe::accumulate(&m, &corpora[&lang("a")], &mut stats).unwrap();
        crate::probe::accumulate(&m, &corpora[&lang("b")], &mut stats).unwrap();
        let sizes = [(lang("a"), 0), (lang("b"), 0)].into_iter().collect();
        let sel = select_random(&sizes, 1, m.config.ffn_width, 0).unwrap();
        let prompts: BTreeMap<_, _> = corpora
            .iter()
            .map(|(l, c)| (l.clone(), prompts_from_corpus(c, 2, 3)))
            .collect();
        let cfg = SteeringConfig {
            max_new_tokens: 4,
            ..Default::default()
        };
        let r = steering_eval(&m, &prompts, &sel, &stats, &classifier, &cfg).unwrap();
        for l in &r.languages {
            assert_eq!(l.normal_accuracy, l.steered_accuracy);
            assert!((0.0..=1.0).contains(&l.normal_accuracy));
            assert_eq!(l.transcripts.len(), 2);
            for t in &l.transcripts {
                assert_eq!(t.normal, t.steered);
            }
        }
        let x = cross_steering_eval(&m, &prompts[&lang("a")], &lang("a"), &lang("b"), &sel, &stats, &classifier, &cfg)
            .unwrap();
        assert_eq!(x.flipped, x.normal_target);
    }

    #[test]
    fn prompt_extraction() {
        let c = ingest_text(b"ab\nabcdef\nxyzw\n", lang("a"));
        let p = prompts_from_corpus(&c, 5, 4);
        assert_eq!(p, vec![b"abcd".iter().map(|&b| b as TokenId).collect::<Vec<_>>(), vec![120, 121, 122, 119]]);
    }
}
