use crate::corpus::{Corpus, TokenId, BOS};
use crate::error::{Error, Result};
use crate::model::{InterventionPlan, Model};

/// Summed NLL (nats) and number of predicted tokens over every window of
/// `corpus`. Each window is `[BOS] + chunk` and every chunk token is
/// predicted, the first one from `BOS` alone.
pub fn corpus_nll(model: &Model, corpus: &Corpus, plan: Option<&InterventionPlan>) -> Result<(f64, usize)> {
    let chunk = model.config.max_seq_len - 1;
    if chunk == 0 {
        return Err(Error::Config("max_seq_len must be at least 2 to score text".into()));
    }
    let mut input: Vec<TokenId> = Vec::with_capacity(chunk + 1);
    let mut total = 0.0;
    let mut count = 0usize;
    for w in corpus.windows(chunk) {
        input.clear();
        input.push(BOS);
        input.extend_from_slice(w);
        let out = model.forward(&input, plan, false)?;
        for (t, &target) in w.iter().enumerate() {
            let row = out.logits.row(t);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[target as usize];
        }
        count += w.len();
    }
    Ok((total, count))
}

/// `exp(mean token NLL)` under teacher forcing.
pub fn perplexity(model: &Model, corpus: &Corpus, plan: Option<&InterventionPlan>) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Argument(format!(
            "cannot compute perplexity of empty corpus for {}",
            corpus.language()
        )));
    }
    let (nll, n) = corpus_nll(model, corpus, plan)?;
    Ok(ppl_from_nll(nll, n))
}

pub fn ppl_from_nll(total_nll: f64, count: usize) -> f64 {
    (total_nll / count as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_text, lang, VOCAB_SIZE};
    use crate::model::{FfnKind, ModelConfig};

    #[test]
    fn uniform_logits_give_vocab_size() {
        let mut m = Model::init(ModelConfig::tiny(8, 1, FfnKind::Standard), 1).unwrap();
        m.weights.lm_head.fill(0.0);
        let c = ingest_text(b"hello world\nsecond", lang("en"));
        let ppl = perplexity(&m, &c, None).unwrap();
        assert!((ppl - VOCAB_SIZE as f64).abs() < 1e-9);
    }

    #[test]
    fn single_token_quarter_probability() {
        assert!((ppl_from_nll(4f64.ln(), 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_rejected() {
        let m = Model::init(ModelConfig::tiny(8, 1, FfnKind::Standard), 1).unwrap();
        let c = Corpus::empty(lang("en"));
        assert!(matches!(perplexity(&m, &c, None), Err(Error::Argument(_))));
    }
}
