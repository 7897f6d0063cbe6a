use super::{InterventionPlan, Model};
use crate::corpus::{is_special, TokenId, BOS};
use crate::error::{Error, Result};

/// Sign-split repetition penalty: positive logits of `seen` tokens are
/// divided by `penalty`, negative ones multiplied by it. Each token id is
/// penalised once however often it occurs.
pub fn apply_repetition_penalty(logits: &mut [f64], seen: &[TokenId], penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    let mut done = vec![false; logits.len()];
    for &t in seen {
        let i = t as usize;
        if i >= logits.len() || done[i] {
            continue;
        }
        done[i] = true;
        let l = &mut logits[i];
        if *l > 0.0 {
            *l /= penalty;
        } else {
            *l *= penalty;
        }
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn greedy_pick(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Greedy decoding of `max_new` byte tokens after `prompt` (which must
    /// not contain special tokens; a [`BOS`] is prepended). The penalty
    /// applies to every token already in the context, prompt included, and
    /// special tokens are never emitted. When the context outgrows
    /// `max_seq_len` the oldest tokens after `BOS` are dropped.
    pub fn generate(
        &self,
        prompt: &[TokenId],
        plan: Option<&InterventionPlan>,
        max_new: usize,
        repetition_penalty: f64,
    ) -> Result<Vec<TokenId>> {
        if max_new == 0 {
            return Err(Error::Argument("max_new must be positive".into()));
        }
        if !(repetition_penalty >= 1.0 && repetition_penalty.is_finite()) {
            return Err(Error::Argument(format!(
                "repetition penalty must be >= 1, got {repetition_penalty}"
            )));
        }
        if prompt.len() + 1 > self.config.max_seq_len {
            return Err(Error::Argument(format!(
                "prompt of {} tokens does not fit max_seq_len {} (one slot is BOS)",
                prompt.len(),
                self.config.max_seq_len
            )));
        }
        if prompt.iter().any(|&t| is_special(t)) {
            return Err(Error::Argument("prompt contains special tokens".into()));
        }
        let mut history: Vec<TokenId> = prompt.to_vec();
        let mut out = Vec::with_capacity(max_new);
        let window = self.config.max_seq_len - 1;
        for _ in 0..max_new {
            let start = history.len().saturating_sub(window);
            let mut input = Vec::with_capacity(window + 1);
            input.push(BOS);
            input.extend_from_slice(&history[start..]);
            let fwd = self.forward(&input, plan, false)?;
            let mut logits = fwd.logits.row(input.len() - 1).to_vec();
            for (i, l) in logits.iter_mut().enumerate() {
                if is_special(i as TokenId) {
                    *l = f64::NEG_INFINITY;
                }
            }
            apply_repetition_penalty(&mut logits, &history, repetition_penalty);
            let next = greedy_pick(&logits) as TokenId;
            history.push(next);
            out.push(next);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FfnKind, ModelConfig};

    #[test]
    fn unit_penalty_is_identity() {
        let mut l = vec![0.5, -1.0, 2.0];
        apply_repetition_penalty(&mut l, &[0, 1, 2], 1.0);
        assert_eq!(l, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn positive_logit_divided_then_tie_goes_low() {
        // a = 0 (emitted, 2.2), b = 1 (2.0): 2.2 / 1.1 == 2.0 exactly
        let mut l = vec![2.2, 2.0];
        apply_repetition_penalty(&mut l, &[0], 1.1);
        assert_eq!(l[0], 2.0);
        assert_eq!(greedy_pick(&l), 0);
        // same case with ids swapped: the lower id is now the unpenalised one
        let mut l = vec![2.0, 2.2];
        apply_repetition_penalty(&mut l, &[1], 1.1);
        assert_eq!(greedy_pick(&l), 0);
    }

    #[test]
    fn negative_logit_multiplied() {
        let mut l = vec![-1.0, -1.05];
        apply_repetition_penalty(&mut l, &[0], 1.1);
        assert!((l[0] + 1.1).abs() < 1e-15);
        assert_eq!(greedy_pick(&l), 1);
    }

    #[test]
    fn repeated_ids_penalised_once() {
        let mut l = vec![4.0];
        apply_repetition_penalty(&mut l, &[0, 0, 0], 2.0);
        assert_eq!(l[0], 2.0);
    }

    #[test]
    fn unit_penalty_generation_is_plain_greedy() {
        let m = Model::init(ModelConfig::tiny(16, 1, FfnKind::Gated), 5).unwrap();
        let prompt = [65u16, 66, 67];
        let out = m.generate(&prompt, None, 4, 1.0).unwrap();
        let mut ctx = vec![BOS, 65, 66, 67];
        for &tok in &out {
            let logits = m.forward(&ctx, None, false).unwrap().logits;
            let mut row = logits.row(ctx.len() - 1).to_vec();
            row[BOS as usize] = f64::NEG_INFINITY;
            assert_eq!(greedy_pick(&row) as TokenId, tok);
            ctx.push(tok);
        }
        assert_eq!(out, m.generate(&prompt, None, 4, 1.0).unwrap());
    }

    #[test]
    fn generation_slides_past_context_window() {
        let m = Model::init(ModelConfig::tiny(16, 1, FfnKind::Standard), 5).unwrap();
        let out = m.generate(&[65], None, 40, 1.1).unwrap();
        assert_eq!(out.len(), 40);
        assert!(out.iter().all(|&t| !is_special(t)));
    }

    #[test]
    fn argument_errors() {
        let m = Model::init(ModelConfig::tiny(16, 1, FfnKind::Standard), 5).unwrap();
        let long = vec![65u16; m.config.max_seq_len];
        assert!(m.generate(&long, None, 1, 1.1).is_err());
        assert!(m.generate(&[65], None, 0, 1.1).is_err());
        assert!(m.generate(&[65], None, 1, 0.9).is_err());
    }
}
