use ndarray::{s, Array1, Array2, ArrayView1};

use super::{FfnKind, InterventionPlan, Model};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// Values recorded during one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Capture {
    /// Per layer, `T × ffn_width` post-activation values `act(x W_1)` before
    /// any override was applied.
    pub activations: Vec<Array2<f64>>,
    /// Per layer, `T × d_model` residual stream at the layer output.
    pub hidden: Vec<Array2<f64>>,
}

/// Everything captured for one token position.
#[derive(Debug)]
pub struct ActivationFrame<'a> {
    pub activations: Vec<ArrayView1<'a, f64>>,
    pub hidden: Vec<ArrayView1<'a, f64>>,
}

impl Capture {
    pub fn n_positions(&self) -> usize {
        self.activations.first().map_or(0, |a| a.nrows())
    }

    pub fn frame(&self, position: usize) -> ActivationFrame<'_> {
        ActivationFrame {
            activations: self.activations.iter().map(|a| a.row(position)).collect(),
            hidden: self.hidden.iter().map(|h| h.row(position)).collect(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = ActivationFrame<'_>> {
        (0..self.n_positions()).map(|t| self.frame(t))
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `T × vocab_size`; row `t` predicts the token after position `t`.
    pub logits: Array2<f64>,
    pub capture: Option<Capture>,
}

/// Intermediate values of one layer kept for backpropagation.
#[derive(Clone, Debug, Default)]
pub(crate) struct LayerCache {
    pub x_in: Array2<f64>,
    pub attn_in: Array2<f64>,
    pub inv_rms_attn: Array1<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    pub context: Array2<f64>,
    pub x_mid: Array2<f64>,
    pub ffn_in: Array2<f64>,
    pub inv_rms_ffn: Array1<f64>,
    pub pre_act: Array2<f64>,
    pub act: Array2<f64>,
    pub up: Option<Array2<f64>>,
    pub gated: Array2<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub x_final: Array2<f64>,
    pub inv_rms_final: Array1<f64>,
    pub normed_final: Array2<f64>,
}

/// Row-wise RMS normalisation with gain; returns the output and `1/rms` per row.
pub(crate) fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let inv: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| 1.0 / (r.dot(&r) / d + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for (mut row, &r) in y.rows_mut().into_iter().zip(inv.iter()) {
        row.zip_mut_with(gain, |v, &g| *v *= r * g);
    }
    (y, inv)
}

/// Causal softmax attention for one head; returns `(probs, probs · v)`.
pub(crate) fn causal_attention(
    q: ndarray::ArrayView2<'_, f64>,
    k: ndarray::ArrayView2<'_, f64>,
    v: ndarray::ArrayView2<'_, f64>,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let t = q.nrows();
    let mut p = q.dot(&k.t());
    for i in 0..t {
        let mut row = p.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..=i {
            row[j] *= scale;
            max = max.max(row[j]);
        }
        let mut sum = 0.0;
        for j in 0..=i {
            row[j] = (row[j] - max).exp();
            sum += row[j];
        }
        for j in 0..=i {
            row[j] /= sum;
        }
        for j in i + 1..t {
            row[j] = 0.0;
        }
    }
    let out = p.dot(&v);
    (p, out)
}

impl Model {
    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Argument("forward needs at least one token".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Argument(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Config(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Run the model over one sequence.
    ///
    /// With a plan, each overridden neuron's post-activation value is replaced
    /// before it reaches `W_2` (standard) or the gate product (gated). When
    /// `capture` is set the returned activations are the values *before*
    /// overrides, while the overridden values are what propagates.
    pub fn forward(
        &self,
        tokens: &[TokenId],
        plan: Option<&InterventionPlan>,
        capture: bool,
    ) -> Result<ForwardOutput> {
        self.forward_impl(tokens, plan, capture, None)
    }

    pub(crate) fn forward_impl(
        &self,
        tokens: &[TokenId],
        plan: Option<&InterventionPlan>,
        capture: bool,
        mut cache: Option<&mut ForwardCache>,
    ) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        if let Some(p) = plan {
            p.validate(&self.config)?;
        }
        let cfg = &self.config;
        let w = &self.weights;
        let t_len = tokens.len();
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Array2::<f64>::zeros((t_len, cfg.d_model));
        for (t, &tok) in tokens.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&w.tok_emb.row(tok as usize));
            row += &w.pos_emb.row(t);
        }

        let mut captured = capture.then(|| Capture {
            activations: Vec::with_capacity(cfg.n_layers),
            hidden: Vec::with_capacity(cfg.n_layers),
        });
        if let Some(c) = cache.as_deref_mut() {
            c.layers.clear();
        }

        for (li, lw) in w.layers.iter().enumerate() {
            let layer_no = li as u32 + 1;
            let (attn_in, inv_rms_attn) = rms_norm(&x, &lw.attn_norm, cfg.norm_eps);
            let q = attn_in.dot(&lw.w_q);
            let k = attn_in.dot(&lw.w_k);
            let v = attn_in.dot(&lw.w_v);
            let mut context = Array2::<f64>::zeros((t_len, cfg.d_model));
            let mut probs = Vec::new();
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (p, out) =
                    causal_attention(q.slice(cols), k.slice(cols), v.slice(cols), scale);
                context.slice_mut(cols).assign(&out);
                if cache.is_some() {
                    probs.push(p);
                }
            }
            let x_mid = &x + &context.dot(&lw.w_o);

            let (ffn_in, inv_rms_ffn) = rms_norm(&x_mid, &lw.ffn_norm, cfg.norm_eps);
            let pre_act = ffn_in.dot(&lw.w_1);
            let act = pre_act.mapv(|z| cfg.act_kind.apply(z));
            if let Some(((pos, neuron), v)) = act.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: layer_no,
                    neuron: neuron as u32,
                    position: pos,
                    detail: format!("activation is {v}"),
                });
            }
            let overrides = plan.map(|p| p.layer_overrides(layer_no)).unwrap_or_default();
            let mut gated = act.clone();
            for &(j, val) in &overrides {
                gated.column_mut(j).fill(val);
            }
            let up = match cfg.ffn_kind {
                FfnKind::Standard => None,
                FfnKind::Gated => {
                    let w3 = lw.w_3.as_ref().expect("gated layer has w_3");
                    let up = ffn_in.dot(w3);
                    gated *= &up;
                    Some(up)
                }
            };
            let x_out = &x_mid + &gated.dot(&lw.w_2);

            if let Some(c) = captured.as_mut() {
                c.activations.push(act.clone());
                c.hidden.push(x_out.clone());
            }
            if let Some(c) = cache.as_deref_mut() {
                c.layers.push(LayerCache {
                    x_in: x,
                    attn_in,
                    inv_rms_attn,
                    q,
                    k,
                    v,
                    probs,
                    context,
                    x_mid,
                    ffn_in,
                    inv_rms_ffn,
                    pre_act,
                    act,
                    up,
                    gated,
                });
            }
            x = x_out;
        }

        let (normed, inv_rms_final) = rms_norm(&x, &w.final_norm, cfg.norm_eps);
        let logits = normed.dot(&w.lm_head);
        if let Some(c) = cache {
            c.x_final = x;
            c.inv_rms_final = inv_rms_final;
            c.normed_final = normed;
        }
        Ok(ForwardOutput {
            logits,
            capture: captured,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, NeuronId};
    use crate::corpus::BOS;

    fn model(kind: FfnKind) -> Model {
        Model::init(ModelConfig::tiny(16, 2, kind), 3).unwrap()
    }

    #[test]
    fn empty_plan_is_bitwise_identity() {
        for kind in [FfnKind::Standard, FfnKind::Gated] {
            let m = model(kind);
            let toks = [BOS, 10, 200, 33, 7];
            let a = m.forward(&toks, None, false).unwrap();
            let b = m.forward(&toks, Some(&InterventionPlan::new()), false).unwrap();
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn zeroing_whole_layer_silences_ffn() {
        for kind in [FfnKind::Standard, FfnKind::Gated] {
            let m = model(kind);
            let mut plan = InterventionPlan::new();
            for j in 0..m.config.ffn_width as u32 {
                plan.set_zero(NeuronId::new(1, j));
            }
            let toks = [BOS, 1, 2, 3];
            let mut cache = ForwardCache::default();
            m.forward_impl(&toks, Some(&plan), false, Some(&mut cache)).unwrap();
            let l = &cache.layers[0];
            let ffn_out = &cache.layers[1].x_in - &l.x_mid;
            assert!(ffn_out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn causal() {
        let m = model(FfnKind::Gated);
        let a = m.forward(&[BOS, 5, 6, 7], None, false).unwrap().logits;
        let b = m.forward(&[BOS, 5, 6, 99], None, false).unwrap().logits;
        for t in 0..3 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn capture_is_complete_and_pre_override() {
        let m = model(FfnKind::Gated);
        let toks = [BOS, 5, 6, 7];
        let mut plan = InterventionPlan::new();
        plan.set_value(NeuronId::new(2, 3), 9.0).unwrap();
        let plain = m.forward(&toks, None, true).unwrap().capture.unwrap();
        let out = m.forward(&toks, Some(&plan), true).unwrap();
        let cap = out.capture.unwrap();
        for frame in cap.frames() {
            let n: usize = frame.activations.iter().map(|a| a.len()).sum();
            assert_eq!(n, m.config.n_layers * m.config.ffn_width);
        }
        // layer 1 sees no override; layer 2 activations are still recorded pre-override
        assert_eq!(plain.activations[0], cap.activations[0]);
        assert_eq!(plain.activations[1], cap.activations[1]);
        assert_ne!(plain.hidden[1], cap.hidden[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(FfnKind::Standard);
        assert!(matches!(m.forward(&[], None, false), Err(Error::Argument(_))));
        assert!(matches!(m.forward(&[300], None, false), Err(Error::Config(_))));
        let long = vec![1u16; m.config.max_seq_len + 1];
        assert!(matches!(m.forward(&long, None, false), Err(Error::Argument(_))));
        let mut plan = InterventionPlan::new();
        plan.set_zero(NeuronId::new(9, 0));
        assert!(matches!(m.forward(&[1], Some(&plan), false), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_activation_reports_location() {
        let mut m = model(FfnKind::Standard);
        m.weights.layers[1].w_1[[0, 4]] = f64::NAN;
        match m.forward(&[BOS, 1], None, false) {
            Err(Error::Numeric { layer, neuron, .. }) => {
                assert_eq!((layer, neuron), (2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
