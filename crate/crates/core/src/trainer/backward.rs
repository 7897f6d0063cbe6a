use ndarray::{s, Array1, Array2};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::model::{FfnKind, ForwardCache, Model, Weights};

/// Backward through `y = x · r · g` with `r = 1/sqrt(mean(x²) + eps)`.
/// Accumulates the gain gradient and returns `dL/dx`.
fn rms_norm_backward(
    x: &Array2<f64>,
    inv_rms: &Array1<f64>,
    gain: &Array1<f64>,
    dy: &Array2<f64>,
    dgain: &mut Array1<f64>,
) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    for t in 0..x.nrows() {
        let r = inv_rms[t];
        let xr = x.row(t);
        let dyr = dy.row(t);
        let mut dot = 0.0;
        for j in 0..x.ncols() {
            dgain[j] += xr[j] * r * dyr[j];
            dot += xr[j] * gain[j] * dyr[j];
        }
        let c = r * r * r * dot / d;
        let mut out = dx.row_mut(t);
        for j in 0..x.ncols() {
            out[j] = r * gain[j] * dyr[j] - c * xr[j];
        }
    }
    dx
}

fn add_at_b(acc: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &a.t(), b, 1.0, acc);
}

/// Forward and backward over one window (starting with BOS). Adds
/// `weight · ∂(Σ NLL)/∂θ` into `grad` and returns the summed NLL over the
/// `len − 1` predicted positions.
pub(crate) fn accumulate_window(
    model: &Model,
    window: &[TokenId],
    weight: f64,
    grad: &mut Weights,
) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::Argument("a training window needs at least 2 tokens".into()));
    }
    let cfg = &model.config;
    let w = &model.weights;
    let mut cache = ForwardCache::default();
    let out = model.forward_impl(window, None, false, Some(&mut cache))?;
    let t_len = window.len();
    let n_pred = t_len - 1;

    // dlogits = softmax − onehot on predicting rows; the last row predicts nothing
    let mut dlogits = Array2::<f64>::zeros(out.logits.raw_dim());
    let mut nll = 0.0;
    for t in 0..n_pred {
        let row = out.logits.row(t);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let target = window[t + 1] as usize;
        nll += lse - row[target];
        let mut d = dlogits.row_mut(t);
        for (dv, &v) in d.iter_mut().zip(row.iter()) {
            *dv = weight * (v - lse).exp();
        }
        d[target] -= weight;
    }
    if !nll.is_finite() {
        return Err(Error::Numeric {
            layer: 0,
            neuron: 0,
            position: 0,
            detail: format!("non-finite loss {nll}"),
        });
    }

    add_at_b(&mut grad.lm_head, &cache.normed_final, &dlogits);
    let d_normed = dlogits.dot(&w.lm_head.t());
    let mut dx = rms_norm_backward(
        &cache.x_final,
        &cache.inv_rms_final,
        &w.final_norm,
        &d_normed,
        &mut grad.final_norm,
    );

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let lw = &w.layers[li];
        let lg = &mut grad.layers[li];

        // FFN: x_out = x_mid + gated · W2
        add_at_b(&mut lg.w_2, &lc.gated, &dx);
        let d_gated = dx.dot(&lw.w_2.t());
        let (mut d_pre, d_in_up) = match cfg.ffn_kind {
            FfnKind::Standard => (d_gated, None),
            FfnKind::Gated => {
                let up = lc.up.as_ref().expect("gated cache has up");
                let d_up = &d_gated * &lc.act;
                add_at_b(lg.w_3.as_mut().expect("gated grad has w_3"), &lc.ffn_in, &d_up);
                let w3 = lw.w_3.as_ref().expect("gated layer has w_3");
                (&d_gated * up, Some(d_up.dot(&w3.t())))
            }
        };
        d_pre.zip_mut_with(&lc.pre_act, |g, &z| *g *= cfg.act_kind.derivative(z));
        add_at_b(&mut lg.w_1, &lc.ffn_in, &d_pre);
        let mut d_ffn_in = d_pre.dot(&lw.w_1.t());
        if let Some(extra) = d_in_up {
            d_ffn_in += &extra;
        }
        let mut d_mid = rms_norm_backward(&lc.x_mid, &lc.inv_rms_ffn, &lw.ffn_norm, &d_ffn_in, &mut lg.ffn_norm);
        d_mid += &dx;

        // attention: x_mid = x_in + context · Wo
        add_at_b(&mut lg.w_o, &lc.context, &d_mid);
        let d_context = d_mid.dot(&lw.w_o.t());
        let mut dq = Array2::<f64>::zeros((t_len, cfg.d_model));
        let mut dk = Array2::<f64>::zeros((t_len, cfg.d_model));
        let mut dv = Array2::<f64>::zeros((t_len, cfg.d_model));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &lc.probs[h];
            let d_out = d_context.slice(cols);
            let d_p = d_out.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            let mut d_s = Array2::<f64>::zeros((t_len, t_len));
            for i in 0..t_len {
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += d_p[[i, j]] * p[[i, j]];
                }
                for j in 0..=i {
                    d_s[[i, j]] = p[[i, j]] * (d_p[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&d_s.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&d_s.t().dot(&lc.q.slice(cols)));
        }
        add_at_b(&mut lg.w_q, &lc.attn_in, &dq);
        add_at_b(&mut lg.w_k, &lc.attn_in, &dk);
        add_at_b(&mut lg.w_v, &lc.attn_in, &dv);
        let mut d_attn_in = dq.dot(&lw.w_q.t());
        d_attn_in += &dk.dot(&lw.w_k.t());
        d_attn_in += &dv.dot(&lw.w_v.t());
        let mut d_in = rms_norm_backward(&lc.x_in, &lc.inv_rms_attn, &lw.attn_norm, &d_attn_in, &mut lg.attn_norm);
        d_in += &d_mid;
        dx = d_in;
    }

    for (t, &tok) in window.iter().enumerate() {
        let row = dx.row(t);
        grad.tok_emb.row_mut(tok as usize).scaled_add(1.0, &row);
        grad.pos_emb.row_mut(t).scaled_add(1.0, &row);
    }
    Ok(nll)
}
