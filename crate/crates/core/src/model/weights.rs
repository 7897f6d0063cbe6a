use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FfnKind, ModelConfig};
use crate::error::{Error, Result};

/// Which parameter tensor a slice belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    TokEmb,
    PosEmb,
    AttnNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    FfnNorm,
    W1,
    W3,
    W2,
    FinalNorm,
    LmHead,
}

impl ParamKind {
    /// Attention and feed-forward projection matrices.
    pub fn is_block_matrix(self) -> bool {
        matches!(
            self,
            ParamKind::Wq
                | ParamKind::Wk
                | ParamKind::Wv
                | ParamKind::Wo
                | ParamKind::W1
                | ParamKind::W3
                | ParamKind::W2
        )
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, ParamKind::TokEmb | ParamKind::PosEmb | ParamKind::LmHead)
    }

    pub fn is_norm(self) -> bool {
        matches!(self, ParamKind::AttnNorm | ParamKind::FfnNorm | ParamKind::FinalNorm)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::TokEmb => "tok_emb",
            ParamKind::PosEmb => "pos_emb",
            ParamKind::AttnNorm => "attn_norm",
            ParamKind::Wq => "w_q",
            ParamKind::Wk => "w_k",
            ParamKind::Wv => "w_v",
            ParamKind::Wo => "w_o",
            ParamKind::FfnNorm => "ffn_norm",
            ParamKind::W1 => "w_1",
            ParamKind::W3 => "w_3",
            ParamKind::W2 => "w_2",
            ParamKind::FinalNorm => "final_norm",
            ParamKind::LmHead => "lm_head",
        }
    }
}

/// Parameter tensor address; `layer` is 1-based and absent for global tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamKey {
    pub kind: ParamKind,
    pub layer: Option<u32>,
}

impl std::fmt::Display for ParamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layers.{l}.{}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ffn_norm: Array1<f64>,
    /// `d × ffn_width`
    pub w_1: Array2<f64>,
    /// `d × ffn_width`, gated FFN only
    pub w_3: Option<Array2<f64>>,
    /// `ffn_width × d`
    pub w_2: Array2<f64>,
}

/// All model parameters. Matrices multiply row vectors from the right
/// (`x · W`), so `W_1` is `d × ffn_width` and neuron `j` is its column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Array1<f64>,
    pub lm_head: Array2<f64>,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.ffn_width;
        let layer = || LayerWeights {
            attn_norm: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
            ffn_norm: Array1::zeros(d),
            w_1: Array2::zeros((d, f)),
            w_3: (config.ffn_kind == FfnKind::Gated).then(|| Array2::zeros((d, f))),
            w_2: Array2::zeros((f, d)),
        };
        Weights {
            tok_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            final_norm: Array1::zeros(d),
            lm_head: Array2::zeros((d, config.vocab_size)),
        }
    }

    /// Gaussian initialisation (std 0.02, residual output projections scaled
    /// by `1/sqrt(2·n_layers)`), unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut w = Weights::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Normal::new(0.0, 0.02).expect("valid std");
        let resid = Normal::new(0.0, 0.02 / (2.0 * config.n_layers as f64).sqrt())
            .expect("valid std");
        for (key, slice) in w.tensors_mut() {
            match key.kind {
                ParamKind::AttnNorm | ParamKind::FfnNorm | ParamKind::FinalNorm => {
                    slice.fill(1.0)
                }
                ParamKind::Wo | ParamKind::W2 => {
                    slice.iter_mut().for_each(|x| *x = resid.sample(&mut rng))
                }
                _ => slice.iter_mut().for_each(|x| *x = base.sample(&mut rng)),
            }
        }
        w
    }

    /// Every tensor in checkpoint order, flattened row-major.
    pub fn tensors(&self) -> Vec<(ParamKey, &[f64])> {
        fn s<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let g = |kind| ParamKey { kind, layer: None };
        let mut out = vec![(g(ParamKind::TokEmb), s(&self.tok_emb)), (g(ParamKind::PosEmb), s(&self.pos_emb))];
        for (i, l) in self.layers.iter().enumerate() {
            let k = |kind| ParamKey {
                kind,
                layer: Some(i as u32 + 1),
            };
            out.push((k(ParamKind::AttnNorm), s(&l.attn_norm)));
            out.push((k(ParamKind::Wq), s(&l.w_q)));
            out.push((k(ParamKind::Wk), s(&l.w_k)));
            out.push((k(ParamKind::Wv), s(&l.w_v)));
            out.push((k(ParamKind::Wo), s(&l.w_o)));
            out.push((k(ParamKind::FfnNorm), s(&l.ffn_norm)));
            out.push((k(ParamKind::W1), s(&l.w_1)));
            if let Some(w3) = &l.w_3 {
                out.push((k(ParamKind::W3), s(w3)));
            }
            out.push((k(ParamKind::W2), s(&l.w_2)));
        }
        out.push((g(ParamKind::FinalNorm), s(&self.final_norm)));
        out.push((g(ParamKind::LmHead), s(&self.lm_head)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKey, &mut [f64])> {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let g = |kind| ParamKey { kind, layer: None };
        let mut out = vec![
            (g(ParamKind::TokEmb), s(&mut self.tok_emb)),
            (g(ParamKind::PosEmb), s(&mut self.pos_emb)),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let k = |kind| ParamKey {
                kind,
                layer: Some(i as u32 + 1),
            };
            out.push((k(ParamKind::AttnNorm), s(&mut l.attn_norm)));
            out.push((k(ParamKind::Wq), s(&mut l.w_q)));
            out.push((k(ParamKind::Wk), s(&mut l.w_k)));
            out.push((k(ParamKind::Wv), s(&mut l.w_v)));
            out.push((k(ParamKind::Wo), s(&mut l.w_o)));
            out.push((k(ParamKind::FfnNorm), s(&mut l.ffn_norm)));
            out.push((k(ParamKind::W1), s(&mut l.w_1)));
            if let Some(w3) = &mut l.w_3 {
                out.push((k(ParamKind::W3), s(w3)));
            }
            out.push((k(ParamKind::W2), s(&mut l.w_2)));
        }
        out.push((g(ParamKind::FinalNorm), s(&mut self.final_norm)));
        out.push((g(ParamKind::LmHead), s(&mut self.lm_head)));
        out
    }

    /// Row-major shape of every tensor, in [`Weights::tensors`] order.
    pub fn shapes(&self) -> Vec<(ParamKey, Vec<usize>)> {
        let mut shapes = vec![self.tok_emb.shape().to_vec(), self.pos_emb.shape().to_vec()];
        for l in &self.layers {
            shapes.push(l.attn_norm.shape().to_vec());
            for m in [&l.w_q, &l.w_k, &l.w_v, &l.w_o] {
                shapes.push(m.shape().to_vec());
            }
            shapes.push(l.ffn_norm.shape().to_vec());
            shapes.push(l.w_1.shape().to_vec());
            if let Some(w3) = &l.w_3 {
                shapes.push(w3.shape().to_vec());
            }
            shapes.push(l.w_2.shape().to_vec());
        }
        shapes.push(self.final_norm.shape().to_vec());
        shapes.push(self.lm_head.shape().to_vec());
        self.tensors()
            .into_iter()
            .map(|(k, _)| k)
            .zip(shapes)
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    /// Shapes must match `config` and every entry must be finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = Weights::zeros(config);
        if self.layers.len() != config.n_layers {
            return Err(Error::Config(format!(
                "weights have {} layers, config says {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        let want = expected.shapes();
        let have = self.shapes();
        if want.len() != have.len() {
            return Err(Error::Config(
                "weights and config disagree on FFN kind".into(),
            ));
        }
        for ((wk, ws), (hk, hs)) in want.iter().zip(&have) {
            if wk != hk || ws != hs {
                return Err(Error::Config(format!(
                    "tensor {hk} has shape {hs:?}, config expects {wk} {ws:?}"
                )));
            }
        }
        for (key, slice) in self.tensors() {
            if let Some(i) = slice.iter().position(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "tensor {key} has non-finite entry at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn init_is_seeded_and_valid() {
        let c = ModelConfig::tiny(16, 2, FfnKind::Gated);
        let a = Weights::init(&c, 1);
        assert_eq!(a, Weights::init(&c, 1));
        assert_ne!(a, Weights::init(&c, 2));
        a.validate(&c).unwrap();
        assert!(a.layers.iter().all(|l| l.w_3.is_some()));
    }

    #[test]
    fn validate_catches_shape_and_kind_mismatch() {
        let gated = ModelConfig::tiny(16, 2, FfnKind::Gated);
        let std = ModelConfig::tiny(16, 2, FfnKind::Standard);
        let w = Weights::init(&gated, 0);
        assert!(w.validate(&std).is_err());
        let mut bad = w.clone();
        bad.layers[0].w_q[[0, 0]] = f64::INFINITY;
        assert!(bad.validate(&gated).is_err());
    }

    #[test]
    fn tensor_lists_align() {
        let c = ModelConfig::tiny(16, 2, FfnKind::Gated);
        let mut w = Weights::init(&c, 0);
        let keys: Vec<_> = w.tensors().iter().map(|(k, _)| *k).collect();
        let keys_mut: Vec<_> = w.tensors_mut().iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, keys_mut);
        let shapes = w.shapes();
        for ((k, s), (k2, shape)) in w.tensors().iter().zip(&shapes) {
            assert_eq!(k, k2);
            assert_eq!(s.len(), shape.iter().product::<usize>());
        }
    }
}
