//! Minimal pre-norm decoder-only transformer with per-neuron capture and
//! per-neuron overrides in the feed-forward block.
//!
//! A *neuron* is one column of the FFN up-projection `W_1` followed by the
//! activation function. It counts as activated when that post-activation
//! value is strictly positive; for gated FFNs the gate product is never
//! consulted for this.

mod checkpoint;
mod forward;
mod generate;
mod weights;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::VOCAB_SIZE;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{ActivationFrame, Capture, ForwardOutput};
pub(crate) use forward::ForwardCache;
pub use generate::{apply_repetition_penalty, greedy_pick};
pub use weights::{LayerWeights, ParamKey, ParamKind, Weights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    /// `act(x W_1) W_2`
    Standard,
    /// `(act(x W_1) ⊙ x W_3) W_2`
    Gated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    /// tanh approximation of GELU
    Gelu,
    /// x · sigmoid(x)
    Silu,
}

impl ActKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActKind::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            ActKind::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActKind::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let t = (c * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            ActKind::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub vocab_size: usize,
    pub ffn_kind: FfnKind,
    pub act_kind: ActKind,
    pub max_seq_len: usize,
    pub norm_eps: f64,
}

impl ModelConfig {
    /// `d_model = 128`, 4 layers, 4 heads, gated SiLU FFN of width `4·d`.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            ffn_width: 512,
            vocab_size: VOCAB_SIZE,
            ffn_kind: FfnKind::Gated,
            act_kind: ActKind::Silu,
            max_seq_len: 64,
            norm_eps: 1e-5,
        }
    }

    /// Small geometry for unit tests and gradient checks.
    pub fn tiny(d_model: usize, n_layers: usize, ffn_kind: FfnKind) -> Self {
        ModelConfig {
            d_model,
            n_layers,
            n_heads: 2,
            ffn_width: 4 * d_model,
            vocab_size: VOCAB_SIZE,
            ffn_kind,
            act_kind: match ffn_kind {
                FfnKind::Standard => ActKind::Gelu,
                FfnKind::Gated => ActKind::Silu,
            },
            max_seq_len: 32,
            norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_width", self.ffn_width),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            if v > u32::MAX as usize {
                return Err(Error::Config(format!("{name} = {v} is too large")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_neurons(&self) -> usize {
        count_neurons(self)
    }
}

/// Number of FFN neurons in the whole model: `n_layers · ffn_width`.
pub fn count_neurons(config: &ModelConfig) -> usize {
    config.n_layers * config.ffn_width
}

/// Address of one FFN neuron. Layers are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: u32,
    pub index: u32,
}

impl NeuronId {
    pub fn new(layer: u32, index: u32) -> Self {
        NeuronId { layer, index }
    }

    /// Position in layer-major flattening (`(layer-1)·ffn_width + index`).
    pub fn flat(&self, ffn_width: usize) -> usize {
        (self.layer as usize - 1) * ffn_width + self.index as usize
    }

    pub fn from_flat(flat: usize, ffn_width: usize) -> Self {
        NeuronId {
            layer: (flat / ffn_width + 1) as u32,
            index: (flat % ffn_width) as u32,
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.layer == 0 || self.layer as usize > config.n_layers {
            return Err(Error::Config(format!(
                "neuron {self}: layer outside 1..={}",
                config.n_layers
            )));
        }
        if self.index as usize >= config.ffn_width {
            return Err(Error::Config(format!(
                "neuron {self}: index outside 0..{}",
                config.ffn_width
            )));
        }
        Ok(())
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

/// Replacement for one neuron's post-activation value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Override {
    Zero,
    Value(f64),
}

impl Override {
    pub fn value(self) -> f64 {
        match self {
            Override::Zero => 0.0,
            Override::Value(v) => v,
        }
    }
}

/// Per-neuron overrides applied inside the FFN, before `W_2` (or before the
/// gate product for gated FFNs).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterventionPlan {
    overrides: BTreeMap<NeuronId, Override>,
}

impl InterventionPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_zero(&mut self, neuron: NeuronId) {
        self.overrides.insert(neuron, Override::Zero);
    }

    pub fn set_value(&mut self, neuron: NeuronId, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Argument(format!(
                "override for {neuron} must be finite, got {value}"
            )));
        }
        self.overrides.insert(neuron, Override::Value(value));
        Ok(())
    }

    pub fn get(&self, neuron: &NeuronId) -> Option<Override> {
        self.overrides.get(neuron).copied()
    }

    pub fn len(&self) -> usize {
        self.overrides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.overrides.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NeuronId, &Override)> {
        self.overrides.iter()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.overrides.keys().try_for_each(|n| n.check(config))
    }

    /// `(index, value)` pairs for one 1-based layer.
    pub(crate) fn layer_overrides(&self, layer: u32) -> Vec<(usize, f64)> {
        self.overrides
            .range(NeuronId::new(layer, 0)..=NeuronId::new(layer, u32::MAX))
            .map(|(n, o)| (n.index as usize, o.value()))
            .collect()
    }
}

impl FromIterator<(NeuronId, Override)> for InterventionPlan {
    fn from_iter<I: IntoIterator<Item = (NeuronId, Override)>>(iter: I) -> Self {
        InterventionPlan {
            overrides: iter.into_iter().collect(),
        }
    }
}

/// A configuration together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Model { config, weights })
    }

    /// Freshly initialised model.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, seed);
        Ok(Model { config, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neuron_counts() {
        let mut c = ModelConfig::toy();
        c.ffn_width = 512;
        c.n_layers = 4;
        assert_eq!(count_neurons(&c), 2048);
        // LLaMA-2 7B geometry: 32 layers of 11008 neurons.
        c.n_layers = 32;
        c.ffn_width = 11008;
        assert_eq!(count_neurons(&c), 352_256);
        c.n_layers = 1;
        c.ffn_width = 1;
        assert_eq!(count_neurons(&c), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::toy();
        c.validate().unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.ffn_width = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn plan_keeps_one_override_per_neuron() {
        let mut p = InterventionPlan::new();
        let n = NeuronId::new(2, 5);
        p.set_zero(n);
        p.set_value(n, 0.7).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.get(&n), Some(Override::Value(0.7)));
        assert!(p.set_value(n, f64::NAN).is_err());
        p.set_zero(NeuronId::new(3, 0));
        assert_eq!(p.layer_overrides(2), vec![(5, 0.7)]);
        assert_eq!(p.layer_overrides(3), vec![(0, 0.0)]);
        assert!(p.layer_overrides(1).is_empty());
    }

    #[test]
    fn flat_index_round_trip() {
        for flat in [0usize, 7, 511, 512, 2047] {
            assert_eq!(NeuronId::from_flat(flat, 512).flat(512), flat);
        }
        assert_eq!(NeuronId::from_flat(512, 512), NeuronId::new(2, 0));
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [ActKind::Gelu, ActKind::Silu] {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
            assert!(act.apply(1e-3) > 0.0);
            assert!(act.apply(-1e-3) < 0.0);
            assert_eq!(act.apply(0.0), 0.0);
        }
    }
}
