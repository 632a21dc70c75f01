//! The survival network: a shared-weight per-patch encoder applied to each
//! phenotype cluster, attention pooling over the resulting representations,
//! and a small fully connected risk head producing one hazard score per
//! patient. Gradients are hand-derived reverse-mode and checked against
//! finite differences.

mod backward;
mod checkpoint;
mod forward;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::model_gradient;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_MAGIC,
};
pub use forward::{attention_pool, mi_fcn_forward, risk_forward, RiskOutput};
pub(crate) use backward::backward_pass;
pub(crate) use forward::forward_pass;

/// Width of every instance representation and of the pooled patient
/// representation.
pub const REP_WIDTH: usize = 64;
/// Hidden width of the risk head.
pub const HEAD_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstancePool {
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Plain,
    Gated,
    /// Fixed equal weights over non-empty instances; the mean-pooling
    /// aggregation baseline.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input patch feature dimension.
    pub feature_dim: usize,
    /// Number of conv-ReLU layer pairs in the per-patch encoder (1 to 3).
    pub layer_pairs: usize,
    /// Pooling over the patches of one phenotype.
    pub instance_pool: InstancePool,
    /// Attention hidden width L.
    pub attention_hidden: usize,
    pub attention_kind: AttentionKind,
    /// When false, clusters are ignored: each patch is embedded by a single
    /// shared affine+ReLU map and attention pools directly over patches.
    pub siamese: bool,
    /// Apply ReLU between the two head layers.
    pub head_relu: bool,
}

impl ModelConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            layer_pairs: 1,
            instance_pool: InstancePool::Average,
            attention_hidden: REP_WIDTH,
            attention_kind: AttentionKind::Plain,
            siamese: true,
            head_relu: true,
        }
    }

    /// Encoder widths. A 1x1 convolution over a `1 x m x d` tensor is a
    /// per-patch affine map, so each layer pair is one weight matrix.
    pub fn mi_fcn_widths(&self) -> Vec<usize> {
        if !self.siamese {
            return vec![REP_WIDTH];
        }
        match self.layer_pairs {
            1 => vec![64],
            2 => vec![2048, 64],
            _ => vec![2048, 1024, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        if !(1..=3).contains(&self.layer_pairs) {
            return Err(Error::InvalidArgument(format!(
                "layer_pairs must be 1, 2 or 3, got {}",
                self.layer_pairs
            )));
        }
        if self.attention_hidden == 0 {
            return Err(Error::InvalidArgument(
                "attention_hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One affine layer: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(out_width: usize, in_width: usize) -> Self {
        Self {
            weight: Array2::zeros((out_width, in_width)),
            bias: Array1::zeros(out_width),
        }
    }
}

/// All trainable weights. The encoder layers are shared across every
/// phenotype of every patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mi_fcn: Vec<LayerParams>,
    /// L x 64.
    pub attention_v: Array2<f64>,
    /// Length L.
    pub attention_w: Array1<f64>,
    /// L x 64, gated attention only.
    pub attention_u: Option<Array2<f64>>,
    /// 32 x 64 plus bias.
    pub head1: LayerParams,
    /// 1 x 32 plus bias.
    pub head2: LayerParams,
}

/// Gradients share the exact shape of the parameters.
pub type ParamGrads = ModelParams;

impl ModelParams {
    /// All-zero parameters with the shapes the config demands.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.mi_fcn_widths();
        let mut mi_fcn = Vec::with_capacity(widths.len());
        let mut in_width = config.feature_dim;
        for &out_width in &widths {
            mi_fcn.push(LayerParams::zeros(out_width, in_width));
            in_width = out_width;
        }
        let l = config.attention_hidden;
        Ok(Self {
            mi_fcn,
            attention_v: Array2::zeros((l, REP_WIDTH)),
            attention_w: Array1::zeros(l),
            attention_u: (config.attention_kind == AttentionKind::Gated)
                .then(|| Array2::zeros((l, REP_WIDTH))),
            head1: LayerParams::zeros(HEAD_HIDDEN, REP_WIDTH),
            head2: LayerParams::zeros(1, HEAD_HIDDEN),
        })
    }

    /// Verify the shapes match what `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let widths = config.mi_fcn_widths();
        if self.mi_fcn.len() != widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} encoder layers, config wants {}",
                self.mi_fcn.len(),
                widths.len()
            )));
        }
        let mut in_width = config.feature_dim;
        for (layer, &out_width) in self.mi_fcn.iter().zip(&widths) {
            if layer.weight.dim() != (out_width, in_width) || layer.bias.len() != out_width {
                return Err(Error::ShapeMismatch(format!(
                    "encoder layer expects {out_width}x{in_width}, got {:?}",
                    layer.weight.dim()
                )));
            }
            in_width = out_width;
        }
        let l = config.attention_hidden;
        if self.attention_v.dim() != (l, REP_WIDTH) || self.attention_w.len() != l {
            return Err(Error::ShapeMismatch("attention parameter shapes".into()));
        }
        match (&self.attention_u, config.attention_kind) {
            (Some(u), AttentionKind::Gated) if u.dim() == (l, REP_WIDTH) => {}
            (None, AttentionKind::Plain | AttentionKind::Uniform) => {}
            _ => return Err(Error::ShapeMismatch("gated attention parameters".into())),
        }
        if self.head1.weight.dim() != (HEAD_HIDDEN, REP_WIDTH)
            || self.head1.bias.len() != HEAD_HIDDEN
            || self.head2.weight.dim() != (1, HEAD_HIDDEN)
            || self.head2.bias.len() != 1
        {
            return Err(Error::ShapeMismatch("head parameter shapes".into()));
        }
        if self.iter_tensors().any(|t| t.1.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { what: "parameter" });
        }
        Ok(())
    }

    /// Named tensors in the documented serialization order.
    pub fn iter_tensors(&self) -> impl Iterator<Item = (String, Vec<f64>)> + '_ {
        let mut tensors: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, layer) in self.mi_fcn.iter().enumerate() {
            tensors.push((format!("mi_fcn.{i}.weight"), layer.weight.iter().copied().collect()));
            tensors.push((format!("mi_fcn.{i}.bias"), layer.bias.to_vec()));
        }
        tensors.push(("attention.v".into(), self.attention_v.iter().copied().collect()));
        tensors.push(("attention.w".into(), self.attention_w.to_vec()));
        if let Some(u) = &self.attention_u {
            tensors.push(("attention.u".into(), u.iter().copied().collect()));
        }
        tensors.push(("head1.weight".into(), self.head1.weight.iter().copied().collect()));
        tensors.push(("head1.bias".into(), self.head1.bias.to_vec()));
        tensors.push(("head2.weight".into(), self.head2.weight.iter().copied().collect()));
        tensors.push(("head2.bias".into(), self.head2.bias.to_vec()));
        tensors.into_iter()
    }

    pub fn flat_len(&self) -> usize {
        let mut len = 0;
        self.visit(|slice| len += slice.len());
        len
    }

    /// Parameters flattened in the documented fixed order: encoder layers
    /// (weight row-major, then bias) in depth order, attention V, attention
    /// w, attention U when gated, then the two head layers.
    pub fn to_flat_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.visit(|slice| out.extend_from_slice(slice));
        out
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries, parameters need {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(|slice| {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        });
        Ok(())
    }

    fn visit(&self, mut f: impl FnMut(&[f64])) {
        for layer in &self.mi_fcn {
            f(layer.weight.as_slice().expect("standard layout"));
            f(layer.bias.as_slice().expect("standard layout"));
        }
        f(self.attention_v.as_slice().expect("standard layout"));
        f(self.attention_w.as_slice().expect("standard layout"));
        if let Some(u) = &self.attention_u {
            f(u.as_slice().expect("standard layout"));
        }
        f(self.head1.weight.as_slice().expect("standard layout"));
        f(self.head1.bias.as_slice().expect("standard layout"));
        f(self.head2.weight.as_slice().expect("standard layout"));
        f(self.head2.bias.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for layer in &mut self.mi_fcn {
            f(layer.weight.as_slice_mut().expect("standard layout"));
            f(layer.bias.as_slice_mut().expect("standard layout"));
        }
        f(self.attention_v.as_slice_mut().expect("standard layout"));
        f(self.attention_w.as_slice_mut().expect("standard layout"));
        if let Some(u) = &mut self.attention_u {
            f(u.as_slice_mut().expect("standard layout"));
        }
        f(self.head1.weight.as_slice_mut().expect("standard layout"));
        f(self.head1.bias.as_slice_mut().expect("standard layout"));
        f(self.head2.weight.as_slice_mut().expect("standard layout"));
        f(self.head2.bias.as_slice_mut().expect("standard layout"));
    }
}

fn glorot_fill(weight: &mut Array2<f64>, rng: &mut ChaCha8Rng) {
    let (out_width, in_width) = weight.dim();
    let limit = (6.0 / (in_width + out_width) as f64).sqrt();
    for v in weight.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
}

/// Glorot-uniform weights, zero biases; deterministic given the seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.mi_fcn {
        glorot_fill(&mut layer.weight, &mut rng);
    }
    glorot_fill(&mut params.attention_v, &mut rng);
    {
        // The score vector w maps L values to one: fan_in L, fan_out 1.
        let limit = (6.0 / (config.attention_hidden + 1) as f64).sqrt();
        for v in params.attention_w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    if let Some(u) = &mut params.attention_u {
        glorot_fill(u, &mut rng);
    }
    glorot_fill(&mut params.head1.weight, &mut rng);
    glorot_fill(&mut params.head2.weight, &mut rng);
    Ok(params)
}
