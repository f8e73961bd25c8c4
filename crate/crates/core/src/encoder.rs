//! Context-window frame encoder (a small TDNN).
//!
//! Each layer maps frame `t` to
//! `act(W · concat(x[t + o_1], ..., x[t + o_C]) + b)`, where out-of-range frame
//! indices are clamped to the first or last frame. The sequence length is
//! preserved through every layer.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceFeatures;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub offsets: Vec<i64>,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderConfig {
    /// Two layers: a 3-frame ReLU context layer and a per-frame linear layer.
    pub fn default_for(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            layers: vec![
                LayerSpec {
                    offsets: vec![-1, 0, 1],
                    output_dim: hidden_dim,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    offsets: vec![0],
                    output_dim,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    /// Builds a config from a layer string such as `-1,0,1:16:relu;0:16:identity`.
    pub fn from_layer_string(input_dim: usize, layers: &str) -> Result<Self> {
        let layers = layers
            .split(';')
            .map(str::parse)
            .collect::<Result<Vec<LayerSpec>>>()?;
        let cfg = EncoderConfig { input_dim, layers };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn layer_string(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    }

    /// D1, the dimension of every frame embedding.
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("encoder input_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.output_dim == 0 {
                return Err(Error::Config(format!("encoder layer {l} has output_dim 0")));
            }
            if spec.offsets.is_empty() {
                return Err(Error::Config(format!("encoder layer {l} has no context offsets")));
            }
            if spec.offsets.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config(format!(
                    "encoder layer {l} offsets {:?} are not sorted",
                    spec.offsets
                )));
            }
        }
        Ok(())
    }

    fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].output_dim
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let offsets: Vec<String> = self.offsets.iter().map(ToString::to_string).collect();
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        write!(f, "{}:{}:{}", offsets.join(","), self.output_dim, act)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid layer spec {s:?}; expected offsets:dim:relu|identity"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let offsets = parts[0]
            .split(',')
            .map(|o| o.trim().parse::<i64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let output_dim = parts[1].trim().parse().map_err(|_| bad())?;
        let activation = match parts[2].trim() {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            _ => return Err(bad()),
        };
        Ok(LayerSpec {
            offsets,
            output_dim,
            activation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    /// `output_dim x (offsets.len() * input_dim)`; column block `c` multiplies
    /// the frame at offset `offsets[c]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrads {
            layers: params
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddingSequence {
    pub utterance_id: String,
    /// T x D1.
    pub embeddings: Array2<f64>,
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights
/// and biases, where `fan_in = offsets.len() * input_dim`.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let fan_in = spec.offsets.len() * config.layer_input_dim(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((spec.output_dim, fan_in), || {
                rng.random_range(-bound..=bound)
            });
            let bias = Array1::from_shape_simple_fn(spec.output_dim, || rng.random_range(-bound..=bound));
            EncoderLayer { weight, bias }
        })
        .collect();
    Ok(EncoderParams {
        config: config.clone(),
        layers,
    })
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers.len() {
            return Err(Error::Dimension(format!(
                "encoder has {} parameter layers for {} configured layers",
                self.layers.len(),
                self.config.layers.len()
            )));
        }
        for (l, (spec, layer)) in self.config.layers.iter().zip(&self.layers).enumerate() {
            let want = (spec.output_dim, spec.offsets.len() * self.config.layer_input_dim(l));
            if layer.weight.dim() != want || layer.bias.len() != spec.output_dim {
                return Err(Error::Dimension(format!(
                    "encoder layer {l}: weight {:?} / bias {} do not match config {:?}",
                    layer.weight.dim(),
                    layer.bias.len(),
                    want
                )));
            }
        }
        Ok(())
    }
}

fn clamp_frame(t: usize, offset: i64, len: usize) -> usize {
    (t as i64 + offset).clamp(0, len as i64 - 1) as usize
}

/// Stacks the context frames of every output frame side by side.
fn gather(x: ArrayView2<f64>, offsets: &[i64]) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let mut out = Array2::zeros((t_len, offsets.len() * d));
    for t in 0..t_len {
        for (c, &o) in offsets.iter().enumerate() {
            out.slice_mut(s![t, c * d..(c + 1) * d])
                .assign(&x.row(clamp_frame(t, o, t_len)));
        }
    }
    out
}

/// Adjoint of [`gather`].
fn scatter(dcat: ArrayView2<f64>, offsets: &[i64], d: usize) -> Array2<f64> {
    let t_len = dcat.nrows();
    let mut dx = Array2::zeros((t_len, d));
    for t in 0..t_len {
        for (c, &o) in offsets.iter().enumerate() {
            let mut row = dx.row_mut(clamp_frame(t, o, t_len));
            row += &dcat.slice(s![t, c * d..(c + 1) * d]);
        }
    }
    dx
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    gathered: Vec<Array2<f64>>,
    pub(crate) preact: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn check_input(params: &EncoderParams, x: ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() != params.config.input_dim {
        return Err(Error::Dimension(format!(
            "encoder expects T x {} input with T >= 1, got {:?}",
            params.config.input_dim,
            x.dim()
        )));
    }
    Ok(())
}

pub fn forward_trace(params: &EncoderParams, x: ArrayView2<f64>) -> Result<EncoderTrace> {
    check_input(params, x)?;
    let mut gathered = Vec::with_capacity(params.layers.len());
    let mut preact = Vec::with_capacity(params.layers.len());
    let mut h = x.to_owned();
    for (spec, layer) in params.config.layers.iter().zip(&params.layers) {
        let cat = gather(h.view(), &spec.offsets);
        let z = cat.dot(&layer.weight.t()) + &layer.bias;
        h = z.mapv(|v| spec.activation.apply(v));
        gathered.push(cat);
        preact.push(z);
    }
    Ok(EncoderTrace {
        gathered,
        preact,
        output: h,
    })
}

pub fn encode_frames(params: &EncoderParams, feats: &UtteranceFeatures) -> Result<FrameEmbeddingSequence> {
    let trace = forward_trace(params, feats.features.view())?;
    Ok(FrameEmbeddingSequence {
        utterance_id: feats.utterance_id.clone(),
        embeddings: trace.output,
    })
}

/// Backpropagates `upstream` (T x D1) through a recorded forward pass.
/// Returns parameter gradients and the gradient w.r.t. the encoder input.
pub fn backward_trace(
    params: &EncoderParams,
    trace: &EncoderTrace,
    upstream: ArrayView2<f64>,
) -> Result<(EncoderGrads, Array2<f64>)> {
    if upstream.dim() != trace.output.dim() {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match encoder output {:?}",
            upstream.dim(),
            trace.output.dim()
        )));
    }
    if !upstream.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("upstream gradient is not finite".into()));
    }
    let n = params.layers.len();
    let mut grads = Vec::with_capacity(n);
    let mut dh = upstream.to_owned();
    for l in (0..n).rev() {
        let spec = &params.config.layers[l];
        let layer = &params.layers[l];
        let mut dz = dh;
        dz.zip_mut_with(&trace.preact[l], |g, &z| *g *= spec.activation.derivative(z));
        let dweight = dz.t().dot(&trace.gathered[l]);
        let dbias = dz.sum_axis(Axis(0));
        let dcat = dz.dot(&layer.weight);
        dh = scatter(dcat.view(), &spec.offsets, params.config.layer_input_dim(l));
        grads.push(EncoderLayer {
            weight: dweight,
            bias: dbias,
        });
    }
    grads.reverse();
    Ok((EncoderGrads { layers: grads }, dh))
}

/// Exact gradients of `sum(encode(feats) ⊙ upstream)` w.r.t. parameters and inputs.
pub fn encode_backward(
    params: &EncoderParams,
    feats: &UtteranceFeatures,
    upstream: ArrayView2<f64>,
) -> Result<(EncoderGrads, Array2<f64>)> {
    let trace = forward_trace(params, feats.features.view())?;
    backward_trace(params, &trace, upstream)
}
