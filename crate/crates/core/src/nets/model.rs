use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ParamVector, Segment};
use crate::datahub::LabeledBatch;
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Fully connected layers; `hidden` lists the hidden widths (empty = linear model).
    Mlp { hidden: Vec<usize> },
    /// `conv(kernel, same padding) -> activation -> avg_pool(pool)` per entry of
    /// `channels`, then a linear classifier.
    Convnet {
        channels: Vec<usize>,
        kernel: usize,
        pool: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// N(0, 2 / fan_in)
    Kaiming,
    /// N(0, 0.02²)
    Normal,
    /// N(0, 2 / (fan_in + fan_out))
    Xavier,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kaiming" => Ok(Self::Kaiming),
            "normal" => Ok(Self::Normal),
            "xavier" => Ok(Self::Xavier),
            other => Err(Error::Config(format!("unknown init scheme {other:?}"))),
        }
    }
}

const NORMAL_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub activation: Activation,
    pub num_classes: usize,
    /// Shape of one input sample, e.g. `[1, 28, 28]` or `[4]`.
    pub input_shape: Vec<usize>,
    pub init: InitScheme,
    pub seed: u64,
}

impl ModelSpec {
    /// The default desk-scale network: MLP with hidden widths 128 and 64, ReLU, Kaiming init.
    pub fn default_mlp(input_shape: Vec<usize>, num_classes: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden: vec![128, 64] },
            activation: Activation::Relu,
            num_classes,
            input_shape,
            init: InitScheme::Kaiming,
            seed,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Dense { input: usize, w: usize, b: usize },
    Conv { w: usize, b: usize, pad: usize, pool: usize },
}

/// A network instantiated from a [`ModelSpec`]: the segment layout plus the
/// forward pass. Stateless; parameters are passed in as [`ParamVector`]s.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layout: Arc<Vec<Segment>>,
    layers: Vec<Layer>,
    /// Index of the first layer whose output is the feature vector.
    head: usize,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", spec.num_classes)));
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {:?}", spec.input_shape)));
        }
        let mut segments = Vec::new();
        let mut layers = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = segments.iter().map(|s: &Segment| s.len).sum();
            let len = shape.iter().product();
            segments.push(Segment {
                name,
                shape,
                offset,
                len,
            });
            segments.len() - 1
        };
        let features;
        match &spec.architecture {
            Architecture::Mlp { hidden } => {
                if let Some(i) = hidden.iter().position(|&h| h == 0) {
                    return Err(Error::Config(format!("hidden layer {i} has zero width")));
                }
                let mut input: usize = spec.input_shape.iter().product();
                for (i, &h) in hidden.iter().enumerate() {
                    let w = push(format!("fc{}.weight", i + 1), vec![input, h]);
                    let b = push(format!("fc{}.bias", i + 1), vec![h]);
                    layers.push(Layer::Dense { input, w, b });
                    input = h;
                }
                features = input;
            }
            Architecture::Convnet { channels, kernel, pool } => {
                if spec.input_shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "convnet needs a [channels, height, width] input shape, got {:?}",
                        spec.input_shape
                    )));
                }
                if *kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::Config(format!("convnet kernel must be odd and positive, got {kernel}")));
                }
                if *pool == 0 {
                    return Err(Error::Config("convnet pool must be positive".into()));
                }
                if let Some(i) = channels.iter().position(|&c| c == 0) {
                    return Err(Error::Config(format!("conv layer {i} has zero channels")));
                }
                let (mut c, mut h, mut w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
                for (i, &out) in channels.iter().enumerate() {
                    if h % pool != 0 || w % pool != 0 {
                        return Err(Error::Config(format!(
                            "conv layer {i}: spatial size {h}x{w} not divisible by pool {pool}"
                        )));
                    }
                    let ws = push(format!("conv{}.weight", i + 1), vec![out, c, *kernel, *kernel]);
                    let bs = push(format!("conv{}.bias", i + 1), vec![out]);
                    layers.push(Layer::Conv {
                        w: ws,
                        b: bs,
                        pad: kernel / 2,
                        pool: *pool,
                    });
                    c = out;
                    h /= pool;
                    w /= pool;
                }
                features = c * h * w;
            }
        }
        let head = layers.len();
        let n = spec.num_classes;
        let w = push("out.weight".into(), vec![features, n]);
        let b = push("out.bias".into(), vec![n]);
        layers.push(Layer::Dense {
            input: features,
            w,
            b,
        });
        Ok(Self {
            spec,
            layout: Arc::new(segments),
            layers,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Vec<Segment>> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.iter().map(|s| s.len).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.iter().product()
    }

    /// Width of the penultimate representation returned by [`Model::features`].
    pub fn feature_width(&self) -> usize {
        match self.layers[self.head] {
            Layer::Dense { input, .. } => input,
            Layer::Conv { .. } => unreachable!("head layer is dense"),
        }
    }

    /// Fresh parameters drawn with the init scheme and seed in `self.spec`. Biases start at zero.
    pub fn init(&self) -> ParamVector {
        let mut rng = rng::substream(self.spec.seed, "init", 0);
        let mut p = ParamVector::zeros(self.layout.clone());
        for seg in self.layout.iter() {
            if !seg.name.ends_with(".weight") {
                continue;
            }
            let (fan_in, fan_out) = match seg.shape.as_slice() {
                [i, o] => (*i, *o),
                [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
                other => unreachable!("weight shape {other:?}"),
            };
            let std = match self.spec.init {
                InitScheme::Kaiming => (2.0 / fan_in as f64).sqrt(),
                InitScheme::Normal => NORMAL_INIT_STD,
                InitScheme::Xavier => (2.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in &mut p.data_mut()[seg.offset..seg.offset + seg.len] {
                *v = dist.sample(&mut rng);
            }
        }
        p
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.segments().as_ref() != self.layout.as_ref() {
            return Err(Error::ShapeMismatch {
                context: "parameters vs model layout".into(),
                expected: self.layout.iter().map(|s| s.len).collect(),
                got: params.segments().iter().map(|s| s.len).collect(),
            });
        }
        Ok(())
    }

    /// Number of samples in `inputs`, after checking the per-sample shape.
    /// Accepts `[n, ...input_shape]` or the flattened `[n, input_len]`.
    pub(crate) fn check_inputs(&self, inputs: &Tensor) -> Result<usize> {
        let s = inputs.shape();
        let ok = !s.is_empty() && (s[1..] == self.spec.input_shape[..] || s[1..] == [self.input_len()]);
        if !ok {
            let mut expected = vec![s.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::ShapeMismatch {
                context: "model input".into(),
                expected,
                got: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Adds every parameter segment to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, params: &ParamVector, requires_grad: bool) -> Vec<NodeId> {
        self.layout
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let t = Tensor::from_parts(seg.shape.clone(), params.segment(i).to_vec());
                if requires_grad {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    fn activate(&self, g: &mut Graph, x: NodeId) -> NodeId {
        match self.spec.activation {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    fn run(&self, g: &mut Graph, params: &[NodeId], x: NodeId, upto: usize) -> NodeId {
        let n = g.shape(x)[0];
        let mut h = match self.spec.architecture {
            Architecture::Mlp { .. } => g.reshape(x, &[n, self.input_len()]),
            Architecture::Convnet { .. } => {
                let mut s = vec![n];
                s.extend_from_slice(&self.spec.input_shape);
                g.reshape(x, &s)
            }
        };
        for (i, layer) in self.layers.iter().enumerate().take(upto) {
            let last = i + 1 == self.layers.len();
            h = match *layer {
                Layer::Dense { input, w, b, .. } => {
                    if g.shape(h).len() != 2 {
                        h = g.reshape(h, &[n, input]);
                    }
                    let z = g.matmul(h, params[w]);
                    let z = g.add_row_bias(z, params[b]);
                    if last {
                        z
                    } else {
                        self.activate(g, z)
                    }
                }
                Layer::Conv { w, b, pad, pool } => {
                    let z = g.conv2d(h, params[w], pad);
                    let z = g.add_channel_bias(z, params[b]);
                    let a = self.activate(g, z);
                    if pool > 1 {
                        g.avg_pool(a, pool)
                    } else {
                        a
                    }
                }
            };
        }
        if g.shape(h).len() != 2 {
            let width = g.value(h).len() / n.max(1);
            h = g.reshape(h, &[n, width]);
        }
        h
    }

    /// Class logits `[n, num_classes]`.
    pub fn forward(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> NodeId {
        self.run(g, params, x, self.layers.len())
    }

    /// Penultimate representation `[n, feature_width]`.
    pub fn features(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> NodeId {
        self.run(g, params, x, self.head)
    }

    pub fn logits(&self, params: &ParamVector, inputs: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_inputs(inputs)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, params, false);
        let x = g.constant(inputs.clone());
        let z = self.forward(&mut g, &p, x);
        Ok(g.value(z).clone())
    }

    /// Class-probability rows `[n, num_classes]`.
    pub fn predict(&self, params: &ParamVector, inputs: &Tensor) -> Result<Tensor> {
        let z = self.logits(params, inputs)?;
        let ls = crate::diffcore::kernels::log_softmax_rows(&z);
        let data = ls.data().iter().map(|v| v.exp()).collect();
        Ok(Tensor::from_parts(ls.shape().to_vec(), data))
    }

    pub fn feature_matrix(&self, params: &ParamVector, inputs: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_inputs(inputs)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, params, false);
        let x = g.constant(inputs.clone());
        let f = self.features(&mut g, &p, x);
        Ok(g.value(f).clone())
    }

    /// Mean cross-entropy of `batch`.
    pub fn loss(&self, params: &ParamVector, batch: &LabeledBatch) -> Result<f64> {
        self.check_labels(&batch.labels)?;
        let z = self.logits(params, &batch.inputs)?;
        let ls = crate::diffcore::kernels::log_softmax_rows(&z);
        let c = self.num_classes();
        let total: f64 = batch.labels.iter().enumerate().map(|(i, &y)| -ls.data()[i * c + y]).sum();
        Ok(total / batch.len().max(1) as f64)
    }

    /// Fraction of `batch` classified correctly, in `[0, 1]`.
    pub fn accuracy(&self, params: &ParamVector, batch: &LabeledBatch) -> Result<f64> {
        let z = self.logits(params, &batch.inputs)?;
        let correct = z
            .rows()
            .zip(&batch.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        Ok(correct as f64 / batch.len().max(1) as f64)
    }

    pub(crate) fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes()) {
            Some((index, &label)) => Err(Error::InvalidLabel {
                index,
                label,
                classes: self.num_classes(),
            }),
            None => Ok(()),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
