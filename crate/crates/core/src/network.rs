//! Sequential networks and the TestNet builder.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::conv::ConvGeometry;
use crate::error::{Error, Result};
use crate::layers::{
    compression_rate, sketch_from_dense_conv, sketch_from_dense_fc, softmax_xent, DenseConv,
    DenseFc, Layer, MaxPool, ParamCount, SkConv, SkFc,
};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// A chain of layers ending in class logits.
#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Loss and per-layer parameter gradients for one sample.
#[derive(Clone, Debug)]
pub struct SampleGrads {
    pub loss: f64,
    pub layers: Vec<Vec<Tensor>>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Network {
            input_shape,
            layers,
        };
        net.shape_trace()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Activation shapes from the input through every layer.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_len(&self) -> usize {
        self.shape_trace()
            .map(|s| s.last().unwrap().iter().product())
            .unwrap_or(0)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                "network input",
                format!("got {:?}, expected {:?}", input.shape(), self.input_shape),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Every activation, starting with the input itself.
    pub fn forward_trace(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Softmax cross-entropy loss of one sample and its parameter gradients.
    pub fn sample_grads(&self, input: &Tensor, label: usize) -> Result<SampleGrads> {
        let acts = self.forward_trace(input)?;
        let (loss, mut g) = softmax_xent(acts.last().unwrap(), label)?;
        let mut layers = vec![Vec::new(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let grads = layer.backward(&acts[i], &g)?;
            layers[i] = grads.params;
            g = grads.input;
        }
        Ok(SampleGrads { loss, layers })
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(argmax(self.forward(input)?.data()))
    }

    pub fn param_count(&self) -> ParamCount {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Counts of the dense network with the same geometry.
    pub fn dense_equivalent(&self) -> ParamCount {
        self.layers.iter().map(Layer::dense_equivalent).sum()
    }

    /// Weight-count ratio against the dense network of identical geometry.
    pub fn compression_rate(&self) -> f64 {
        compression_rate(self.param_count().weights, self.dense_equivalent().weights)
    }

    /// Copy of this network with dense layer `index` replaced by its
    /// sketch (`k`, `ell`, seed `seed`).
    pub fn with_sketched_layer(
        &self,
        index: usize,
        k: usize,
        ell: usize,
        seed: u64,
    ) -> Result<Network> {
        let layer = match self.layers.get(index) {
            Some(Layer::DenseFc(l)) => {
                Layer::SkFc(sketch_from_dense_fc(l.weight(), l.bias(), k, ell, seed)?)
            }
            Some(Layer::DenseConv(l)) => Layer::SkConv(sketch_from_dense_conv(
                l.kernel(),
                *l.geometry(),
                Some(l.bias()),
                k,
                ell,
                seed,
            )?),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "layer {index} is not a dense fc or conv layer"
                )))
            }
        };
        let mut net = self.clone();
        net.replace_layer(index, layer)?;
        Ok(net)
    }

    pub fn replace_layer(&mut self, index: usize, layer: Layer) -> Result<()> {
        if index >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("no layer {index}")));
        }
        let old = std::mem::replace(&mut self.layers[index], layer);
        if let Err(e) = self.shape_trace() {
            self.layers[index] = old;
            return Err(e);
        }
        Ok(())
    }
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Layers of TestNet that may be replaced by sketched counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TestNetSlot {
    Conv2,
    Fc1,
}

impl TestNetSlot {
    /// Position of the slot in the TestNet layer list.
    pub fn layer_index(self) -> usize {
        match self {
            TestNetSlot::Conv2 => 3,
            TestNetSlot::Fc1 => 6,
        }
    }
}

impl fmt::Display for TestNetSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestNetSlot::Conv2 => "conv2",
            TestNetSlot::Fc1 => "fc1",
        })
    }
}

impl FromStr for TestNetSlot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv2" => Ok(TestNetSlot::Conv2),
            "fc1" => Ok(TestNetSlot::Fc1),
            other => Err(Error::InvalidArgument(format!(
                "unknown layer `{other}` (expected conv2 or fc1)"
            ))),
        }
    }
}

/// One replacement in a sketch spec such as `fc1:k=10,l=2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SketchSpec {
    pub slot: TestNetSlot,
    pub k: usize,
    pub ell: usize,
}

impl fmt::Display for SketchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:k={},l={}", self.slot, self.k, self.ell)
    }
}

/// Parses `layer:k=<int>,l=<int>[;...]`. Whitespace around tokens is ignored
/// and an empty string selects nothing.
pub fn parse_sketch_specs(text: &str) -> Result<Vec<SketchSpec>> {
    let bad =
        |token: &str, why: &str| Error::InvalidArgument(format!("sketch spec: {why} at `{token}`"));
    let mut specs: Vec<SketchSpec> = Vec::new();
    for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, args) = item
            .split_once(':')
            .ok_or_else(|| bad(item, "expected `layer:k=<int>,l=<int>`"))?;
        let slot: TestNetSlot = name
            .trim()
            .parse()
            .map_err(|_| bad(name, "unknown layer"))?;
        let (mut k, mut ell) = (None, None);
        for arg in args.split(',').map(str::trim) {
            let (key, value) = arg
                .split_once('=')
                .ok_or_else(|| bad(arg, "expected key=value"))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| bad(arg, "expected a positive integer"))?;
            if value == 0 {
                return Err(bad(arg, "expected a positive integer"));
            }
            let slot_ref = match key.trim() {
                "k" => &mut k,
                "l" => &mut ell,
                _ => return Err(bad(arg, "unknown key")),
            };
            if slot_ref.replace(value).is_some() {
                return Err(bad(arg, "duplicate key"));
            }
        }
        let (Some(k), Some(ell)) = (k, ell) else {
            return Err(bad(item, "both k and l are required"));
        };
        if specs.iter().any(|s| s.slot == slot) {
            return Err(bad(item, "layer listed twice"));
        }
        specs.push(SketchSpec { slot, k, ell });
    }
    Ok(specs)
}

pub const TESTNET_CHANNELS: usize = 30;
pub const TESTNET_HIDDEN: usize = 250;

/// TestNet: `conv1 5x5 -> relu -> pool 2 -> conv2 5x5 -> relu -> pool 4 ->
/// fc1 -> relu -> fc2`. Convolutions use stride 1 and padding 2, so the
/// height and width must be multiples of 8. `image_shape` is
/// `height x width x channels`.
pub fn build_testnet(
    image_shape: [usize; 3],
    classes: usize,
    sketches: &[SketchSpec],
    seed: u64,
) -> Result<Network> {
    build_testnet_seeded(
        image_shape,
        classes,
        sketches,
        seed,
        derive_seed(seed, SIGN_STREAM),
    )
}

const SIGN_STREAM: u64 = 0x5167;

/// [`build_testnet`] with the sign matrices of sketched layers drawn from
/// `sign_seed` and everything else from `weight_seed`.
pub fn build_testnet_seeded(
    image_shape: [usize; 3],
    classes: usize,
    sketches: &[SketchSpec],
    weight_seed: u64,
    sign_seed: u64,
) -> Result<Network> {
    let [h, w, c] = image_shape;
    if h == 0 || w == 0 || c == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "TestNet needs height and width divisible by 8, got {h}x{w}x{c}"
        )));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument(
            "TestNet needs at least 2 classes".into(),
        ));
    }
    let spec_for = |slot| sketches.iter().find(|s| s.slot == slot);
    let layer_seed = |i: u64| derive_seed(weight_seed, 0x7E57 + i);
    let sign_seed_for = |i: u64| derive_seed(sign_seed, i);
    let ch = TESTNET_CHANNELS;

    let conv1 = ConvGeometry::new(h, w, c, 5, 5, ch, 1, 2)?;
    let conv2 = ConvGeometry::new(h / 2, w / 2, ch, 5, 5, ch, 1, 2)?;
    let flat = (h / 8) * (w / 8) * ch;

    let conv2_layer = match spec_for(TestNetSlot::Conv2) {
        Some(s) => Layer::SkConv(SkConv::init_seeded(
            conv2,
            s.k,
            s.ell,
            true,
            layer_seed(2),
            sign_seed_for(2),
        )?),
        None => Layer::DenseConv(DenseConv::init(conv2, layer_seed(2))?),
    };
    let fc1_layer = match spec_for(TestNetSlot::Fc1) {
        Some(s) => Layer::SkFc(SkFc::init_seeded(
            TESTNET_HIDDEN,
            flat,
            s.k,
            s.ell,
            layer_seed(3),
            sign_seed_for(3),
        )?),
        None => Layer::DenseFc(DenseFc::init(TESTNET_HIDDEN, flat, layer_seed(3))),
    };
    Network::new(
        image_shape.to_vec(),
        vec![
            Layer::DenseConv(DenseConv::init(conv1, layer_seed(1))?),
            Layer::Relu,
            Layer::MaxPool(MaxPool { window: 2 }),
            conv2_layer,
            Layer::Relu,
            Layer::MaxPool(MaxPool { window: 4 }),
            fc1_layer,
            Layer::Relu,
            Layer::DenseFc(DenseFc::init(classes, TESTNET_HIDDEN, layer_seed(4))),
        ],
    )
}
