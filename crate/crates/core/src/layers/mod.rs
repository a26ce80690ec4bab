//! Network layers with closed-form backward passes.
//!
//! Every layer is a pure function of `(params, input)`. `backward` takes the
//! same input that was fed to `forward` plus the loss gradient with respect
//! to the output, and returns gradients for each trainable tensor in the
//! order of [`Layer::params`] together with the input gradient.

mod activation;
mod dense;
mod loss;
mod sk_conv;
mod sk_fc;

pub use activation::{maxpool_backward, maxpool_forward, relu_backward, relu_forward, MaxPool};
pub use dense::{DenseConv, DenseFc};
pub use loss::softmax_xent;
pub use sk_conv::{sketch_from_dense_conv, SkConv};
pub use sk_fc::{sketch_from_dense_fc, SkFc};

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LayerGrads {
    /// One tensor per entry of [`Layer::params`], same shapes.
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

/// Trainable parameter count split into weights and biases. Sign matrices are
/// seed-derived constants and never counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub weights: usize,
    pub biases: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, rhs: Self) -> Self {
        ParamCount {
            weights: self.weights + rhs.weights,
            biases: self.biases + rhs.biases,
        }
    }
}

impl std::iter::Sum for ParamCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ParamCount::default(), |a, b| a + b)
    }
}

/// `reduced / dense`; below 1 means compression.
pub fn compression_rate(reduced_weights: usize, dense_weights: usize) -> f64 {
    reduced_weights as f64 / dense_weights as f64
}

/// Whether `k ell <= d1 d2 / (d1 + d2)`, the condition under which `ell`
/// sketch pairs of width `k` store no more weights than a dense `d1 x d2`
/// matrix (or `h x w` kernel with `d2` inputs and `d1` outputs). The counts
/// tie exactly at equality.
pub fn sketch_within_budget(d1: usize, d2: usize, k: usize, ell: usize) -> bool {
    k * ell * (d1 + d2) <= d1 * d2
}

#[derive(Clone, Debug)]
pub enum Layer {
    DenseFc(DenseFc),
    DenseConv(DenseConv),
    SkFc(SkFc),
    SkConv(SkConv),
    Relu,
    MaxPool(MaxPool),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::DenseFc(_) => "fc",
            Layer::DenseConv(_) => "conv",
            Layer::SkFc(_) => "sk-fc",
            Layer::SkConv(_) => "sk-conv",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::DenseFc(l) => l.forward(input),
            Layer::DenseConv(l) => l.forward(input),
            Layer::SkFc(l) => l.forward(input),
            Layer::SkConv(l) => l.forward(input),
            Layer::Relu => Ok(relu_forward(input)),
            Layer::MaxPool(p) => maxpool_forward(input, p.window),
        }
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<LayerGrads> {
        match self {
            Layer::DenseFc(l) => l.backward(input, grad_out),
            Layer::DenseConv(l) => l.backward(input, grad_out),
            Layer::SkFc(l) => l.backward(input, grad_out),
            Layer::SkConv(l) => l.backward(input, grad_out),
            Layer::Relu => Ok(LayerGrads {
                params: vec![],
                input: relu_backward(input, grad_out)?,
            }),
            Layer::MaxPool(p) => Ok(LayerGrads {
                params: vec![],
                input: maxpool_backward(input, grad_out, p.window)?,
            }),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::DenseFc(l) => l.params(),
            Layer::DenseConv(l) => l.params(),
            Layer::SkFc(l) => l.params(),
            Layer::SkConv(l) => l.params(),
            Layer::Relu | Layer::MaxPool(_) => vec![],
        }
    }

    /// Display names matching [`Layer::params`] one to one.
    pub fn param_names(&self) -> Vec<String> {
        let sketch_names = |ell: usize, bias: bool| {
            let mut v: Vec<String> = (1..=ell).map(|i| format!("S1[{i}]")).collect();
            v.extend((1..=ell).map(|i| format!("S2[{i}]")));
            if bias {
                v.push("bias".into());
            }
            v
        };
        match self {
            Layer::DenseFc(_) => vec!["weight".into(), "bias".into()],
            Layer::DenseConv(_) => vec!["kernel".into(), "bias".into()],
            Layer::SkFc(l) => sketch_names(l.ell(), true),
            Layer::SkConv(l) => sketch_names(l.ell(), l.bias().is_some()),
            Layer::Relu | Layer::MaxPool(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::DenseFc(l) => l.params_mut(),
            Layer::DenseConv(l) => l.params_mut(),
            Layer::SkFc(l) => l.params_mut(),
            Layer::SkConv(l) => l.params_mut(),
            Layer::Relu | Layer::MaxPool(_) => vec![],
        }
    }

    pub fn param_count(&self) -> ParamCount {
        match self {
            Layer::DenseFc(l) => l.param_count(),
            Layer::DenseConv(l) => l.param_count(),
            Layer::SkFc(l) => l.param_count(),
            Layer::SkConv(l) => l.param_count(),
            Layer::Relu | Layer::MaxPool(_) => ParamCount::default(),
        }
    }

    /// Weight count of the dense layer with the same geometry.
    pub fn dense_equivalent(&self) -> ParamCount {
        match self {
            Layer::SkFc(l) => ParamCount {
                weights: l.d1() * l.d2(),
                biases: l.d1(),
            },
            Layer::SkConv(l) => {
                let g = l.geometry();
                ParamCount {
                    weights: g.kernel_h * g.kernel_w * g.in_channels * g.out_channels,
                    biases: g.out_channels,
                }
            }
            other => other.param_count(),
        }
    }

    /// Output shape for a given input shape, validating compatibility.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input.iter().product();
        let fc_check = |d2: usize, d1: usize| {
            if flat == d2 {
                Ok(vec![d1])
            } else {
                Err(Error::shape(
                    "fc",
                    format!("input {input:?} has {flat} elements, layer expects {d2}"),
                ))
            }
        };
        let conv_check = |g: &crate::conv::ConvGeometry| {
            if input == g.input_shape() {
                Ok(g.output_shape().to_vec())
            } else {
                Err(Error::shape(
                    "conv",
                    format!("input {input:?}, layer expects {:?}", g.input_shape()),
                ))
            }
        };
        match self {
            Layer::DenseFc(l) => fc_check(l.d2(), l.d1()),
            Layer::SkFc(l) => fc_check(l.d2(), l.d1()),
            Layer::DenseConv(l) => conv_check(l.geometry()),
            Layer::SkConv(l) => conv_check(l.geometry()),
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool(p) => {
                if input.len() != 3 || input[0] % p.window != 0 || input[1] % p.window != 0 {
                    return Err(Error::shape(
                        "maxpool",
                        format!("window {} does not tile input {input:?}", p.window),
                    ));
                }
                Ok(vec![input[0] / p.window, input[1] / p.window, input[2]])
            }
        }
    }
}

/// Uniform `+-limit` fill.
pub(crate) fn uniform_tensor(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
    t
}

/// Glorot-uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn flat_input(input: &Tensor, d2: usize, op: &'static str) -> Result<Tensor> {
    if input.len() != d2 {
        return Err(Error::shape(
            op,
            format!(
                "input {:?} has {} elements, expected {d2}",
                input.shape(),
                input.len()
            ),
        ));
    }
    Tensor::new(&[d2], input.data().to_vec())
}

pub(crate) fn check_grad(g: &Tensor, len: usize, op: &'static str) -> Result<()> {
    if g.len() != len {
        return Err(Error::shape(
            op,
            format!("output gradient {:?} should have {len} elements", g.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_condition() {
        // d1 = 250, d2 = 480: d1 d2 / (d1 + d2) = 164.38
        assert!(sketch_within_budget(250, 480, 10, 16));
        assert!(!sketch_within_budget(250, 480, 10, 17));
        // equality: 2 * 2 / 4 = 1
        assert!(sketch_within_budget(2, 2, 1, 1));
    }

    #[test]
    fn rate() {
        assert_eq!(compression_rate(1, 4), 0.25);
    }
}
