use super::{check_grad, flat_input, glorot_limit, uniform_tensor, LayerGrads, ParamCount};
use crate::conv::{col2im, im2col, ConvGeometry};
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_into, Op};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// `a = W h + b` with `W` of shape `d1 x d2`. Inputs of any shape are read
/// as flat vectors in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFc {
    weight: Tensor,
    bias: Tensor,
}

impl DenseFc {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (d1, _) = weight.expect_matrix("DenseFc")?;
        if bias.shape() != [d1] {
            return Err(Error::shape(
                "DenseFc",
                format!("bias {:?} does not match {d1} outputs", bias.shape()),
            ));
        }
        Ok(DenseFc { weight, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(d1: usize, d2: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let weight = uniform_tensor(&[d1, d2], glorot_limit(d2, d1), &mut rng);
        DenseFc {
            weight,
            bias: Tensor::zeros(&[d1]),
        }
    }

    pub fn d1(&self) -> usize {
        self.weight.rows()
    }

    pub fn d2(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let h = flat_input(input, self.d2(), "fc forward")?;
        let mut a = self.bias.clone().reshape(&[self.d1(), 1])?;
        gemm_into(1.0, &self.weight, Op::N, &h, Op::N, 1.0, &mut a)?;
        a.reshape(&[self.d1()])
    }

    pub fn backward(&self, input: &Tensor, g: &Tensor) -> Result<LayerGrads> {
        let h = flat_input(input, self.d2(), "fc backward")?;
        check_grad(g, self.d1(), "fc backward")?;
        let gw = gemm(g, Op::N, &h, Op::T)?;
        let gin = gemm(&self.weight, Op::T, g, Op::N)?.reshape(input.shape())?;
        Ok(LayerGrads {
            params: vec![gw, g.clone().reshape(&[self.d1()])?],
            input: gin,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            weights: self.weight.len(),
            biases: self.bias.len(),
        }
    }
}

/// Convolution `I_out = im2col(I_in) mat_4(K) + b` with a `d2 x h x w x d1`
/// kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseConv {
    geometry: ConvGeometry,
    kernel: Tensor,
    bias: Tensor,
}

impl DenseConv {
    pub fn new(geometry: ConvGeometry, kernel: Tensor, bias: Tensor) -> Result<Self> {
        geometry.validate()?;
        if kernel.shape() != geometry.kernel_shape() || bias.shape() != [geometry.out_channels] {
            return Err(Error::shape(
                "DenseConv",
                format!(
                    "kernel {:?} / bias {:?} do not match geometry {geometry:?}",
                    kernel.shape(),
                    bias.shape()
                ),
            ));
        }
        Ok(DenseConv {
            geometry,
            kernel,
            bias,
        })
    }

    pub fn init(geometry: ConvGeometry, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let g = &geometry;
        let hw = g.kernel_h * g.kernel_w;
        let mut rng = stream_rng(seed, 0);
        let kernel = uniform_tensor(
            &g.kernel_shape(),
            glorot_limit(g.in_channels * hw, g.out_channels * hw),
            &mut rng,
        );
        Ok(DenseConv {
            geometry,
            kernel,
            bias: Tensor::zeros(&[g.out_channels]),
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let g = &self.geometry;
        let cols = im2col(input, g)?;
        let mut out = gemm(&cols, Op::N, &self.kernel.mat_n(4)?, Op::N)?;
        add_channel_bias(&mut out, &self.bias);
        out.reshape(&g.output_shape())
    }

    pub fn backward(&self, input: &Tensor, g_out: &Tensor) -> Result<LayerGrads> {
        let g = &self.geometry;
        check_grad(g_out, g.positions() * g.out_channels, "conv backward")?;
        let cols = im2col(input, g)?;
        let gm = g_out.clone().reshape(&[g.positions(), g.out_channels])?;
        let gk = gemm(&cols, Op::T, &gm, Op::N)?;
        let gk = Tensor::unmat_n(&gk, &g.kernel_shape(), 4)?;
        let gb = channel_sums(&gm);
        let gcols = gemm(&gm, Op::N, &self.kernel.mat_n(4)?, Op::T)?;
        Ok(LayerGrads {
            params: vec![gk, gb],
            input: col2im(&gcols, g)?,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernel, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            weights: self.kernel.len(),
            biases: self.bias.len(),
        }
    }
}

/// Adds `bias[s]` to every row of column `s` of a `positions x d1` matrix.
pub(crate) fn add_channel_bias(out: &mut Tensor, bias: &Tensor) {
    let rows = out.rows();
    for (s, &b) in bias.data().iter().enumerate() {
        out.data_mut()[rows * s..rows * (s + 1)]
            .iter_mut()
            .for_each(|v| *v += b);
    }
}

pub(crate) fn channel_sums(gm: &Tensor) -> Tensor {
    let rows = gm.rows();
    Tensor::vector(gm.data().chunks(rows).map(|col| col.iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::conv_direct;

    #[test]
    fn identity_fc_passes_input_through() {
        let fc = DenseFc::new(Tensor::identity(3), Tensor::zeros(&[3])).unwrap();
        let h = Tensor::vector(vec![1.0, -2.0, 0.5]);
        assert_eq!(fc.forward(&h).unwrap(), h);
    }

    #[test]
    fn two_by_two_affine() {
        let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let fc = DenseFc::new(w, Tensor::vector(vec![0.5, -1.0])).unwrap();
        let a = fc.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(a.data(), &[3.5, 6.0]);
        let gr = fc
            .backward(
                &Tensor::vector(vec![1.0, 2.0]),
                &Tensor::vector(vec![1.0, 0.0]),
            )
            .unwrap();
        // dW = g h^T, dh = W^T g
        assert_eq!(
            gr.params[0],
            Tensor::from_rows(&[&[1.0, 2.0], &[0.0, 0.0]]).unwrap()
        );
        assert_eq!(gr.input.data(), &[1.0, 2.0]);
    }

    #[test]
    fn fc_rejects_wrong_input() {
        let fc = DenseFc::init(3, 4, 0);
        assert!(fc.forward(&Tensor::zeros(&[5])).is_err());
        assert!(fc
            .backward(&Tensor::zeros(&[4]), &Tensor::zeros(&[2]))
            .is_err());
    }

    #[test]
    fn conv_matches_direct() {
        let g = ConvGeometry::new(6, 5, 2, 3, 2, 3, 1, 1).unwrap();
        let conv = DenseConv::init(g, 4).unwrap();
        let x = Tensor::from_fn(&g.input_shape(), |ix| {
            ((ix[0] * 7 + ix[1] * 3 + ix[2]) as f64).cos()
        });
        let fast = conv.forward(&x).unwrap();
        let direct = conv_direct(&x, conv.kernel(), &g).unwrap();
        assert!(fast.max_abs_diff(&direct) < 1e-12);
    }
}
