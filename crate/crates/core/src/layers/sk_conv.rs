//! Sketched convolutional layer.
//!
//! With `I = im2col(input)` of shape `h2 w2 x d2 h w`, sketch tensors
//! `S1_i: d2 x h x w x k`, `S2_i: k x h x w x d1` and frozen sign matrices
//! `U1_i: k x d1`, `U2_i: khw x d2hw`:
//!
//! ```text
//! I_out = 1/(2 ell) sum_i (I mat4(S1_i)) U1_i + 1/(2 ell) sum_i (I U2_i^T) mat4(S2_i)
//! ```
//!
//! [`SkConv::forward_elementwise`] evaluates the same map the long way, by
//! building the effective kernel tensor entry by entry and convolving directly.

use super::dense::{add_channel_bias, channel_sums};
use super::sk_fc::pair_seeds;
use super::{check_grad, glorot_limit, uniform_tensor, LayerGrads, ParamCount};
use crate::conv::{col2im, conv_direct, im2col, ConvGeometry};
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_into, Op};
use crate::rng::stream_rng;
use crate::sketch::SignMatrix;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0x5EED_C0DE;

#[derive(Clone, Debug)]
pub struct SkConv {
    geometry: ConvGeometry,
    k: usize,
    s1: Vec<Tensor>,
    s2: Vec<Tensor>,
    bias: Option<Tensor>,
    u1: Vec<SignMatrix>,
    u2: Vec<SignMatrix>,
    u1_dense: Vec<Tensor>,
    u2_dense: Vec<Tensor>,
}

impl SkConv {
    pub fn s1_shape(g: &ConvGeometry, k: usize) -> [usize; 4] {
        [g.in_channels, g.kernel_h, g.kernel_w, k]
    }

    pub fn s2_shape(g: &ConvGeometry, k: usize) -> [usize; 4] {
        [k, g.kernel_h, g.kernel_w, g.out_channels]
    }

    pub fn from_parts(
        geometry: ConvGeometry,
        k: usize,
        seeds: &[(u64, u64)],
        s1: Vec<Tensor>,
        s2: Vec<Tensor>,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        geometry.validate()?;
        let ell = seeds.len();
        if ell == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "SK-CONV needs k >= 1 and ell >= 1".into(),
            ));
        }
        let g = &geometry;
        if s1.len() != ell
            || s2.len() != ell
            || s1.iter().any(|s| s.shape() != Self::s1_shape(g, k))
            || s2.iter().any(|s| s.shape() != Self::s2_shape(g, k))
            || bias.as_ref().is_some_and(|b| b.shape() != [g.out_channels])
        {
            return Err(Error::shape(
                "SkConv",
                format!(
                    "expected {ell} tensors S1 {:?}, S2 {:?}",
                    Self::s1_shape(g, k),
                    Self::s2_shape(g, k)
                ),
            ));
        }
        let hw = g.kernel_h * g.kernel_w;
        let u1 = seeds
            .iter()
            .map(|&(a, _)| SignMatrix::new(a, k, g.out_channels))
            .collect::<Result<Vec<_>>>()?;
        let u2 = seeds
            .iter()
            .map(|&(_, b)| SignMatrix::new(b, k * hw, g.patch_len()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SkConv {
            geometry,
            k,
            u1_dense: u1.iter().map(SignMatrix::materialize).collect(),
            u2_dense: u2.iter().map(SignMatrix::materialize).collect(),
            s1,
            s2,
            bias,
            u1,
            u2,
        })
    }

    /// Fresh layer for training; same variance-matching rule as
    /// [`super::SkFc::init`] with the convolutional fan sizes.
    pub fn init(
        geometry: ConvGeometry,
        k: usize,
        ell: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        SkConv::init_seeded(geometry, k, ell, bias, seed, seed)
    }

    /// [`SkConv::init`] with separate seeds for the sketch values and for the
    /// sign matrices.
    pub fn init_seeded(
        geometry: ConvGeometry,
        k: usize,
        ell: usize,
        bias: bool,
        weight_seed: u64,
        sign_seed: u64,
    ) -> Result<Self> {
        geometry.validate()?;
        let g = &geometry;
        let hw = g.kernel_h * g.kernel_w;
        let limit =
            (2.0 * ell as f64).sqrt() * glorot_limit(g.in_channels * hw, g.out_channels * hw);
        let seeds: Vec<_> = (0..ell).map(|i| pair_seeds(sign_seed, i)).collect();
        let mut rng = stream_rng(weight_seed, INIT_STREAM);
        let s1 = (0..ell)
            .map(|_| uniform_tensor(&Self::s1_shape(g, k), limit, &mut rng))
            .collect();
        let s2 = (0..ell)
            .map(|_| uniform_tensor(&Self::s2_shape(g, k), limit, &mut rng))
            .collect();
        let bias = bias.then(|| Tensor::zeros(&[g.out_channels]));
        SkConv::from_parts(geometry, k, &seeds, s1, s2, bias)
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ell(&self) -> usize {
        self.s1.len()
    }

    pub fn s1(&self) -> &[Tensor] {
        &self.s1
    }

    pub fn s2(&self) -> &[Tensor] {
        &self.s2
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn u1(&self) -> &[SignMatrix] {
        &self.u1
    }

    pub fn u2(&self) -> &[SignMatrix] {
        &self.u2
    }

    pub fn seeds(&self) -> Vec<(u64, u64)> {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| (a.seed(), b.seed()))
            .collect()
    }

    fn norm(&self) -> f64 {
        1.0 / (2.0 * self.ell() as f64)
    }

    /// Matrix form: im2col followed by the sketched products.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let g = &self.geometry;
        let cols = im2col(input, g)?;
        let mut out = Tensor::zeros(&[g.positions(), g.out_channels]);
        let c = self.norm();
        for i in 0..self.ell() {
            let left = gemm(&cols, Op::N, &self.s1[i].mat_n(4)?, Op::N)?;
            gemm_into(c, &left, Op::N, &self.u1_dense[i], Op::N, 1.0, &mut out)?;
            let right = gemm(&cols, Op::N, &self.u2_dense[i], Op::T)?;
            gemm_into(
                c,
                &right,
                Op::N,
                &self.s2[i].mat_n(4)?,
                Op::N,
                1.0,
                &mut out,
            )?;
        }
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, b);
        }
        out.reshape(&g.output_shape())
    }

    /// The dense `d2 x h x w x d1` kernel this layer is equivalent to:
    /// `1/(2 ell) sum_i (S1_i x_4 U1_i^T + S2_i (.) U2_i^T)`, with the `(.)`
    /// product evaluated from its entrywise definition
    /// `(S2 (.) U2^T)[x,y,z,s] = sum_{c,i,j} S2[c,i,j,s] U2[(c,i,j), (x,y,z)]`.
    pub fn effective_kernel(&self) -> Result<Tensor> {
        let g = &self.geometry;
        let (d2, h, w, d1, k) = (
            g.in_channels,
            g.kernel_h,
            g.kernel_w,
            g.out_channels,
            self.k,
        );
        let c = self.norm();
        let mut kernel = Tensor::zeros(&g.kernel_shape());
        for i in 0..self.ell() {
            let left = self.s1[i].mode_n_product(&self.u1_dense[i].transpose()?, 4)?;
            kernel.axpy(c, &left)?;
            let u2 = &self.u2_dense[i];
            let s2 = &self.s2[i];
            let odot = Tensor::from_fn(&g.kernel_shape(), |ix| {
                let (x, y, z, s) = (ix[0], ix[1], ix[2], ix[3]);
                let col = x + d2 * y + d2 * h * z;
                let mut acc = 0.0;
                for jj in 0..w {
                    for ii in 0..h {
                        for cc in 0..k {
                            let row = cc + k * ii + k * h * jj;
                            acc += s2.get(&[cc, ii, jj, s]) * u2.get(&[row, col]);
                        }
                    }
                }
                acc
            });
            debug_assert_eq!(odot.shape(), [d2, h, w, d1]);
            kernel.axpy(c, &odot)?;
        }
        Ok(kernel)
    }

    /// Tensor form: direct convolution with [`SkConv::effective_kernel`].
    pub fn forward_elementwise(&self, input: &Tensor) -> Result<Tensor> {
        let g = &self.geometry;
        let mut out = conv_direct(input, &self.effective_kernel()?, g)?;
        if let Some(b) = &self.bias {
            let plane = g.positions();
            for (s, &bv) in b.data().iter().enumerate() {
                out.data_mut()[plane * s..plane * (s + 1)]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        Ok(out)
    }

    /// Closed-form gradients with `G = mat_3(g_out)`:
    /// `d mat4(S1_i) = I^T G U1_i^T / 2ell`, `d mat4(S2_i) = U2_i I^T G / 2ell`,
    /// `dI = sum_i (G U1_i^T mat4(S1_i)^T + G mat4(S2_i)^T U2_i) / 2ell`,
    /// folded back to tensors by `unmat_4` and `col2im`.
    pub fn backward(&self, input: &Tensor, g_out: &Tensor) -> Result<LayerGrads> {
        let g = &self.geometry;
        check_grad(g_out, g.positions() * g.out_channels, "sk-conv backward")?;
        let cols = im2col(input, g)?;
        let gm = g_out.clone().reshape(&[g.positions(), g.out_channels])?;
        let c = self.norm();
        let ell = self.ell();
        let itg = gemm(&cols, Op::T, &gm, Op::N)?;
        let mut gs1 = Vec::with_capacity(ell);
        let mut gs2 = Vec::with_capacity(ell);
        let mut gcols = Tensor::zeros(&[g.positions(), g.patch_len()]);
        for i in 0..ell {
            let m1 = self.s1[i].mat_n(4)?;
            let m2 = self.s2[i].mat_n(4)?;
            let d1 = gemm(&itg, Op::N, &self.u1_dense[i], Op::T)?.scaled(c);
            gs1.push(Tensor::unmat_n(&d1, &Self::s1_shape(g, self.k), 4)?);
            let d2 = gemm(&self.u2_dense[i], Op::N, &itg, Op::N)?.scaled(c);
            gs2.push(Tensor::unmat_n(&d2, &Self::s2_shape(g, self.k), 4)?);
            let gu = gemm(&gm, Op::N, &self.u1_dense[i], Op::T)?;
            gemm_into(c, &gu, Op::N, &m1, Op::T, 1.0, &mut gcols)?;
            let gs = gemm(&gm, Op::N, &m2, Op::T)?;
            gemm_into(c, &gs, Op::N, &self.u2_dense[i], Op::N, 1.0, &mut gcols)?;
        }
        let mut params = gs1;
        params.extend(gs2);
        if self.bias.is_some() {
            params.push(channel_sums(&gm));
        }
        Ok(LayerGrads {
            params,
            input: col2im(&gcols, g)?,
        })
    }

    /// `[S1_1..S1_ell, S2_1..S2_ell, bias?]`
    pub fn params(&self) -> Vec<&Tensor> {
        self.s1
            .iter()
            .chain(&self.s2)
            .chain(self.bias.as_ref())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.s1
            .iter_mut()
            .chain(self.s2.iter_mut())
            .chain(self.bias.as_mut())
            .collect()
    }

    /// `ell h w k (d1 + d2)` weights, plus `d1` biases when enabled.
    pub fn param_count(&self) -> ParamCount {
        let g = &self.geometry;
        ParamCount {
            weights: self.ell()
                * g.kernel_h
                * g.kernel_w
                * self.k
                * (g.in_channels + g.out_channels),
            biases: self.bias.as_ref().map_or(0, Tensor::len),
        }
    }
}

/// Sketches a dense kernel: `mat4(S1_i) = mat4(K) U1_i^T`,
/// `mat4(S2_i) = U2_i mat4(K)`.
pub fn sketch_from_dense_conv(
    kernel: &Tensor,
    geometry: ConvGeometry,
    bias: Option<&Tensor>,
    k: usize,
    ell: usize,
    seed: u64,
) -> Result<SkConv> {
    geometry.validate()?;
    let g = &geometry;
    if kernel.shape() != g.kernel_shape() {
        return Err(Error::shape(
            "sketch_from_dense_conv",
            format!(
                "kernel {:?} vs geometry {:?}",
                kernel.shape(),
                g.kernel_shape()
            ),
        ));
    }
    if k == 0 || ell == 0 {
        return Err(Error::InvalidArgument("k and ell must be >= 1".into()));
    }
    let hw = g.kernel_h * g.kernel_w;
    let kmat = kernel.mat_n(4)?;
    let seeds: Vec<_> = (0..ell).map(|i| pair_seeds(seed, i)).collect();
    let mut s1 = Vec::with_capacity(ell);
    let mut s2 = Vec::with_capacity(ell);
    for &(a, b) in &seeds {
        let u1 = SignMatrix::new(a, k, g.out_channels)?.materialize();
        let u2 = SignMatrix::new(b, k * hw, g.patch_len())?.materialize();
        let m1 = gemm(&kmat, Op::N, &u1, Op::T)?;
        s1.push(Tensor::unmat_n(&m1, &SkConv::s1_shape(g, k), 4)?);
        let m2 = gemm(&u2, Op::N, &kmat, Op::N)?;
        s2.push(Tensor::unmat_n(&m2, &SkConv::s2_shape(g, k), 4)?);
    }
    SkConv::from_parts(geometry, k, &seeds, s1, s2, bias.cloned())
}
