//! Convolution as a matrix product.
//!
//! Inputs are `h1 x w1 x d2` tensors, kernels `d2 x h x w x d1`, outputs
//! `h2 x w2 x d1`. [`im2col`] builds the `h2 w2 x d2 h w` patch matrix whose
//! row `x + h2 y` holds the window at output position `(x, y)` and whose
//! column `c + d2 i + d2 h j` holds channel `c` at kernel offset `(i, j)`.
//! That column order is the row order of `mat_4(K)`, so
//! `mat_3(conv(I, K)) = im2col(I) * mat_4(K)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(Error::Geometry(format!(
            "kernel {axis} {kernel} exceeds padded input {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::Geometry(format!(
            "({input} + 2*{pad} - {kernel}) is not divisible by stride {stride} along {axis}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_h: usize,
        in_w: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let g = ConvGeometry {
            in_h,
            in_w,
            in_channels,
            kernel_h,
            kernel_w,
            out_channels,
            stride,
            pad,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if [
            self.in_h,
            self.in_w,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
            self.out_channels,
            self.stride,
        ]
        .contains(&0)
        {
            return Err(Error::Geometry(format!("zero extent in {self:?}")));
        }
        out_extent(self.in_h, self.kernel_h, self.stride, self.pad, "height")?;
        out_extent(self.in_w, self.kernel_w, self.stride, self.pad, "width")?;
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_h, self.in_w, self.in_channels]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_h(), self.out_w(), self.out_channels]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
            self.out_channels,
        ]
    }

    /// `d2 h w`, the patch length.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Input coordinate under output `(x, y)` at kernel offset `(i, j)`, or
    /// `None` inside the zero padding.
    #[inline]
    fn source(&self, x: usize, y: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let r = (x * self.stride + i).checked_sub(self.pad)?;
        let c = (y * self.stride + j).checked_sub(self.pad)?;
        (r < self.in_h && c < self.in_w).then_some((r, c))
    }

    fn check(&self, t: &Tensor, expect: &[usize], what: &'static str) -> Result<()> {
        if t.shape() != expect {
            return Err(Error::shape(
                what,
                format!("expected {expect:?}, got {:?}", t.shape()),
            ));
        }
        Ok(())
    }
}

/// Reference convolution by direct summation:
/// `O[x,y,s] = sum_{i,j,c} K[c,i,j,s] I[x*stride+i-pad, y*stride+j-pad, c]`.
pub fn conv_direct(input: &Tensor, kernel: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    g.validate()?;
    g.check(input, &g.input_shape(), "conv_direct input")?;
    g.check(kernel, &g.kernel_shape(), "conv_direct kernel")?;
    let mut out = Tensor::zeros(&g.output_shape());
    for s in 0..g.out_channels {
        for y in 0..g.out_w() {
            for x in 0..g.out_h() {
                let mut acc = 0.0;
                for j in 0..g.kernel_w {
                    for i in 0..g.kernel_h {
                        if let Some((r, c)) = g.source(x, y, i, j) {
                            for ch in 0..g.in_channels {
                                acc += kernel.get(&[ch, i, j, s]) * input.get(&[r, c, ch]);
                            }
                        }
                    }
                }
                out.set(&[x, y, s], acc);
            }
        }
    }
    Ok(out)
}

/// Patch matrix of shape `h2 w2 x d2 h w`; padded positions are zero.
pub fn im2col(input: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    g.validate()?;
    g.check(input, &g.input_shape(), "im2col")?;
    let (h2, w2) = (g.out_h(), g.out_w());
    let rows = h2 * w2;
    let (d2, hk) = (g.in_channels, g.kernel_h);
    let mut out = Tensor::zeros(&[rows, g.patch_len()]);
    let src = input.data();
    let plane = g.in_h * g.in_w;
    let dst = out.data_mut();
    for j in 0..g.kernel_w {
        for i in 0..hk {
            for y in 0..w2 {
                for x in 0..h2 {
                    if let Some((r, c)) = g.source(x, y, i, j) {
                        let row = x + h2 * y;
                        let base = r + g.in_h * c;
                        for ch in 0..d2 {
                            let col = ch + d2 * i + d2 * hk * j;
                            dst[row + rows * col] = src[base + plane * ch];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`im2col`]: scatter-adds each patch entry back onto the input
/// position it was read from.
pub fn col2im(cols: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    g.validate()?;
    let (h2, w2) = (g.out_h(), g.out_w());
    let rows = h2 * w2;
    g.check(cols, &[rows, g.patch_len()], "col2im")?;
    let (d2, hk) = (g.in_channels, g.kernel_h);
    let mut out = Tensor::zeros(&g.input_shape());
    let plane = g.in_h * g.in_w;
    let src = cols.data();
    let dst = out.data_mut();
    for j in 0..g.kernel_w {
        for i in 0..hk {
            for y in 0..w2 {
                for x in 0..h2 {
                    if let Some((r, c)) = g.source(x, y, i, j) {
                        let row = x + h2 * y;
                        let base = r + g.in_h * c;
                        for ch in 0..d2 {
                            let col = ch + d2 * i + d2 * hk * j;
                            dst[base + plane * ch] += src[row + rows * col];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
