//! Mode-n sketches and the two matrix-product estimators built from them.
//!
//! For `W` of shape `d1 x d2`, the mode-1 sketch is `S1 = U1 W` and the
//! mode-2 sketch is `S2 = W U2^T`. Both `U1^T S1 M` and `S2 U2 M` are unbiased
//! estimates of `W M` because `E[U^T U] = I`.

mod sign;
pub mod verify;

pub use sign::{signs_from_bits, SignMatrix};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sketch {
    mode: usize,
    signs: SignMatrix,
    data: Tensor,
}

impl Sketch {
    /// `S_n = t x_n U` with `U` materialized from `signs`.
    pub fn new(t: &Tensor, signs: SignMatrix, mode: usize) -> Result<Self> {
        if mode == 0 || mode > t.rank() {
            return Err(Error::Mode {
                mode,
                rank: t.rank(),
            });
        }
        if signs.cols() != t.shape()[mode - 1] {
            return Err(Error::shape(
                "sketch",
                format!(
                    "sign matrix has {} columns but mode {mode} of {:?} has extent {}",
                    signs.cols(),
                    t.shape(),
                    t.shape()[mode - 1]
                ),
            ));
        }
        let data = t.mode_n_product(&signs.materialize(), mode)?;
        Ok(Sketch { mode, signs, data })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn signs(&self) -> &SignMatrix {
        &self.signs
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    /// `U1^T S1 M`; requires a mode-1 sketch of a matrix.
    pub fn estimate_left(&self, m: &Tensor) -> Result<Tensor> {
        if self.mode != 1 || self.data.rank() != 2 {
            return Err(Error::shape(
                "estimate_left",
                "needs the mode-1 sketch of a matrix",
            ));
        }
        left_estimate(&self.signs.materialize(), &self.data, m)
    }

    /// `S2 U2 M`; requires a mode-2 sketch of a matrix.
    pub fn estimate_right(&self, m: &Tensor) -> Result<Tensor> {
        if self.mode != 2 || self.data.rank() != 2 {
            return Err(Error::shape(
                "estimate_right",
                "needs the mode-2 sketch of a matrix",
            ));
        }
        right_estimate(&self.data, &self.signs.materialize(), m)
    }
}

pub fn sketch(t: &Tensor, signs: SignMatrix, mode: usize) -> Result<Sketch> {
    Sketch::new(t, signs, mode)
}

/// `U1^T (S1 M)` for a dense `k x d1` sign matrix `u1` and `k x d2` sketch `s1`.
pub fn left_estimate(u1: &Tensor, s1: &Tensor, m: &Tensor) -> Result<Tensor> {
    let sm = gemm(s1, Op::N, m, Op::N)?;
    gemm(u1, Op::T, &sm, Op::N)
}

/// `S2 (U2 M)` for a dense `d1 x k` sketch `s2` and `k x d2` sign matrix `u2`.
pub fn right_estimate(s2: &Tensor, u2: &Tensor, m: &Tensor) -> Result<Tensor> {
    let um = gemm(u2, Op::N, m, Op::N)?;
    gemm(s2, Op::N, &um, Op::N)
}
