//! Dense tensors of rank 1 to 4 with mode-n products and flattenings.
//!
//! Storage is column-major in the generalized sense: mode 1 varies fastest.
//! With 1-based indices the flat position of `(i1, i2, i3, i4)` is
//! `i1 + d1(i2-1) + d1 d2(i3-1) + d1 d2 d3(i4-1)`. Element accessors in this
//! crate take 0-based indices; *modes* are numbered from 1 so that `mat_n(t, 4)`
//! reads the way it is usually written.
//!
//! `mat_n` puts mode `n` on the columns and all remaining modes on the rows,
//! earlier modes varying fastest. For the last mode this is a pure reshape,
//! which is what makes the im2col formulation of convolution line up with a
//! `d2 x h x w x d1` kernel tensor.

use crate::error::{Error, Result};
use crate::linalg::{self, Op};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(
            "tensor",
            format!("rank must be between 1 and {MAX_RANK}, got {}", shape.len()),
        ));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(
            "tensor",
            format!("extent of mode {} is zero in {shape:?}", pos + 1),
        ));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {len} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; use [`Tensor::new`] for fallible construction.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index, in
    /// storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for (m, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < shape[m] {
                    break;
                }
                *i = 0;
            }
        }
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(&[n], data).expect("empty vector")
    }

    /// Matrix from row slices (row-major literal, stored column-major).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        let mut data = vec![0.0; r * c];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                data[i + r * j] = v;
            }
        }
        Tensor::new(&[r, c], data)
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off += i * stride;
            stride *= d;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterprets the storage under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::shape(
                op,
                format!("expected a matrix, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = Tensor::zeros(&[c, r]);
        for j in 0..c {
            for i in 0..r {
                out.data[j + c * i] = self.data[i + r * j];
            }
        }
        Ok(out)
    }

    /// Dense matrix product `self * other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        linalg::gemm(self, Op::N, other, Op::N)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(mut self, alpha: f64) -> Tensor {
        self.scale(alpha);
        self
    }

    /// `self += alpha * other`; shapes must agree exactly.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "axpy",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode == 0 || mode > self.rank() {
            return Err(Error::Mode {
                mode,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Extents before, at and after `mode` (1-based), as `(left, d_n, right)`.
    fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode - 1].iter().product();
        let right = self.shape[mode..].iter().product();
        (left, self.shape[mode - 1], right)
    }

    /// Mode-n product `t x_n M` with `M` of shape `k x d_n`:
    /// `(t x_n M)[.., j, ..] = sum_i t[.., i, ..] M[j, i]`.
    pub fn mode_n_product(&self, m: &Tensor, mode: usize) -> Result<Tensor> {
        self.check_mode(mode)?;
        let (k, dn) = m.expect_matrix("mode_n_product")?;
        if dn != self.shape[mode - 1] {
            return Err(Error::shape(
                "mode_n_product",
                format!(
                    "matrix is {k}x{dn} but mode {mode} of {:?} has extent {}",
                    self.shape,
                    self.shape[mode - 1]
                ),
            ));
        }
        let (left, _, right) = self.split_at_mode(mode);
        let mut shape = self.shape.clone();
        shape[mode - 1] = k;
        let mut out = Tensor::zeros(&shape);
        // Each slab over the trailing modes is a column-major left x d_n
        // matrix; the product on that slab is slab * M^T.
        for r in 0..right {
            let src = &self.data[r * left * dn..(r + 1) * left * dn];
            let dst = &mut out.data[r * left * k..(r + 1) * left * k];
            linalg::gemm_raw(
                left,
                dn,
                k,
                1.0,
                linalg::View::col_major(src, left, dn),
                linalg::View::col_major(m.data(), k, dn).t(),
                0.0,
                dst,
            );
        }
        Ok(out)
    }

    /// Mode-n flattening: a `(prod_{m != n} d_m) x d_n` matrix whose row index
    /// runs over the other modes in ascending order, earliest fastest.
    pub fn mat_n(&self, mode: usize) -> Result<Tensor> {
        self.check_mode(mode)?;
        let (left, dn, right) = self.split_at_mode(mode);
        let rows = left * right;
        let mut data = vec![0.0; self.len()];
        for r in 0..right {
            for i in 0..dn {
                let src = &self.data[left * (i + dn * r)..left * (i + dn * r + 1)];
                let dst_start = left * r + rows * i;
                data[dst_start..dst_start + left].copy_from_slice(src);
            }
        }
        Tensor::new(&[rows, dn], data)
    }

    /// Inverse of [`Tensor::mat_n`]: folds a flattening back into `shape`.
    pub fn unmat_n(m: &Tensor, shape: &[usize], mode: usize) -> Result<Tensor> {
        let target = Tensor::zeros_checked(shape)?;
        target.check_mode(mode)?;
        let (rows, cols) = m.expect_matrix("unmat_n")?;
        let (left, dn, right) = target.split_at_mode(mode);
        if cols != dn || rows != left * right {
            return Err(Error::shape(
                "unmat_n",
                format!("a {rows}x{cols} matrix cannot fold into {shape:?} along mode {mode}"),
            ));
        }
        let mut out = target;
        for r in 0..right {
            for i in 0..dn {
                let src_start = left * r + rows * i;
                out.data[left * (i + dn * r)..left * (i + dn * r + 1)]
                    .copy_from_slice(&m.data[src_start..src_start + left]);
            }
        }
        Ok(out)
    }

    fn zeros_checked(shape: &[usize]) -> Result<Tensor> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight evaluation of the elementwise mode-n formula over 0-based
    /// multi-indices.
    fn mode_n_naive(t: &Tensor, m: &Tensor, mode: usize) -> Tensor {
        let mut shape = t.shape().to_vec();
        shape[mode - 1] = m.rows();
        Tensor::from_fn(&shape, |ix| {
            let mut src = ix.to_vec();
            (0..t.shape()[mode - 1])
                .map(|i| {
                    src[mode - 1] = i;
                    t.get(&src) * m.get(&[ix[mode - 1], i])
                })
                .sum()
        })
    }

    fn ramp(shape: &[usize]) -> Tensor {
        let mut k = 0.0;
        Tensor::from_fn(shape, |_| {
            k += 1.0;
            k * 0.37 - 2.0
        })
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[], vec![]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn identity_product_is_identity() {
        let t = ramp(&[2, 3]);
        let out = t.mode_n_product(&Tensor::identity(2), 1).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn small_mode1_product() {
        let t = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let m = Tensor::from_rows(&[&[1.0, 1.0]]).unwrap();
        let out = t.mode_n_product(&m, 1).unwrap();
        assert_eq!(out, Tensor::from_rows(&[&[4.0, 6.0]]).unwrap());
    }

    #[test]
    fn ones_mode4_product() {
        let t = Tensor::filled(&[2, 2, 2, 2], 1.0);
        let m = Tensor::from_rows(&[&[1.0, 1.0]]).unwrap();
        let out = t.mode_n_product(&m, 4).unwrap();
        assert_eq!(out, Tensor::filled(&[2, 2, 2, 1], 2.0));
    }

    #[test]
    fn matrix_products_match_left_and_right_multiplication() {
        let w = ramp(&[3, 5]);
        let m1 = ramp(&[2, 3]);
        let m2 = ramp(&[4, 5]);
        let a = w.mode_n_product(&m1, 1).unwrap();
        assert!(a.max_abs_diff(&m1.matmul(&w).unwrap()) < 1e-12);
        let b = w.mode_n_product(&m2, 2).unwrap();
        let expect = w.matmul(&m2.transpose().unwrap()).unwrap();
        assert!(b.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn mode_product_matches_naive_all_modes() {
        let t = ramp(&[2, 3, 4, 2]);
        for mode in 1..=4 {
            let m = ramp(&[3, t.shape()[mode - 1]]);
            let fast = t.mode_n_product(&m, mode).unwrap();
            let slow = mode_n_naive(&t, &m, mode);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "mode {mode}");
        }
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let t = ramp(&[2, 3]);
        let err = t.mode_n_product(&ramp(&[2, 2]), 2).unwrap_err();
        assert!(err.to_string().contains("extent 3"));
        assert!(t.mode_n_product(&ramp(&[2, 2]), 3).is_err());
        assert!(t.mode_n_product(&ramp(&[2, 2]), 0).is_err());
    }

    #[test]
    fn mat4_places_entry_per_index_formula() {
        let mut t = Tensor::zeros(&[2, 2, 2, 2]);
        // 1-based (1,1,1,2)
        t.set(&[0, 0, 0, 1], 7.0);
        let m = t.mat_n(4).unwrap();
        assert_eq!(m.shape(), &[8, 2]);
        assert_eq!(m.get(&[0, 1]), 7.0);
        assert_eq!(m.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn mat4_general_entry_mapping() {
        let t = ramp(&[2, 3, 4, 5]);
        let m = t.mat_n(4).unwrap();
        for (i1, i2, i3, i4) in [(1, 2, 3, 4), (0, 0, 0, 0), (1, 1, 2, 3)] {
            let row = i1 + 2 * i2 + 6 * i3;
            assert_eq!(m.get(&[row, i4]), t.get(&[i1, i2, i3, i4]));
        }
    }

    #[test]
    fn mat2_of_matrix_is_identity_map() {
        let w = ramp(&[3, 4]);
        assert_eq!(w.mat_n(2).unwrap(), w);
        assert_eq!(w.mat_n(1).unwrap(), w.transpose().unwrap());
    }

    #[test]
    fn mat4_of_column_tensor() {
        let t = Tensor::new(&[2, 3, 1, 1], (1..=6).map(f64::from).collect()).unwrap();
        let m = t.mat_n(4).unwrap();
        let col = Tensor::new(&[6, 1], (1..=6).map(f64::from).collect()).unwrap();
        assert_eq!(m, col);
        assert_eq!(Tensor::unmat_n(&col, &[2, 3, 1, 1], 4).unwrap(), t);
    }

    #[test]
    fn unmat_rejects_inconsistent_shape() {
        let m = Tensor::zeros(&[6, 2]);
        assert!(Tensor::unmat_n(&m, &[2, 3, 1, 1], 4).is_err());
        assert!(Tensor::unmat_n(&m, &[2, 3, 2], 4).is_err());
        assert!(Tensor::unmat_n(&m, &[3, 2, 2], 3).is_ok());
    }

    #[test]
    fn round_trips() {
        let t = ramp(&[3, 4, 2, 5]);
        for mode in 1..=4 {
            let back = Tensor::unmat_n(&t.mat_n(mode).unwrap(), t.shape(), mode).unwrap();
            assert_eq!(back, t);
        }
    }
}
