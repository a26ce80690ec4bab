//! Column-major GEMM on top of `matrixmultiply`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    pub(crate) fn col_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        View {
            data,
            rows,
            cols,
            rs: 1,
            cs: rows as isize,
        }
    }

    pub(crate) fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn of(t: &'a Tensor, op: Op) -> Self {
        let v = View::col_major(t.data(), t.rows(), t.cols());
        match op {
            Op::N => v,
            Op::T => v.t(),
        }
    }
}

/// `c = alpha * a * b + beta * c` where `a` is `m x k`, `b` is `k x n` and
/// `c` is a column-major `m x n` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!((a.rows, a.cols), (m, k));
    assert_eq!((b.rows, b.cols), (k, n));
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the views and `c` were bounds-checked against (m, k, n) above and
    // every stride addresses inside its backing slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

fn dims(t: &Tensor, op: Op) -> Result<(usize, usize)> {
    if t.rank() > 2 {
        return Err(Error::shape(
            "gemm",
            format!("operand of shape {:?} is not a matrix", t.shape()),
        ));
    }
    Ok(match op {
        Op::N => (t.rows(), t.cols()),
        Op::T => (t.cols(), t.rows()),
    })
}

/// `op(a) * op(b)`; rank-1 operands are treated as column vectors.
pub fn gemm(a: &Tensor, ta: Op, b: &Tensor, tb: Op) -> Result<Tensor> {
    let (m, k) = dims(a, ta)?;
    let (k2, n) = dims(b, tb)?;
    if k != k2 {
        return Err(Error::shape(
            "gemm",
            format!(
                "inner dimensions differ: {:?}{} * {:?}{}",
                a.shape(),
                if ta == Op::T { "^T" } else { "" },
                b.shape(),
                if tb == Op::T { "^T" } else { "" }
            ),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm_raw(
        m,
        k,
        n,
        1.0,
        View::of(a, ta),
        View::of(b, tb),
        0.0,
        out.data_mut(),
    );
    Ok(out)
}

/// `c = alpha * op(a) * op(b) + beta * c` for an existing matrix `c`.
pub fn gemm_into(
    alpha: f64,
    a: &Tensor,
    ta: Op,
    b: &Tensor,
    tb: Op,
    beta: f64,
    c: &mut Tensor,
) -> Result<()> {
    let (m, k) = dims(a, ta)?;
    let (k2, n) = dims(b, tb)?;
    if k != k2 || c.len() != m * n || c.rows() != m {
        return Err(Error::shape(
            "gemm_into",
            format!(
                "{:?} x {:?} does not fit output {:?}",
                a.shape(),
                b.shape(),
                c.shape()
            ),
        ));
    }
    gemm_raw(
        m,
        k,
        n,
        alpha,
        View::of(a, ta),
        View::of(b, tb),
        beta,
        c.data_mut(),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(&[a.rows(), b.cols()], |ix| {
            (0..a.cols())
                .map(|p| a.get(&[ix[0], p]) * b.get(&[p, ix[1]]))
                .sum()
        })
    }

    #[test]
    fn transposed_operands() {
        let a = Tensor::from_fn(&[3, 4], |ix| (ix[0] * 4 + ix[1]) as f64 - 5.0);
        let b = Tensor::from_fn(&[4, 2], |ix| (ix[0] as f64).sin() + ix[1] as f64);
        let ab = naive(&a, &b);
        assert!(gemm(&a, Op::N, &b, Op::N).unwrap().max_abs_diff(&ab) < 1e-12);
        let at = a.transpose().unwrap();
        let bt = b.transpose().unwrap();
        assert!(gemm(&at, Op::T, &bt, Op::T).unwrap().max_abs_diff(&ab) < 1e-12);
        assert!(gemm(&a, Op::N, &b, Op::T).is_err());
    }

    #[test]
    fn accumulate_into() {
        let a = Tensor::identity(2);
        let mut c = Tensor::filled(&[2, 2], 1.0);
        gemm_into(2.0, &a, Op::N, &a, Op::T, 1.0, &mut c).unwrap();
        assert_eq!(c.data(), &[3.0, 1.0, 1.0, 3.0]);
    }
}
