//! Sketched fully connected layer.
//!
//! Parameters are `ell` pairs `(S1_i, S2_i)` with `S1_i: k x d2`,
//! `S2_i: d1 x k`, frozen sign matrices `U1_i: k x d1`, `U2_i: k x d2`, and a
//! bias. The output is
//!
//! ```text
//! a = 1/(2 ell) sum_i U1_i^T S1_i h + 1/(2 ell) sum_i S2_i U2_i h + b
//! ```
//!
//! evaluated right to left, so no `d1 x d2` matrix is ever formed.

use super::{check_grad, flat_input, glorot_limit, uniform_tensor, LayerGrads, ParamCount};
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_into, Op};
use crate::rng::{derive_seed, stream_rng};
use crate::sketch::SignMatrix;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SkFc {
    d1: usize,
    d2: usize,
    k: usize,
    s1: Vec<Tensor>,
    s2: Vec<Tensor>,
    bias: Tensor,
    u1: Vec<SignMatrix>,
    u2: Vec<SignMatrix>,
    u1_dense: Vec<Tensor>,
    u2_dense: Vec<Tensor>,
}

/// Seeds of the `i`-th sign-matrix pair drawn from a layer seed.
pub(crate) fn pair_seeds(seed: u64, i: usize) -> (u64, u64) {
    (
        derive_seed(seed, 2 * i as u64),
        derive_seed(seed, 2 * i as u64 + 1),
    )
}

const INIT_STREAM: u64 = 0x5EED_1417;

impl SkFc {
    /// Assembles a layer from explicit parts. `seeds[i]` generates
    /// `(U1_i, U2_i)`.
    pub fn from_parts(
        d1: usize,
        d2: usize,
        k: usize,
        seeds: &[(u64, u64)],
        s1: Vec<Tensor>,
        s2: Vec<Tensor>,
        bias: Tensor,
    ) -> Result<Self> {
        let ell = seeds.len();
        if ell == 0 || k == 0 {
            return Err(Error::InvalidArgument(
                "SK-FC needs k >= 1 and ell >= 1".into(),
            ));
        }
        if s1.len() != ell || s2.len() != ell {
            return Err(Error::shape("SkFc", "need one S1 and one S2 per seed pair"));
        }
        if s1.iter().any(|s| s.shape() != [k, d2])
            || s2.iter().any(|s| s.shape() != [d1, k])
            || bias.shape() != [d1]
        {
            return Err(Error::shape(
                "SkFc",
                format!("expected S1 {k}x{d2}, S2 {d1}x{k}, bias {d1}"),
            ));
        }
        let u1 = seeds
            .iter()
            .map(|&(a, _)| SignMatrix::new(a, k, d1))
            .collect::<Result<Vec<_>>>()?;
        let u2 = seeds
            .iter()
            .map(|&(_, b)| SignMatrix::new(b, k, d2))
            .collect::<Result<Vec<_>>>()?;
        Ok(SkFc {
            d1,
            d2,
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

    /// Fresh layer for training from scratch. Sketch entries are uniform in
    /// `+-sqrt(2 ell) * sqrt(6 / (d1 + d2))`: each of the `2 ell` terms has
    /// effective weights with the variance of its sketch entries, and the
    /// average divides that by `2 ell`, so the product matches a
    /// Glorot-initialized dense layer.
    pub fn init(d1: usize, d2: usize, k: usize, ell: usize, seed: u64) -> Result<Self> {
        SkFc::init_seeded(d1, d2, k, ell, seed, seed)
    }

    /// [`SkFc::init`] with separate seeds for the sketch values and for the
    /// sign matrices.
    pub fn init_seeded(
        d1: usize,
        d2: usize,
        k: usize,
        ell: usize,
        weight_seed: u64,
        sign_seed: u64,
    ) -> Result<Self> {
        let seeds: Vec<_> = (0..ell).map(|i| pair_seeds(sign_seed, i)).collect();
        let limit = (2.0 * ell as f64).sqrt() * glorot_limit(d2, d1);
        let mut rng = stream_rng(weight_seed, INIT_STREAM);
        let s1 = (0..ell)
            .map(|_| uniform_tensor(&[k, d2], limit, &mut rng))
            .collect();
        let s2 = (0..ell)
            .map(|_| uniform_tensor(&[d1, k], limit, &mut rng))
            .collect();
        SkFc::from_parts(d1, d2, k, &seeds, s1, s2, Tensor::zeros(&[d1]))
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
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

    pub fn bias(&self) -> &Tensor {
        &self.bias
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

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let h = flat_input(input, self.d2, "sk-fc forward")?;
        let c = self.norm();
        let mut a = self.bias.clone().reshape(&[self.d1, 1])?;
        for i in 0..self.ell() {
            let s1h = gemm(&self.s1[i], Op::N, &h, Op::N)?;
            gemm_into(c, &self.u1_dense[i], Op::T, &s1h, Op::N, 1.0, &mut a)?;
            let u2h = gemm(&self.u2_dense[i], Op::N, &h, Op::N)?;
            gemm_into(c, &self.s2[i], Op::N, &u2h, Op::N, 1.0, &mut a)?;
        }
        a.reshape(&[self.d1])
    }

    /// Closed-form gradients:
    /// `dS1_i = U1_i g h^T / 2ell`, `dS2_i = g h^T U2_i^T / 2ell`,
    /// `dh = sum_i (S1_i^T U1_i g + U2_i^T S2_i^T g) / 2ell`, `db = g`.
    pub fn backward(&self, input: &Tensor, g: &Tensor) -> Result<LayerGrads> {
        let h = flat_input(input, self.d2, "sk-fc backward")?;
        check_grad(g, self.d1, "sk-fc backward")?;
        let g = g.clone().reshape(&[self.d1])?;
        let c = self.norm();
        let ell = self.ell();
        let mut gs1 = Vec::with_capacity(ell);
        let mut gs2 = Vec::with_capacity(ell);
        let mut gh = Tensor::zeros(&[self.d2, 1]);
        for i in 0..ell {
            let u1g = gemm(&self.u1_dense[i], Op::N, &g, Op::N)?;
            gs1.push(gemm(&u1g, Op::N, &h, Op::T)?.scaled(c));
            let u2h = gemm(&self.u2_dense[i], Op::N, &h, Op::N)?;
            gs2.push(gemm(&g, Op::N, &u2h, Op::T)?.scaled(c));
            gemm_into(c, &self.s1[i], Op::T, &u1g, Op::N, 1.0, &mut gh)?;
            let s2g = gemm(&self.s2[i], Op::T, &g, Op::N)?;
            gemm_into(c, &self.u2_dense[i], Op::T, &s2g, Op::N, 1.0, &mut gh)?;
        }
        let mut params = gs1;
        params.extend(gs2);
        params.push(g);
        Ok(LayerGrads {
            params,
            input: gh.reshape(input.shape())?,
        })
    }

    /// `[S1_1..S1_ell, S2_1..S2_ell, bias]`
    pub fn params(&self) -> Vec<&Tensor> {
        self.s1.iter().chain(&self.s2).chain([&self.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.s1
            .iter_mut()
            .chain(self.s2.iter_mut())
            .chain([&mut self.bias])
            .collect()
    }

    /// `ell k (d1 + d2)` weights plus `d1` biases.
    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            weights: self.ell() * self.k * (self.d1 + self.d2),
            biases: self.d1,
        }
    }
}

/// Sketches a dense `W` (`d1 x d2`): `S1_i = U1_i W`, `S2_i = W U2_i^T`, with
/// pair `i` seeded from `derive_seed(seed, 2i)` and `derive_seed(seed, 2i+1)`.
pub fn sketch_from_dense_fc(
    w: &Tensor,
    bias: &Tensor,
    k: usize,
    ell: usize,
    seed: u64,
) -> Result<SkFc> {
    let (d1, d2) = w.expect_matrix("sketch_from_dense_fc")?;
    if k == 0 || ell == 0 {
        return Err(Error::InvalidArgument("k and ell must be >= 1".into()));
    }
    let seeds: Vec<_> = (0..ell).map(|i| pair_seeds(seed, i)).collect();
    let mut s1 = Vec::with_capacity(ell);
    let mut s2 = Vec::with_capacity(ell);
    for &(a, b) in &seeds {
        s1.push(w.mode_n_product(&SignMatrix::new(a, k, d1)?.materialize(), 1)?);
        s2.push(w.mode_n_product(&SignMatrix::new(b, k, d2)?.materialize(), 2)?);
    }
    SkFc::from_parts(d1, d2, k, &seeds, s1, s2, bias.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(shape: &[usize], phase: f64) -> Tensor {
        let mut k = 0.0;
        Tensor::from_fn(shape, |_| {
            k += 1.0;
            (k * 0.83 + phase).sin()
        })
    }

    #[test]
    fn zero_sketches_return_bias() {
        let b = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let l = SkFc::from_parts(
            3,
            4,
            2,
            &[(1, 2)],
            vec![Tensor::zeros(&[2, 4])],
            vec![Tensor::zeros(&[3, 2])],
            b.clone(),
        )
        .unwrap();
        assert_eq!(l.forward(&wave(&[4], 0.0)).unwrap(), b);
    }

    #[test]
    fn forward_matches_hand_chained_products() {
        let l = SkFc::init(3, 3, 2, 2, 17).unwrap();
        let h = Tensor::vector(vec![1.0, 0.0, 0.0]);
        let out = l.forward(&h).unwrap();
        // Independent evaluation: dense effective matrix, then W e1 = column 0.
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..2 {
            let u1 = l.u1()[i].materialize();
            let u2 = l.u2()[i].materialize();
            w.axpy(0.25, &u1.transpose().unwrap().matmul(&l.s1()[i]).unwrap())
                .unwrap();
            w.axpy(0.25, &l.s2()[i].matmul(&u2).unwrap()).unwrap();
        }
        for r in 0..3 {
            assert!((out.get(&[r]) - w.get(&[r, 0])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_in_zero_gradient_out() {
        let l = SkFc::init(4, 5, 2, 2, 3).unwrap();
        let gr = l.backward(&wave(&[5], 1.0), &Tensor::zeros(&[4])).unwrap();
        assert!(gr.params.iter().all(|p| p.max_abs() == 0.0));
        assert_eq!(gr.input.max_abs(), 0.0);
    }

    #[test]
    fn dense_equation_for_s2_gradient() {
        // ell = 1, k = d1, h = e1: dS2 = g (U2 e1)^T / 2 = g u2_col0^T / 2.
        let l = SkFc::init(3, 4, 3, 1, 5).unwrap();
        let mut h = Tensor::zeros(&[4]);
        h.set(&[0], 1.0);
        let g = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let gr = l.backward(&h, &g).unwrap();
        let u2 = l.u2()[0].materialize();
        let expect = Tensor::from_fn(&[3, 3], |ix| g.get(&[ix[0]]) * u2.get(&[ix[1], 0]) / 2.0);
        assert!(gr.params[1].max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn parameter_count_formula() {
        let l = SkFc::init(250, 480, 5, 2, 0).unwrap();
        assert_eq!(
            l.param_count(),
            ParamCount {
                weights: 7300,
                biases: 250
            }
        );
        let stored: usize = l.s1().iter().chain(l.s2()).map(Tensor::len).sum();
        assert_eq!(stored, 7300);
    }

    #[test]
    fn sketch_of_zero_is_zero() {
        let l =
            sketch_from_dense_fc(&Tensor::zeros(&[3, 4]), &Tensor::zeros(&[3]), 2, 2, 9).unwrap();
        assert!(l.params().iter().all(|p| p.max_abs() == 0.0));
    }

    #[test]
    fn sketch_from_dense_small_case() {
        let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let l = sketch_from_dense_fc(&w, &Tensor::zeros(&[2]), 1, 1, 21).unwrap();
        let u1 = l.u1()[0].materialize();
        let u2 = l.u2()[0].materialize();
        // k = 1: S1 = [z1 + 3 z2, 2 z1 + 4 z2], S2 = W u2^T
        let (z1, z2) = (u1.get(&[0, 0]), u1.get(&[0, 1]));
        assert_eq!(l.s1()[0].data(), &[z1 + 3.0 * z2, 2.0 * z1 + 4.0 * z2]);
        let (y1, y2) = (u2.get(&[0, 0]), u2.get(&[0, 1]));
        assert_eq!(l.s2()[0].data(), &[y1 + 2.0 * y2, 3.0 * y1 + 4.0 * y2]);
    }

    #[test]
    fn input_shape_mismatch() {
        let l = SkFc::init(2, 3, 1, 1, 0).unwrap();
        assert!(l.forward(&Tensor::zeros(&[4])).is_err());
        assert!(l
            .backward(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]))
            .is_err());
    }
}
