//! Exhaustive and Monte Carlo checks of the sketch estimators.
//!
//! Exhaustive checks enumerate every sign pattern of `U` (feasible while
//! `k * d <= 16`), so the mean of an estimator is an exact expectation up to
//! rounding. Monte Carlo checks draw a fresh `U` per trial from
//! `derive_seed(seed, trial)` and keep `W`, `M` fixed.

use rayon::prelude::*;
use serde::Serialize;

use super::{left_estimate, right_estimate, signs_from_bits, SignMatrix, Sketch};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Largest `k * d` for which every sign pattern is enumerated.
pub const MAX_ENUMERATED_ENTRIES: usize = 16;

/// Minimum Monte Carlo trial count accepted by [`verify_variance`].
pub const MIN_TRIALS: usize = 1000;

const CHUNK: u64 = 1024;

/// Multiplicative slack `1 + 5 / sqrt(trials)` applied to analytic bounds.
pub fn mc_slack(trials: usize) -> f64 {
    1.0 + 5.0 / (trials as f64).sqrt()
}

/// Reference product by explicit triple loop.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows());
    Tensor::from_fn(&[a.rows(), b.cols()], |ix| {
        (0..a.cols())
            .map(|p| a.get(&[ix[0], p]) * b.get(&[p, ix[1]]))
            .sum()
    })
}

/// Sums `f(bits)` over `bits in 0..count` in a fixed order, independent of
/// the thread pool.
fn ordered_sum<F>(count: u64, shape: &[usize], f: F) -> Result<Tensor>
where
    F: Fn(u64) -> Result<Tensor> + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<Tensor> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Tensor::zeros(shape);
            for bits in c * CHUNK..((c + 1) * CHUNK).min(count) {
                acc.axpy(1.0, &f(bits)?)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Tensor::zeros(shape);
    for p in &partials {
        total.axpy(1.0, p)?;
    }
    Ok(total)
}

fn check_enumerable(k: usize, d: usize) -> Result<u64> {
    if k == 0 || k * d > MAX_ENUMERATED_ENTRIES {
        return Err(Error::InvalidArgument(format!(
            "cannot enumerate a {k}x{d} sign matrix (limit {MAX_ENUMERATED_ENTRIES} entries)"
        )));
    }
    Ok(1u64 << (k * d))
}

/// Exact `E[U^T U]` over all `k x d` sign patterns.
pub fn exact_gram_mean(k: usize, d: usize) -> Result<Tensor> {
    let count = check_enumerable(k, d)?;
    let sum = ordered_sum(count, &[d, d], |bits| {
        let u = signs_from_bits(k, d, bits);
        Ok(naive_matmul(&u.transpose()?, &u))
    })?;
    Ok(sum.scaled(1.0 / count as f64))
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactReport {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub k: usize,
    pub left_patterns: u64,
    pub right_patterns: u64,
    /// max |mean(U1^T S1 M) - WM|
    pub left_max_dev: f64,
    /// max |mean(S2 U2 M) - WM|
    pub right_max_dev: f64,
    /// Largest gap between the enumeration kernel and the library estimators
    /// on spot-checked patterns.
    pub library_max_dev: f64,
    /// max(1, max |WM|); deviations are judged relative to this.
    pub scale: f64,
    pub pass: bool,
}

/// Enumerates all sign matrices for both estimators and compares the exact
/// means with `W M`. Passes when both deviations are within `tol * scale`.
pub fn exact_unbiasedness(w: &Tensor, m: &Tensor, k: usize, tol: f64) -> Result<ExactReport> {
    let (d1, d2) = w.expect_matrix("exact_unbiasedness")?;
    let (d2m, d3) = m.expect_matrix("exact_unbiasedness")?;
    if d2 != d2m {
        return Err(Error::shape(
            "exact_unbiasedness",
            format!("W is {d1}x{d2}, M is {d2m}x{d3}"),
        ));
    }
    let left_count = check_enumerable(k, d1)?;
    let right_count = check_enumerable(k, d2)?;
    let target = naive_matmul(w, m);
    let len = d1 * d3;

    let left_sum = ordered_accumulate(
        left_count,
        len,
        || PatternKernel::new(w, m, k),
        |kern, bits, acc| kern.left(bits, acc),
    );
    let right_sum = ordered_accumulate(
        right_count,
        len,
        || PatternKernel::new(w, m, k),
        |kern, bits, acc| kern.right(bits, acc),
    );
    let mean_dev = |sum: Vec<f64>, count: u64| {
        sum.iter()
            .zip(target.data())
            .map(|(s, t)| (s / count as f64 - t).abs())
            .fold(0.0, f64::max)
    };
    let left_max_dev = mean_dev(left_sum, left_count);
    let right_max_dev = mean_dev(right_sum, right_count);

    // The enumeration kernel must reproduce the library estimators.
    let mut kern = PatternKernel::new(w, m, k);
    let mut library_max_dev: f64 = 0.0;
    for (count, d, is_left) in [(left_count, d1, true), (right_count, d2, false)] {
        for bits in [0, 1, count / 3, count - 1] {
            let u = signs_from_bits(k, d, bits);
            let mut fast = vec![0.0; len];
            let lib = if is_left {
                kern.left(bits, &mut fast);
                left_estimate(&u, &w.mode_n_product(&u, 1)?, m)?
            } else {
                kern.right(bits, &mut fast);
                right_estimate(&w.mode_n_product(&u, 2)?, &u, m)?
            };
            let dev = lib
                .data()
                .iter()
                .zip(&fast)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            library_max_dev = library_max_dev.max(dev);
        }
    }

    let scale = target.max_abs().max(1.0);
    Ok(ExactReport {
        d1,
        d2,
        d3,
        k,
        left_patterns: left_count,
        right_patterns: right_count,
        left_max_dev,
        right_max_dev,
        library_max_dev,
        scale,
        pass: left_max_dev <= tol * scale
            && right_max_dev <= tol * scale
            && library_max_dev <= tol * scale,
    })
}

/// Like [`ordered_sum`], for callers that add into a flat accumulator with
/// per-chunk scratch state.
fn ordered_accumulate<S, I, F>(count: u64, len: usize, init: I, f: F) -> Vec<f64>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, u64, &mut [f64]) + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut state = init();
            let mut acc = vec![0.0; len];
            for bits in c * CHUNK..((c + 1) * CHUNK).min(count) {
                f(&mut state, bits, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in &partials {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

/// Evaluates `U1^T (U1 W) M` and `(W U2^T)(U2 M)` for one enumerated sign
/// pattern with plain loops over reusable buffers. Same association order as
/// [`left_estimate`] and [`right_estimate`].
struct PatternKernel<'a> {
    w: &'a [f64],
    m: &'a [f64],
    d1: usize,
    d2: usize,
    d3: usize,
    k: usize,
    scale: f64,
    u: Vec<f64>,
    sk: Vec<f64>,
    prod: Vec<f64>,
}

impl<'a> PatternKernel<'a> {
    fn new(w: &'a Tensor, m: &'a Tensor, k: usize) -> Self {
        let (d1, d2, d3) = (w.rows(), w.cols(), m.cols());
        let big = d1.max(d2);
        PatternKernel {
            w: w.data(),
            m: m.data(),
            d1,
            d2,
            d3,
            k,
            scale: 1.0 / (k as f64).sqrt(),
            u: vec![0.0; k * big],
            sk: vec![0.0; k * big],
            prod: vec![0.0; k * d3],
        }
    }

    fn fill_signs(&mut self, d: usize, bits: u64) {
        for p in 0..self.k * d {
            self.u[p] = if (bits >> p) & 1 == 1 {
                -self.scale
            } else {
                self.scale
            };
        }
    }

    /// Adds `U1^T (U1 W) M` (`d1 x d3`) into `acc`.
    fn left(&mut self, bits: u64, acc: &mut [f64]) {
        let (d1, d2, d3, k) = (self.d1, self.d2, self.d3, self.k);
        self.fill_signs(d1, bits);
        // S1 = U1 W, k x d2
        for j in 0..d2 {
            for r in 0..k {
                self.sk[r + k * j] = (0..d1)
                    .map(|c| self.u[r + k * c] * self.w[c + d1 * j])
                    .sum();
            }
        }
        // S1 M, k x d3
        for l in 0..d3 {
            for r in 0..k {
                self.prod[r + k * l] = (0..d2)
                    .map(|j| self.sk[r + k * j] * self.m[j + d2 * l])
                    .sum();
            }
        }
        for l in 0..d3 {
            for c in 0..d1 {
                acc[c + d1 * l] += (0..k)
                    .map(|r| self.u[r + k * c] * self.prod[r + k * l])
                    .sum::<f64>();
            }
        }
    }

    /// Adds `(W U2^T)(U2 M)` (`d1 x d3`) into `acc`.
    fn right(&mut self, bits: u64, acc: &mut [f64]) {
        let (d1, d2, d3, k) = (self.d1, self.d2, self.d3, self.k);
        self.fill_signs(d2, bits);
        // S2 = W U2^T, d1 x k
        for r in 0..k {
            for i in 0..d1 {
                self.sk[i + d1 * r] = (0..d2)
                    .map(|j| self.w[i + d1 * j] * self.u[r + k * j])
                    .sum();
            }
        }
        // U2 M, k x d3
        for l in 0..d3 {
            for r in 0..k {
                self.prod[r + k * l] = (0..d2)
                    .map(|j| self.u[r + k * j] * self.m[j + d2 * l])
                    .sum();
            }
        }
        for l in 0..d3 {
            for i in 0..d1 {
                acc[i + d1 * l] += (0..k)
                    .map(|r| self.sk[i + d1 * r] * self.prod[r + k * l])
                    .sum::<f64>();
            }
        }
    }
}

pub fn exact_mse(w: &Tensor, m: &Tensor, k: usize) -> Result<(f64, f64)> {
    let (d1, d2) = w.expect_matrix("exact_mse")?;
    let left_count = check_enumerable(k, d1)?;
    let right_count = check_enumerable(k, d2)?;
    let target = naive_matmul(w, m);
    let err = |est: Tensor| -> Result<Tensor> {
        let mut diff = est;
        diff.axpy(-1.0, &target)?;
        Ok(Tensor::vector(vec![diff.frobenius_sq()]))
    };
    let left = ordered_sum(left_count, &[1], |bits| {
        let u1 = signs_from_bits(k, d1, bits);
        err(left_estimate(&u1, &w.mode_n_product(&u1, 1)?, m)?)
    })?;
    let right = ordered_sum(right_count, &[1], |bits| {
        let u2 = signs_from_bits(k, d2, bits);
        err(right_estimate(&w.mode_n_product(&u2, 2)?, &u2, m)?)
    })?;
    Ok((
        left.data()[0] / left_count as f64,
        right.data()[0] / right_count as f64,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorCheck {
    pub empirical_mse: f64,
    /// Standard error of `empirical_mse`.
    pub stderr: f64,
    pub bound: f64,
    /// `bound * (1 + 5 / sqrt(trials))`
    pub threshold: f64,
    pub pass: bool,
}

impl EstimatorCheck {
    pub fn from_errors(errors: &[f64], bound: f64) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let threshold = bound * mc_slack(errors.len());
        EstimatorCheck {
            empirical_mse: mean,
            stderr: (var / n).sqrt(),
            bound,
            threshold,
            pass: mean <= threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceReport {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    /// `U1^T S1 M`, bound `2 d1 |WM|_F^2 / k`
    pub left: EstimatorCheck,
    /// `S2 U2 M`, bound `2 |W|_F^2 |M|_F^2 / k`
    pub right: EstimatorCheck,
    pub pass: bool,
}

/// Monte Carlo estimate of both estimators' mean squared Frobenius error,
/// compared with the analytic variance bounds.
pub fn verify_variance(
    w: &Tensor,
    m: &Tensor,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    let (d1, d2) = w.expect_matrix("verify_variance")?;
    let (d2m, d3) = m.expect_matrix("verify_variance")?;
    if d2 != d2m {
        return Err(Error::shape(
            "verify_variance",
            format!("W is {d1}x{d2}, M is {d2m}x{d3}"),
        ));
    }
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "variance check needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("sketch width k must be >= 1".into()));
    }
    let target = w.matmul(m)?;
    let errors: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let t = t as u64;
            let u1 = SignMatrix::new(derive_seed(seed, 2 * t), k, d1)?;
            let u2 = SignMatrix::new(derive_seed(seed, 2 * t + 1), k, d2)?;
            let mut el = Sketch::new(w, u1, 1)?.estimate_left(m)?;
            el.axpy(-1.0, &target)?;
            let mut er = Sketch::new(w, u2, 2)?.estimate_right(m)?;
            er.axpy(-1.0, &target)?;
            Ok((el.frobenius_sq(), er.frobenius_sq()))
        })
        .collect::<Result<_>>()?;
    let (le, re): (Vec<f64>, Vec<f64>) = errors.into_iter().unzip();
    let kf = k as f64;
    let left = EstimatorCheck::from_errors(&le, 2.0 * d1 as f64 * target.frobenius_sq() / kf);
    let right = EstimatorCheck::from_errors(&re, 2.0 * w.frobenius_sq() * m.frobenius_sq() / kf);
    let pass = left.pass && right.pass;
    Ok(VarianceReport {
        d1,
        d2,
        d3,
        k,
        trials,
        seed,
        left,
        right,
        pass,
    })
}

/// Integer-valued `W` (`d1 x d2`, `d2 >= 2`) and `M` (`d2 x d3`) with
/// `W M = 0` exactly: the last column of `W` is the sum of the others and every
/// column of `M` is a multiple of `(1, .., 1, -1)`.
pub fn null_space_pair(d1: usize, d2: usize, d3: usize, seed: u64) -> (Tensor, Tensor) {
    assert!(d2 >= 2, "need at least two columns for a nontrivial kernel");
    let int = |a: u64, b: u64| ((derive_seed(seed, a * 1_000_003 + b) % 7) as f64) - 3.0;
    let mut w = Tensor::from_fn(&[d1, d2], |ix| int(ix[0] as u64, ix[1] as u64));
    for i in 0..d1 {
        let s: f64 = (0..d2 - 1).map(|j| w.get(&[i, j])).sum();
        w.set(&[i, d2 - 1], s);
    }
    let m = Tensor::from_fn(&[d2, d3], |ix| {
        let a = (ix[1] + 1) as f64;
        if ix[0] == d2 - 1 {
            -a
        } else {
            a
        }
    });
    (w, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_mean_is_identity() {
        for d in 1..=3 {
            assert_eq!(exact_gram_mean(1, d).unwrap(), Tensor::identity(d));
        }
        let g = exact_gram_mean(2, 3).unwrap();
        assert!(g.max_abs_diff(&Tensor::identity(3)) < 1e-15);
    }

    #[test]
    fn enumeration_limit() {
        assert!(exact_gram_mean(2, 9).is_err());
        let w = Tensor::zeros(&[17, 2]);
        assert!(exact_unbiasedness(&w, &Tensor::zeros(&[2, 1]), 1, 1e-12).is_err());
    }

    #[test]
    fn four_patterns_average_to_wm() {
        let w = Tensor::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5]]).unwrap();
        let m = Tensor::from_rows(&[&[2.0], &[-1.0]]).unwrap();
        let r = exact_unbiasedness(&w, &m, 1, 1e-12).unwrap();
        assert_eq!((r.left_patterns, r.right_patterns), (4, 4));
        assert_eq!(r.left_max_dev, 0.0);
        assert_eq!(r.right_max_dev, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn identity_exact_mse() {
        // With k = 1, Z = (z1, z2): U^T U - I has off-diagonal z1 z2 = +-1 and
        // zero diagonal, so |U^T U - I|_F^2 = 2 for every pattern.
        let i2 = Tensor::identity(2);
        let (l, r) = exact_mse(&i2, &i2, 1).unwrap();
        assert_eq!((l, r), (2.0, 2.0));
    }

    #[test]
    fn rejects_few_trials() {
        let w = Tensor::identity(2);
        assert!(verify_variance(&w, &w, 1, 999, 0).is_err());
    }

    #[test]
    fn null_space_pair_is_exact() {
        let (w, m) = null_space_pair(4, 5, 3, 11);
        assert_eq!(naive_matmul(&w, &m), Tensor::zeros(&[4, 3]));
    }
}
