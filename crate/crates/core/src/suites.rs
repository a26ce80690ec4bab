//! Verification suites run by `sknn verify`: each returns one row per check
//! with the measured quantity, the limit it is held to, and a verdict.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::conv::{col2im, conv_direct, im2col, ConvGeometry};
use crate::error::{Error, Result};
use crate::layers::{sketch_from_dense_conv, sketch_from_dense_fc, SkConv, SkFc};
use crate::rng::{derive_seed, stream_rng};
use crate::sketch::verify::{
    exact_gram_mean, exact_unbiasedness, null_space_pair, verify_variance, EstimatorCheck,
    MAX_ENUMERATED_ENTRIES,
};
use crate::sketch::SignMatrix;
use crate::tensor::Tensor;

/// Tolerance for identities that hold exactly in real arithmetic.
pub const EXACT_TOL: f64 = 1e-12;
/// Standard errors allowed between a Monte Carlo mean and its target.
pub const MEAN_Z: f64 = 4.0;
pub const DEFAULT_TRIALS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Estimators,
    Variance,
    Exact,
    ConvEquiv,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Estimators,
        Suite::Variance,
        Suite::Exact,
        Suite::ConvEquiv,
    ];

    pub fn run(self, trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
        match self {
            Suite::Estimators => estimators_suite(trials, seed),
            Suite::Variance => variance_suite(trials, seed),
            Suite::Exact => exact_suite(seed),
            Suite::ConvEquiv => conv_equiv_suite(seed),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Estimators => "estimators",
            Suite::Variance => "variance",
            Suite::Exact => "exact",
            Suite::ConvEquiv => "conv-equiv",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

/// One verdict: `measured` must not exceed `limit`.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub measured: f64,
    pub limit: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(check: impl Into<String>, measured: f64, limit: f64) -> Self {
        CheckRow {
            check: check.into(),
            measured,
            limit,
            pass: measured <= limit,
        }
    }

    fn from_estimator(check: String, est: &EstimatorCheck) -> Self {
        CheckRow {
            check,
            measured: est.empirical_mse,
            limit: est.threshold,
            pass: est.pass,
        }
    }
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.sample(StandardNormal));
    t
}

/// Largest `|mean - target| / stderr` over coordinates of per-trial samples.
/// Coordinates with zero spread must match exactly.
pub fn max_z_score(samples: &[Tensor], target: &Tensor) -> f64 {
    let n = samples.len() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..target.len() {
        let mean = samples.iter().map(|s| s.data()[j]).sum::<f64>() / n;
        let var = samples
            .iter()
            .map(|s| (s.data()[j] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let dev = (mean - target.data()[j]).abs();
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            dev / se
        } else if dev <= EXACT_TOL * target.data()[j].abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

/// Sketched single-estimator outputs of a dense FC layer: the layer built by
/// [`sketch_from_dense_fc`] with `ell = 1`, one of its two sketches zeroed
/// and the remaining term doubled to undo the `1/2` average.
fn fc_single_estimators(
    w: &Tensor,
    b: &Tensor,
    h: &Tensor,
    k: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let layer = sketch_from_dense_fc(w, b, k, 1, seed)?;
    let seeds = layer.seeds();
    let (d1, d2) = (layer.d1(), layer.d2());
    let zeros1 = Tensor::zeros(&[k, d2]);
    let zeros2 = Tensor::zeros(&[d1, k]);
    let half_bias = b.clone().scaled(0.5);
    let left = SkFc::from_parts(
        d1,
        d2,
        k,
        &seeds,
        layer.s1().to_vec(),
        vec![zeros2],
        half_bias.clone(),
    )?;
    let right = SkFc::from_parts(
        d1,
        d2,
        k,
        &seeds,
        vec![zeros1],
        layer.s2().to_vec(),
        half_bias,
    )?;
    Ok((left.forward(h)?.scaled(2.0), right.forward(h)?.scaled(2.0)))
}

/// Same as [`fc_single_estimators`] for a convolution; outputs are
/// `h2 w2 x d1` matrices.
fn conv_single_estimators(
    kernel: &Tensor,
    g: ConvGeometry,
    input: &Tensor,
    k: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let layer = sketch_from_dense_conv(kernel, g, None, k, 1, seed)?;
    let seeds = layer.seeds();
    let z1 = Tensor::zeros(&SkConv::s1_shape(&g, k));
    let z2 = Tensor::zeros(&SkConv::s2_shape(&g, k));
    let left = SkConv::from_parts(g, k, &seeds, layer.s1().to_vec(), vec![z2], None)?;
    let right = SkConv::from_parts(g, k, &seeds, vec![z1], layer.s2().to_vec(), None)?;
    let rows = [g.positions(), g.out_channels];
    Ok((
        left.forward(input)?.scaled(2.0).reshape(&rows)?,
        right.forward(input)?.scaled(2.0).reshape(&rows)?,
    ))
}

fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|t| derive_seed(seed, t)).collect()
}

fn small_conv(rng: &mut ChaCha8Rng) -> Result<ConvGeometry> {
    let kh = rng.gen_range(1..=3);
    let kw = rng.gen_range(1..=3);
    let pad = rng.gen_range(0..=1);
    ConvGeometry::new(
        rng.gen_range(kh.max(2)..=5),
        rng.gen_range(kw.max(2)..=5),
        rng.gen_range(1..=3),
        kh,
        kw,
        rng.gen_range(1..=3),
        1,
        pad,
    )
}

/// Monte Carlo unbiasedness of the matrix estimators and of both sketched
/// layers, plus the identity `E[U^T U] = I`.
pub fn estimators_suite(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least 2 trials".into()));
    }
    let mut rng = stream_rng(seed, 0xE5);
    let mut rows = Vec::new();

    let w = gaussian(&[4, 4], &mut rng);
    let m = gaussian(&[4, 4], &mut rng);
    let target = w.matmul(&m)?;
    let seeds = trial_seeds(seed, trials);
    let samples: Vec<(Tensor, Tensor)> = seeds
        .par_iter()
        .map(|&s| {
            let u1 = SignMatrix::new(derive_seed(s, 0), 2, 4)?;
            let u2 = SignMatrix::new(derive_seed(s, 1), 2, 4)?;
            let left = crate::sketch::sketch(&w, u1, 1)?.estimate_left(&m)?;
            let right = crate::sketch::sketch(&w, u2, 2)?.estimate_right(&m)?;
            Ok((left, right))
        })
        .collect::<Result<_>>()?;
    let (left, right): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    rows.push(CheckRow::new(
        "matrix U1^T S1 M, 4x4, k=2: max z",
        max_z_score(&left, &target),
        MEAN_Z,
    ));
    rows.push(CheckRow::new(
        "matrix S2 U2 M, 4x4, k=2: max z",
        max_z_score(&right, &target),
        MEAN_Z,
    ));

    let grams: Vec<Tensor> = seeds
        .par_iter()
        .map(|&s| {
            let u = SignMatrix::new(s, 3, 6)?.materialize();
            u.transpose()?.matmul(&u)
        })
        .collect::<Result<_>>()?;
    rows.push(CheckRow::new(
        "E[U^T U] = I, k=3, d=6: max z",
        max_z_score(&grams, &Tensor::identity(6)),
        MEAN_Z,
    ));

    let (d1, d2) = (5, 7);
    let w = gaussian(&[d1, d2], &mut rng);
    let b = gaussian(&[d1], &mut rng);
    let h = gaussian(&[d2], &mut rng);
    let mut dense = w.matmul(&h.clone().reshape(&[d2, 1])?)?.reshape(&[d1])?;
    dense.axpy(1.0, &b)?;
    for ell in [1, 2] {
        let outs: Vec<Tensor> = seeds
            .par_iter()
            .map(|&s| sketch_from_dense_fc(&w, &b, 3, ell, s)?.forward(&h))
            .collect::<Result<_>>()?;
        rows.push(CheckRow::new(
            format!("sk-fc {d1}x{d2}, k=3, l={ell} vs dense: max z"),
            max_z_score(&outs, &dense),
            MEAN_Z,
        ));
    }

    let g = ConvGeometry::new(4, 4, 2, 3, 3, 2, 1, 1)?;
    let kern = gaussian(&g.kernel_shape(), &mut rng);
    let x = gaussian(&g.input_shape(), &mut rng);
    let dense = conv_direct(&x, &kern, &g)?;
    let conv_trials = &seeds[..trials.min(5000)];
    for ell in [1, 2] {
        let outs: Vec<Tensor> = conv_trials
            .par_iter()
            .map(|&s| sketch_from_dense_conv(&kern, g, None, 2, ell, s)?.forward(&x))
            .collect::<Result<_>>()?;
        rows.push(CheckRow::new(
            format!("sk-conv 4x4x2 -> 2ch, k=2, l={ell} vs direct conv: max z"),
            max_z_score(&outs, &dense),
            MEAN_Z,
        ));
    }
    Ok(rows)
}

/// Variance bounds for the matrix estimators over 24 random configurations,
/// the `1/k` law, the null-space zero, and the layer-level bounds.
pub fn variance_suite(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = stream_rng(seed, 0x7A);
    let mut rows = Vec::new();
    for c in 0..24u64 {
        let d1 = rng.gen_range(2..=6);
        let d2 = rng.gen_range(2..=6);
        let d3 = rng.gen_range(1..=4);
        let k = [1, 2, 4, 8][rng.gen_range(0..4)];
        let w = gaussian(&[d1, d2], &mut rng);
        let m = gaussian(&[d2, d3], &mut rng);
        let r = verify_variance(&w, &m, k, trials, derive_seed(seed, 100 + c))?;
        let tag = format!("config {c:2} ({d1}x{d2}x{d3}, k={k})");
        rows.push(CheckRow::from_estimator(format!("{tag} left MSE"), &r.left));
        rows.push(CheckRow::from_estimator(
            format!("{tag} right MSE"),
            &r.right,
        ));
    }

    let w = gaussian(&[5, 5], &mut rng);
    let m = gaussian(&[5, 5], &mut rng);
    let r1 = verify_variance(&w, &m, 1, trials, derive_seed(seed, 200))?;
    let r4 = verify_variance(&w, &m, 4, trials, derive_seed(seed, 201))?;
    for (side, a, b) in [
        ("left", r4.left.empirical_mse, r1.left.empirical_mse),
        ("right", r4.right.empirical_mse, r1.right.empirical_mse),
    ] {
        let ratio = a / b;
        rows.push(CheckRow::new(
            format!("1/k law {side}: |MSE(k=4)/MSE(k=1) / 0.25 - 1|"),
            (ratio / 0.25 - 1.0).abs(),
            0.3,
        ));
    }

    for k in [1, 4, 16] {
        let (w, m) = null_space_pair(4, 5, 3, derive_seed(seed, 300 + k as u64));
        let r = verify_variance(&w, &m, k, trials, derive_seed(seed, 400 + k as u64))?;
        rows.push(CheckRow::new(
            format!("null space, k={k}: left MSE (must be exactly 0)"),
            r.left.empirical_mse,
            0.0,
        ));
    }

    let seeds = trial_seeds(derive_seed(seed, 500), trials);
    let (d1, d2) = (6, 8);
    let w = gaussian(&[d1, d2], &mut rng);
    let b = gaussian(&[d1], &mut rng);
    let h = gaussian(&[d2], &mut rng);
    let wh = w.matmul(&h.clone().reshape(&[d2, 1])?)?.reshape(&[d1])?;
    let mut dense = wh.clone();
    dense.axpy(1.0, &b)?;
    for k in [1, 3] {
        let errs: Vec<(f64, f64)> = seeds
            .par_iter()
            .map(|&s| {
                let (mut l, mut r) = fc_single_estimators(&w, &b, &h, k, s)?;
                l.axpy(-1.0, &dense)?;
                r.axpy(-1.0, &dense)?;
                Ok((l.frobenius_sq(), r.frobenius_sq()))
            })
            .collect::<Result<_>>()?;
        let (le, re): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let kf = k as f64;
        let left = EstimatorCheck::from_errors(&le, 2.0 * d1 as f64 * wh.frobenius_sq() / kf);
        let right =
            EstimatorCheck::from_errors(&re, 2.0 * w.frobenius_sq() * h.frobenius_sq() / kf);
        rows.push(CheckRow::from_estimator(
            format!("sk-fc {d1}x{d2}, k={k}: left MSE"),
            &left,
        ));
        rows.push(CheckRow::from_estimator(
            format!("sk-fc {d1}x{d2}, k={k}: right MSE"),
            &right,
        ));
    }

    let conv_trials = &seeds[..trials.min(5000)];
    let g = ConvGeometry::new(5, 5, 2, 3, 3, 3, 1, 1)?;
    let kern = gaussian(&g.kernel_shape(), &mut rng);
    let x = gaussian(&g.input_shape(), &mut rng);
    let cols = im2col(&x, &g)?;
    let target = cols.matmul(&kern.mat_n(4)?)?;
    for k in [1, 2] {
        let errs: Vec<(f64, f64)> = conv_trials
            .par_iter()
            .map(|&s| {
                let (mut l, mut r) = conv_single_estimators(&kern, g, &x, k, s)?;
                l.axpy(-1.0, &target)?;
                r.axpy(-1.0, &target)?;
                Ok((l.frobenius_sq(), r.frobenius_sq()))
            })
            .collect::<Result<_>>()?;
        let (le, re): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let kf = k as f64;
        let hw = (g.kernel_h * g.kernel_w) as f64;
        let left = EstimatorCheck::from_errors(
            &le,
            2.0 * g.out_channels as f64 * target.frobenius_sq() / kf,
        );
        let right = EstimatorCheck::from_errors(
            &re,
            2.0 * cols.frobenius_sq() * kern.frobenius_sq() / (kf * hw),
        );
        rows.push(CheckRow::from_estimator(
            format!("sk-conv 5x5x2 -> 3ch, k={k}: left MSE"),
            &left,
        ));
        rows.push(CheckRow::from_estimator(
            format!("sk-conv 5x5x2 -> 3ch, k={k}: right MSE"),
            &right,
        ));
    }
    Ok(rows)
}

/// Every `(d1, d2, d3, k)` with `k * max(d1, d2) <= 16` and `d3 <= 2`,
/// averaged over all sign matrices, plus `E[U^T U] = I` for small shapes.
pub fn exact_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = stream_rng(seed, 0xEE);
    let mut rows = Vec::new();
    for k in 1..=MAX_ENUMERATED_ENTRIES {
        for d1 in 1..=MAX_ENUMERATED_ENTRIES / k {
            for d2 in 1..=MAX_ENUMERATED_ENTRIES / k {
                for d3 in 1..=2 {
                    let w = gaussian(&[d1, d2], &mut rng);
                    let m = gaussian(&[d2, d3], &mut rng);
                    let r = exact_unbiasedness(&w, &m, k, EXACT_TOL)?;
                    rows.push(CheckRow {
                        check: format!("{d1}x{d2}x{d3}, k={k}: max |mean - WM| / scale"),
                        measured: r.left_max_dev.max(r.right_max_dev).max(r.library_max_dev)
                            / r.scale,
                        limit: EXACT_TOL,
                        pass: r.pass,
                    });
                }
            }
        }
    }
    for (k, d) in [(1, 1), (1, 2), (1, 3), (2, 3), (4, 4)] {
        let dev = exact_gram_mean(k, d)?.max_abs_diff(&Tensor::identity(d));
        rows.push(CheckRow::new(
            format!("E[U^T U] = I, k={k}, d={d}: max dev"),
            dev,
            EXACT_TOL,
        ));
    }
    Ok(rows)
}

fn random_geometry(rng: &mut ChaCha8Rng) -> ConvGeometry {
    loop {
        let kh = rng.gen_range(1..=4);
        let kw = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..=2);
        let in_h = rng.gen_range(1..=9);
        let in_w = rng.gen_range(1..=9);
        if let Ok(g) = ConvGeometry::new(
            in_h,
            in_w,
            rng.gen_range(1..=4),
            kh,
            kw,
            rng.gen_range(1..=4),
            stride,
            pad,
        ) {
            return g;
        }
    }
}

/// Convolution as a matrix product on random geometries, the im2col/col2im
/// adjoint identity, and agreement of the two SK-CONV forward forms.
pub fn conv_equiv_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = stream_rng(seed, 0xC0);
    let mut rows = Vec::new();
    let (mut worst, mut worst_adj) = (0.0f64, 0.0f64);
    let (mut strided, mut padded) = (0, 0);
    let count = 64;
    for _ in 0..count {
        let g = random_geometry(&mut rng);
        strided += (g.stride > 1) as usize;
        padded += (g.pad > 0) as usize;
        let x = gaussian(&g.input_shape(), &mut rng);
        let kern = gaussian(&g.kernel_shape(), &mut rng);
        let direct = conv_direct(&x, &kern, &g)?.mat_n(3)?;
        let cols = im2col(&x, &g)?;
        let fast = cols.matmul(&kern.mat_n(4)?)?;
        worst = worst.max(fast.max_abs_diff(&direct.reshape(fast.shape())?));
        let c = gaussian(cols.shape(), &mut rng);
        let lhs = cols.dot(&c);
        let rhs = x.dot(&col2im(&c, &g)?);
        worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    rows.push(CheckRow::new(
        format!("{count} geometries ({strided} strided, {padded} padded): max |direct - im2col K|"),
        worst,
        EXACT_TOL,
    ));
    rows.push(CheckRow::new(
        "im2col/col2im adjoint: max rel gap",
        worst_adj,
        EXACT_TOL,
    ));

    let mut worst_eq = 0.0f64;
    let layers = 12;
    for i in 0..layers {
        let g = small_conv(&mut rng)?;
        let k = rng.gen_range(1..=3);
        let ell = rng.gen_range(1..=3);
        let layer = SkConv::init(g, k, ell, i % 2 == 0, derive_seed(seed, 900 + i))?;
        let x = gaussian(&g.input_shape(), &mut rng);
        let a = layer.forward(&x)?;
        let b = layer.forward_elementwise(&x)?;
        worst_eq = worst_eq.max(a.max_abs_diff(&b));
    }
    rows.push(CheckRow::new(
        format!("{layers} sk-conv layers: max |elementwise - matmul|"),
        worst_eq,
        EXACT_TOL,
    ));
    Ok(rows)
}
