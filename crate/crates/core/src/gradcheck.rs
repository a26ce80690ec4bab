//! Central finite-difference checks of the closed-form layer gradients.
//!
//! The probe loss is `L(y) = sum_j sin(r_j y_j)` with fixed random weights
//! `r`, so it is nonlinear in every output coordinate and a large step
//! visibly breaks the difference quotient.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::Layer;
use crate::rng::stream_rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GroupError {
    pub name: String,
    pub coords: usize,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub layer: String,
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }
}

struct ProbeLoss {
    weights: Vec<f64>,
}

impl ProbeLoss {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x6C0C);
        ProbeLoss {
            weights: (0..len).map(|_| rng.gen_range(0.5..1.5)).collect(),
        }
    }

    fn value(&self, y: &Tensor) -> f64 {
        y.data()
            .iter()
            .zip(&self.weights)
            .map(|(v, r)| (r * v).sin())
            .sum()
    }

    fn grad(&self, y: &Tensor) -> Tensor {
        let mut g = y.clone();
        g.data_mut()
            .iter_mut()
            .zip(&self.weights)
            .for_each(|(v, r)| *v = r * (r * *v).cos());
        g
    }
}

/// Normwise relative error `max|a - n| / max(max|a|, max|n|)`; 0 when both
/// vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn numeric_grad(
    len: usize,
    step: f64,
    mut loss_at: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..len)
        .map(|j| Ok((loss_at(j, step)? - loss_at(j, -step)?) / (2.0 * step)))
        .collect()
}

/// Checks every parameter group and the input gradient of `layer` at
/// `input`.
pub fn check_layer(
    layer: &Layer,
    input: &Tensor,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let out = layer.forward(input)?;
    let probe = ProbeLoss::new(out.len(), seed);
    let grads = layer.backward(input, &probe.grad(&out))?;
    let mut groups = Vec::new();

    let names = layer.param_names();
    for (p, name) in names.iter().enumerate() {
        let len = layer.params()[p].len();
        let mut work = layer.clone();
        let numeric = numeric_grad(len, step, |j, delta| {
            let orig = work.params()[p].data()[j];
            work.params_mut()[p].data_mut()[j] = orig + delta;
            let v = probe.value(&work.forward(input)?);
            work.params_mut()[p].data_mut()[j] = orig;
            Ok(v)
        })?;
        groups.push(GroupError {
            name: name.clone(),
            coords: len,
            rel_error: relative_error(grads.params[p].data(), &numeric),
        });
    }

    let mut x = input.clone();
    let numeric = numeric_grad(x.len(), step, |j, delta| {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + delta;
        let v = probe.value(&layer.forward(&x)?);
        x.data_mut()[j] = orig;
        Ok(v)
    })?;
    groups.push(GroupError {
        name: "input".into(),
        coords: input.len(),
        rel_error: relative_error(grads.input.data(), &numeric),
    });

    let pass = groups.iter().all(|g| g.rel_error < tolerance);
    Ok(GradcheckReport {
        layer: layer.kind().into(),
        step,
        tolerance,
        groups,
        pass,
    })
}
