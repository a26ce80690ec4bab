//! Mini-batch SGD with optional momentum, evaluation and history records.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Network, SampleGrads};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5AF1E;

/// Multiply the learning rate by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub eval_each_epoch: bool,
    pub decay: Option<StepDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            eval_each_epoch: true,
            decay: None,
        }
    }
}

impl TrainConfig {
    /// Zero learning rate is accepted; it leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be >= 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if let Some(d) = self.decay {
            if d.every == 0 || d.factor.is_nan() || d.factor <= 0.0 {
                return Err(Error::InvalidArgument(
                    "step decay needs every >= 1 and factor > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay {
            Some(d) => self.lr * d.factor.powi((epoch / d.every) as i32),
            None => self.lr,
        }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's samples, measured before each update.
    pub train_loss: f64,
    /// Test top-1 error in percent, when evaluated.
    pub test_top1: Option<f64>,
}

pub fn write_history(history: &[EpochRecord], out: &mut impl Write) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut *out, rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidArgument(format!("bad history line `{l}`: {e}")))
        })
        .collect()
}

/// Loss and gradients of a batch: samples are evaluated in parallel and
/// summed in index order, so the result does not depend on scheduling.
pub fn batch_grads(net: &Network, data: &Dataset, indices: &[usize]) -> Result<SampleGrads> {
    let per_sample: Vec<SampleGrads> = indices
        .par_iter()
        .map(|&i| {
            let (x, y) = data.sample(i);
            net.sample_grads(x, y)
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let mut total = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for s in iter {
        total.loss += s.loss;
        for (acc, g) in total.layers.iter_mut().zip(&s.layers) {
            for (a, b) in acc.iter_mut().zip(g) {
                a.axpy(1.0, b)?;
            }
        }
    }
    let inv = 1.0 / indices.len() as f64;
    total.loss *= inv;
    total.layers.iter_mut().flatten().for_each(|g| g.scale(inv));
    Ok(total)
}

/// Classical momentum: `v <- mu v + g`, `p <- p - lr v`.
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: net
                .layers()
                .iter()
                .map(|l| {
                    l.params()
                        .iter()
                        .map(|p| Tensor::zeros(p.shape()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &SampleGrads, lr: f64) -> Result<()> {
        for ((layer, vel), g) in net
            .layers_mut()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.layers)
        {
            for ((p, v), g) in layer.params_mut().into_iter().zip(vel).zip(g) {
                if self.momentum == 0.0 {
                    p.axpy(-lr, g)?;
                } else {
                    v.scale(self.momentum);
                    v.axpy(1.0, g)?;
                    p.axpy(-lr, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Trains in place and returns one record per epoch. `on_epoch` sees each
/// record as it is produced.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let shape = train_set.image_shape().unwrap();
    if shape.as_slice() != net.input_shape() {
        return Err(Error::shape(
            "train",
            format!(
                "images {:?} vs network input {:?}",
                shape,
                net.input_shape()
            ),
        ));
    }
    if train_set.classes() > net.output_len() {
        return Err(Error::shape(
            "train",
            format!(
                "{} classes but the network has {} outputs",
                train_set.classes(),
                net.output_len()
            ),
        ));
    }
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut opt = Sgd::new(net, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let grads = batch_grads(net, train_set, chunk)?;
            if !grads.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss: grads.loss,
                });
            }
            loss_sum += grads.loss * chunk.len() as f64;
            opt.step(net, &grads, lr)?;
        }
        let test_top1 = match test_set {
            Some(t) if cfg.eval_each_epoch || epoch + 1 == cfg.epochs => Some(top1_error(net, t)?),
            _ => None,
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            test_top1,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Percentage of misclassified samples.
pub fn top1_error(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let predictions: Vec<usize> = data
        .images()
        .par_iter()
        .map(|x| net.predict(x))
        .collect::<Result<_>>()?;
    let wrong = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p != l)
        .count();
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

/// Mean test error over the final ten evaluated epochs.
pub fn top1_error_last10(history: &[EpochRecord]) -> Result<f64> {
    let evaluated: Vec<f64> = history.iter().filter_map(|r| r.test_top1).collect();
    if evaluated.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 evaluated epochs, have {}",
            evaluated.len()
        )));
    }
    Ok(evaluated[evaluated.len() - 10..].iter().sum::<f64>() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticConfig;
    use crate::layers::{DenseFc, Layer, SkFc};

    fn blobs(noise: f64) -> Dataset {
        SyntheticConfig {
            classes: 2,
            per_class: 20,
            shape: [4, 4, 1],
            noise,
            seed: 3,
        }
        .generate(0)
        .unwrap()
    }

    fn tiny_sk_net(seed: u64) -> Network {
        Network::new(
            vec![4, 4, 1],
            vec![
                Layer::SkFc(SkFc::init(8, 16, 3, 2, seed).unwrap()),
                Layer::Relu,
                Layer::DenseFc(DenseFc::init(2, 8, seed + 1)),
            ],
        )
        .unwrap()
    }

    fn params(net: &Network) -> Vec<f64> {
        net.layers()
            .iter()
            .flat_map(|l| l.params().into_iter().flat_map(|p| p.data().to_vec()))
            .collect()
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let data = blobs(0.1);
        let mut net = tiny_sk_net(1);
        let before = params(&net);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            batch: 7,
            ..Default::default()
        };
        train(&mut net, &data, None, &cfg, |_| {}).unwrap();
        assert_eq!(before, params(&net));
    }

    #[test]
    fn one_step_is_plain_gradient_descent() {
        let data = blobs(0.1).subset(&[0]);
        let mut net = tiny_sk_net(2);
        let g = net
            .sample_grads(data.sample(0).0, data.sample(0).1)
            .unwrap();
        let mut expect = net.clone();
        for (layer, gl) in expect.layers_mut().iter_mut().zip(&g.layers) {
            for (p, gp) in layer.params_mut().into_iter().zip(gl) {
                p.axpy(-0.1, gp).unwrap();
            }
        }
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.1,
            batch: 1,
            momentum: 0.0,
            ..Default::default()
        };
        train(&mut net, &data, None, &cfg, |_| {}).unwrap();
        assert_eq!(params(&net), params(&expect));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(0.1);
        let mut net = tiny_sk_net(3);
        let cfg = TrainConfig {
            epochs: 8,
            lr: 0.05,
            batch: 4,
            momentum: 0.5,
            ..Default::default()
        };
        let hist = train(&mut net, &data, Some(&data), &cfg, |_| {}).unwrap();
        for w in hist[..5].windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{hist:?}");
        }
        assert!(hist.last().unwrap().test_top1.unwrap() < 5.0, "{hist:?}");
    }

    #[test]
    fn runs_are_bit_identical() {
        let data = blobs(0.3);
        let cfg = TrainConfig {
            epochs: 2,
            batch: 5,
            ..Default::default()
        };
        let run = || {
            let mut net = tiny_sk_net(4);
            let h = train(&mut net, &data, Some(&data), &cfg, |_| {}).unwrap();
            (h, params(&net))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs(0.1);
        let mut net = tiny_sk_net(5);
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e6,
            momentum: 0.0,
            batch: 4,
            ..Default::default()
        };
        let err = train(&mut net, &data, None, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn last10_average() {
        let hist: Vec<_> = (1..=12)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0,
                test_top1: Some(10.0),
            })
            .collect();
        assert_eq!(top1_error_last10(&hist).unwrap(), 10.0);
        assert!(top1_error_last10(&hist[..9]).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let data = SyntheticConfig {
            classes: 10,
            per_class: 3,
            shape: [2, 2, 1],
            noise: 0.1,
            seed: 0,
        }
        .generate(0)
        .unwrap();
        let w = Tensor::zeros(&[10, 4]);
        let mut b = Tensor::zeros(&[10]);
        b.data_mut()[3] = 1.0;
        let net = Network::new(
            vec![2, 2, 1],
            vec![Layer::DenseFc(DenseFc::new(w, b).unwrap())],
        )
        .unwrap();
        assert!((top1_error(&net, &data).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn history_json_lines() {
        let hist = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                test_top1: Some(12.5),
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.25,
                test_top1: None,
            },
        ];
        let mut out = Vec::new();
        write_history(&hist, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"epoch":1,"train_loss":0.5,"test_top1":12.5}"#
        );
        assert_eq!(read_history(&text).unwrap(), hist);
    }
}
