use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

const PROTOTYPE_STREAM: u64 = 0xB10B;
const BUMPS_PER_CHANNEL: usize = 3;

/// Class-conditional Gaussian blobs: every class owns a smooth prototype
/// image made of a few Gaussian bumps per channel, and samples add i.i.d.
/// pixel noise, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    /// `[height, width, channels]`
    pub shape: [usize; 3],
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub const DEFAULT_NOISE: f64 = 0.15;

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::InvalidArgument(format!(
                "classes must be in 2..=256, got {}",
                self.classes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidArgument(
                "need at least one sample per class".into(),
            ));
        }
        if self.shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "zero extent in {:?}",
                self.shape
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad noise level {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn prototypes(&self) -> Result<Vec<Tensor>> {
        self.validate()?;
        let [h, w, c] = self.shape;
        let mut rng = stream_rng(self.seed, PROTOTYPE_STREAM);
        let width = (h.max(w) as f64 / 5.0).max(1.0);
        Ok((0..self.classes)
            .map(|_| {
                let bumps: Vec<Vec<(f64, f64, f64)>> = (0..c)
                    .map(|_| {
                        (0..BUMPS_PER_CHANNEL)
                            .map(|_| {
                                (
                                    rng.gen_range(0.0..h as f64),
                                    rng.gen_range(0.0..w as f64),
                                    rng.gen_range(-1.0..1.0),
                                )
                            })
                            .collect()
                    })
                    .collect();
                Tensor::from_fn(&[h, w, c], |ix| {
                    let v: f64 = bumps[ix[2]]
                        .iter()
                        .map(|&(cy, cx, amp)| {
                            let dy = ix[0] as f64 - cy;
                            let dx = ix[1] as f64 - cx;
                            amp * (-(dy * dy + dx * dx) / (2.0 * width * width)).exp()
                        })
                        .sum();
                    (0.5 + 0.4 * v.tanh()).clamp(0.0, 1.0)
                })
            })
            .collect())
    }

    /// Draws a split; different `split` values share prototypes but not noise.
    /// Sample `i` has label `i % classes`.
    pub fn generate(&self, split: u64) -> Result<Dataset> {
        let protos = self.prototypes()?;
        let mut rng = stream_rng(self.seed, split);
        let n = self.classes * self.per_class;
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % self.classes;
            let mut img = protos[label].clone();
            for v in img.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v + self.noise * z).clamp(0.0, 1.0);
            }
            images.push(img);
            labels.push(label);
        }
        Dataset::new(images, labels, self.classes)
    }
}

/// The training split of [`SyntheticConfig::generate`].
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.generate(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: f64) -> SyntheticConfig {
        SyntheticConfig {
            classes: 3,
            per_class: 4,
            shape: [8, 8, 2],
            noise,
            seed: 9,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            gen_synthetic(&cfg(0.2)).unwrap(),
            gen_synthetic(&cfg(0.2)).unwrap()
        );
        assert_ne!(cfg(0.2).generate(0).unwrap(), cfg(0.2).generate(1).unwrap());
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let d = gen_synthetic(&cfg(0.0)).unwrap();
        for i in 0..d.len() {
            let (img, l) = d.sample(i);
            assert_eq!(img, d.sample(l).0);
        }
        assert_ne!(d.sample(0).0, d.sample(1).0);
    }

    #[test]
    fn values_in_unit_interval() {
        let d = gen_synthetic(&cfg(2.0)).unwrap();
        assert!(d
            .images()
            .iter()
            .flat_map(|t| t.data())
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_degenerate() {
        assert!(gen_synthetic(&SyntheticConfig {
            classes: 1,
            ..cfg(0.1)
        })
        .is_err());
        assert!(gen_synthetic(&SyntheticConfig {
            per_class: 0,
            ..cfg(0.1)
        })
        .is_err());
    }
}
