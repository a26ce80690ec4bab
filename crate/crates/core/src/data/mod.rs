//! Datasets, the IDX image format and model checkpoints.

pub mod checkpoint;
pub mod idx;
mod synthetic;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::{gen_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images, each `height x width x channels` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if let Some(first) = images.first() {
            if first.rank() != 3 || images.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::InvalidArgument(
                    "images must share one height x width x channels shape".into(),
                ));
            }
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[height, width, channels]`, or `None` when empty.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.images.first().map(|t| {
            let s = t.shape();
            [s[0], s[1], s[2]]
        })
    }

    pub fn sample(&self, i: usize) -> (&Tensor, usize) {
        (&self.images[i], self.labels[i])
    }

    /// Samples at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_labels_and_lengths() {
        let img = Tensor::zeros(&[2, 2, 1]);
        assert!(Dataset::new(vec![img.clone()], vec![], 2).is_err());
        assert!(Dataset::new(vec![img.clone()], vec![2], 2).is_err());
        assert!(Dataset::new(vec![img.clone(), Tensor::zeros(&[2, 3, 1])], vec![0, 1], 2).is_err());
        let d = Dataset::new(vec![img.clone(), img], vec![1, 0], 2).unwrap();
        assert_eq!(d.image_shape(), Some([2, 2, 1]));
        assert_eq!(d.subset(&[1]).labels(), &[0]);
    }
}
