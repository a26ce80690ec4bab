use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max-pool over the two spatial modes of an `h x w x c`
/// tensor; stride equals the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub window: usize,
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Subgradient 0 at 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.len() != grad_out.len() {
        return Err(Error::shape(
            "relu backward",
            format!(
                "input {:?} vs gradient {:?}",
                input.shape(),
                grad_out.shape()
            ),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

fn pool_dims(input: &Tensor, window: usize) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if window == 0 || s.len() != 3 || s[0] % window != 0 || s[1] % window != 0 {
        return Err(Error::shape(
            "maxpool",
            format!("window {window} does not tile input {s:?}"),
        ));
    }
    Ok((s[0], s[1], s[2]))
}

/// Storage offsets of each window's maximum, in output storage order. Ties
/// go to the first element met when scanning the window in storage order.
fn argmax_offsets(input: &Tensor, window: usize) -> Result<Vec<usize>> {
    let (h, w, c) = pool_dims(input, window)?;
    let (oh, ow) = (h / window, w / window);
    let d = input.data();
    let mut idx = Vec::with_capacity(oh * ow * c);
    for ch in 0..c {
        for oy in 0..ow {
            for ox in 0..oh {
                let mut best = usize::MAX;
                for dy in 0..window {
                    for dx in 0..window {
                        let off = (ox * window + dx) + h * (oy * window + dy) + h * w * ch;
                        if best == usize::MAX || d[off] > d[best] {
                            best = off;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok(idx)
}

pub fn maxpool_forward(input: &Tensor, window: usize) -> Result<Tensor> {
    let (h, w, c) = pool_dims(input, window)?;
    let idx = argmax_offsets(input, window)?;
    let d = input.data();
    Tensor::new(
        &[h / window, w / window, c],
        idx.iter().map(|&i| d[i]).collect(),
    )
}

pub fn maxpool_backward(input: &Tensor, grad_out: &Tensor, window: usize) -> Result<Tensor> {
    let idx = argmax_offsets(input, window)?;
    if grad_out.len() != idx.len() {
        return Err(Error::shape(
            "maxpool backward",
            format!(
                "gradient {:?} should have {} elements",
                grad_out.shape(),
                idx.len()
            ),
        ));
    }
    let mut gin = Tensor::zeros(input.shape());
    for (&i, &g) in idx.iter().zip(grad_out.data()) {
        gin.data_mut()[i] += g;
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::vector(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn pool_two_by_two() {
        // 4x2x1, column-major: rows vary fastest.
        let x = Tensor::new(&[4, 2, 1], vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 7.0, 7.0]).unwrap();
        let y = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), [2, 1, 1]);
        assert_eq!(y.data(), &[5.0, 7.0]);
        let g = maxpool_backward(&x, &Tensor::vector(vec![1.0, 2.0]), 2).unwrap();
        // tie at offsets 6 and 7 goes to 6
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn pool_rejects_untiled() {
        assert!(maxpool_forward(&Tensor::zeros(&[5, 4, 1]), 2).is_err());
        assert!(maxpool_forward(&Tensor::zeros(&[4, 4]), 2).is_err());
    }
}
