use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

/// A "valid" 1-D convolution: no padding, incomplete trailing windows dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub k: usize,
    pub stride: usize,
    pub filters: usize,
    pub in_channels: usize,
}

impl ConvSpec {
    pub fn new(k: usize, stride: usize, filters: usize, in_channels: usize) -> Result<Self> {
        if k == 0 || stride == 0 || filters == 0 || in_channels == 0 {
            return Err(Error::Config(format!(
                "convolution needs k, s, m and input channels >= 1 (k={k}, s={stride}, m={filters}, c={in_channels})"
            )));
        }
        Ok(ConvSpec {
            k,
            stride,
            filters,
            in_channels,
        })
    }

    /// `floor((n - k) / s) + 1`, or `None` when the input is shorter than the filter.
    pub fn out_len(&self, n: usize) -> Option<usize> {
        (n >= self.k).then(|| (n - self.k) / self.stride + 1)
    }

    /// Weight tensor shape: one row of `k * in_channels` taps per filter.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.filters, self.k * self.in_channels)
    }

    pub fn param_count(&self) -> usize {
        self.filters * self.k * self.in_channels + self.filters
    }

    fn check(&self, x: &Tensor2, weights: &Tensor2, bias: &[f64]) -> Result<usize> {
        if x.cols() != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.cols()
            )));
        }
        let (wr, wc) = self.weight_shape();
        weights.ensure_shape(wr, wc, "convolution weights")?;
        if bias.len() != self.filters {
            return Err(Error::Shape(format!(
                "convolution bias has {} entries for {} filters",
                bias.len(),
                self.filters
            )));
        }
        self.out_len(x.rows()).ok_or_else(|| {
            Error::Shape(format!(
                "input of length {} is shorter than filter length {}",
                x.rows(),
                self.k
            ))
        })
    }
}

pub fn conv1d_forward(x: &Tensor2, spec: &ConvSpec, weights: &Tensor2, bias: &[f64]) -> Result<Tensor2> {
    let out_len = spec.check(x, weights, bias)?;
    let mut out = Tensor2::zeros(out_len, spec.filters);
    for j in 0..out_len {
        let window = x.rows_slice(j * spec.stride, spec.k);
        for (f, o) in out.row_mut(j).iter_mut().enumerate() {
            *o = bias[f] + dot(window, weights.row(f));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor2,
    pub grad_weights: Tensor2,
    pub grad_bias: Vec<f64>,
}

/// Accumulates parameter gradients into `grad_weights`/`grad_bias` and, when
/// given, the input gradient into `grad_x`.
pub fn conv1d_backward_into(
    grad_out: &Tensor2,
    x: &Tensor2,
    spec: &ConvSpec,
    weights: &Tensor2,
    grad_weights: &mut Tensor2,
    grad_bias: &mut [f64],
    mut grad_x: Option<&mut Tensor2>,
) -> Result<()> {
    let out_len = spec.check(x, weights, grad_bias)?;
    grad_out.ensure_shape(out_len, spec.filters, "convolution output gradient")?;
    let (wr, wc) = spec.weight_shape();
    grad_weights.ensure_shape(wr, wc, "convolution weight gradient")?;
    if let Some(gx) = grad_x.as_deref() {
        gx.ensure_shape(x.rows(), x.cols(), "convolution input gradient")?;
    }
    for j in 0..out_len {
        let start = j * spec.stride;
        let window = x.rows_slice(start, spec.k);
        for (f, &g) in grad_out.row(j).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad_bias[f] += g;
            axpy(g, window, grad_weights.row_mut(f));
            if let Some(gx) = grad_x.as_deref_mut() {
                axpy(g, weights.row(f), gx.rows_slice_mut(start, spec.k));
            }
        }
    }
    Ok(())
}

pub fn conv1d_backward(grad_out: &Tensor2, x: &Tensor2, spec: &ConvSpec, weights: &Tensor2) -> Result<ConvGrads> {
    let (wr, wc) = spec.weight_shape();
    let mut grads = ConvGrads {
        grad_x: Tensor2::zeros(x.rows(), x.cols()),
        grad_weights: Tensor2::zeros(wr, wc),
        grad_bias: vec![0.0; spec.filters],
    };
    conv1d_backward_into(
        grad_out,
        x,
        spec,
        weights,
        &mut grads.grad_weights,
        &mut grads.grad_bias,
        Some(&mut grads.grad_x),
    )?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_sums_window() {
        let x = Tensor2::column(&[1.0, 2.0, 3.0, 4.0]);
        let spec = ConvSpec::new(2, 1, 1, 1).unwrap();
        let w = Tensor2::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let out = conv1d_forward(&x, &spec, &w, &[0.0]).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn strided_length() {
        let x = Tensor2::column(&[1.0; 5]);
        let spec = ConvSpec::new(2, 2, 1, 1).unwrap();
        let w = Tensor2::from_vec(1, 2, vec![0.3, -0.2]).unwrap();
        assert_eq!(conv1d_forward(&x, &spec, &w, &[0.1]).unwrap().rows(), 2);
    }

    #[test]
    fn short_input_is_shape_error() {
        let x = Tensor2::column(&[1.0]);
        let spec = ConvSpec::new(2, 1, 1, 1).unwrap();
        let w = Tensor2::zeros(1, 2);
        assert!(matches!(conv1d_forward(&x, &spec, &w, &[0.0]), Err(Error::Shape(_))));
        assert!(ConvSpec::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor2::from_vec(4, 2, (0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
        let spec = ConvSpec::new(3, 1, 2, 2).unwrap();
        let w = Tensor2::from_vec(2, 6, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let g = conv1d_backward(&Tensor2::zeros(2, 2), &x, &spec, &w).unwrap();
        assert!(g.grad_x.data().iter().chain(g.grad_weights.data()).chain(&g.grad_bias).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_weight_gradient_is_input() {
        let x = Tensor2::column(&[2.5]);
        let spec = ConvSpec::new(1, 1, 1, 1).unwrap();
        let w = Tensor2::from_vec(1, 1, vec![-0.7]).unwrap();
        let g = conv1d_backward(&Tensor2::column(&[1.0]), &x, &spec, &w).unwrap();
        assert_eq!(g.grad_weights.data(), &[2.5]);
        assert_eq!(g.grad_x.data(), &[-0.7]);
        assert_eq!(g.grad_bias, [1.0]);
    }

    #[test]
    fn backward_rejects_bad_grad_shape() {
        let x = Tensor2::column(&[1.0, 2.0, 3.0]);
        let spec = ConvSpec::new(2, 1, 1, 1).unwrap();
        let w = Tensor2::zeros(1, 2);
        assert!(conv1d_backward(&Tensor2::zeros(3, 1), &x, &spec, &w).is_err());
    }
}
