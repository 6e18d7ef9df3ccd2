use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Softplus,
    Sigmoid,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus => softplus(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// d activation / dz, given the pre-activation `z` and the output `a`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Pre-activations and activations of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
}

fn check(x: &[f64], weights: &Tensor2, bias: &[f64]) -> Result<()> {
    if weights.cols() != x.len() || weights.rows() != bias.len() {
        return Err(Error::Shape(format!(
            "dense layer {}x{} with {} biases applied to {} inputs",
            weights.rows(),
            weights.cols(),
            bias.len(),
            x.len()
        )));
    }
    Ok(())
}

/// `activation(W x + b)` with `W` stored as `outputs x inputs`.
pub fn dense_forward(x: &[f64], weights: &Tensor2, bias: &[f64], act: Activation) -> Result<DenseOutput> {
    check(x, weights, bias)?;
    let z: Vec<f64> = (0..weights.rows()).map(|o| bias[o] + dot(weights.row(o), x)).collect();
    let a = z.iter().map(|&v| act.apply(v)).collect();
    Ok(DenseOutput { z, a })
}

/// Accumulates gradients for `W`, `b` and optionally `x` given d loss / d activation.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward_into(
    grad_a: &[f64],
    x: &[f64],
    out: &DenseOutput,
    weights: &Tensor2,
    act: Activation,
    grad_weights: &mut Tensor2,
    grad_bias: &mut [f64],
    mut grad_x: Option<&mut [f64]>,
) -> Result<()> {
    check(x, weights, grad_bias)?;
    if grad_a.len() != weights.rows() || grad_weights.shape() != weights.shape() {
        return Err(Error::Shape("dense backward: gradient shapes disagree with the layer".into()));
    }
    if let Some(gx) = grad_x.as_deref() {
        if gx.len() != x.len() {
            return Err(Error::Shape("dense backward: input gradient length".into()));
        }
    }
    for o in 0..weights.rows() {
        let dz = grad_a[o] * act.derivative(out.z[o], out.a[o]);
        if dz == 0.0 {
            continue;
        }
        grad_bias[o] += dz;
        axpy(dz, x, grad_weights.row_mut(o));
        if let Some(gx) = grad_x.as_deref_mut() {
            axpy(dz, weights.row(o), gx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_layer() {
        let w = Tensor2::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = [0.5, -2.0, 3.0];
        let out = dense_forward(&x, &w, &[0.0; 3], Activation::Identity).unwrap();
        assert_eq!(out.a, x);
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_abs_diff_eq!(Activation::Softplus.apply(0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_abs_diff_eq!(softplus(800.0), 800.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!("softplus".parse::<Activation>().unwrap(), Activation::Softplus);
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let w = Tensor2::zeros(2, 3);
        assert!(matches!(dense_forward(&[1.0, 2.0], &w, &[0.0; 2], Activation::Relu), Err(Error::Shape(_))));
        assert!(dense_forward(&[1.0; 3], &w, &[0.0; 3], Activation::Relu).is_err());
    }
}
