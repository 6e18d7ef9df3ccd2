use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Regional max-pooling over consecutive, non-overlapping regions of `region` rows.
/// The last region may be shorter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolSpec {
    pub region: usize,
}

impl PoolSpec {
    pub fn new(region: usize) -> Result<Self> {
        if region == 0 {
            return Err(Error::Config("pooling region must be >= 1".into()));
        }
        Ok(PoolSpec { region })
    }

    /// `ceil(n / r)`
    pub fn out_len(&self, n: usize) -> usize {
        n.div_ceil(self.region)
    }
}

/// Returns the pooled map and, for every output entry, the input row it came from.
/// Ties go to the lowest row.
pub fn maxpool_forward(x: &Tensor2, spec: &PoolSpec) -> Result<(Tensor2, Vec<usize>)> {
    if x.rows() == 0 {
        return Err(Error::Shape("max-pooling an empty map".into()));
    }
    let cols = x.cols();
    let out_len = spec.out_len(x.rows());
    let mut out = Tensor2::zeros(out_len, cols);
    let mut argmax = vec![0usize; out_len * cols];
    for j in 0..out_len {
        let start = j * spec.region;
        let end = (start + spec.region).min(x.rows());
        let best = &mut argmax[j * cols..(j + 1) * cols];
        best.iter_mut().for_each(|b| *b = start);
        let mut vals = x.row(start).to_vec();
        for r in start + 1..end {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > vals[c] {
                    vals[c] = v;
                    best[c] = r;
                }
            }
        }
        out.row_mut(j).copy_from_slice(&vals);
    }
    Ok((out, argmax))
}

pub fn maxpool_backward_into(grad_out: &Tensor2, argmax: &[usize], grad_x: &mut Tensor2) -> Result<()> {
    if argmax.len() != grad_out.len() || grad_out.cols() != grad_x.cols() {
        return Err(Error::Shape(format!(
            "max-pool gradient {}x{} does not match {} recorded positions / {} input channels",
            grad_out.rows(),
            grad_out.cols(),
            argmax.len(),
            grad_x.cols()
        )));
    }
    let cols = grad_out.cols();
    for (i, (&g, &r)) in grad_out.data().iter().zip(argmax).enumerate() {
        if r >= grad_x.rows() {
            return Err(Error::Shape(format!("argmax row {r} outside input of {} rows", grad_x.rows())));
        }
        let c = i % cols;
        let cur = grad_x.get(r, c);
        grad_x.set(r, c, cur + g);
    }
    Ok(())
}

pub fn maxpool_backward(grad_out: &Tensor2, argmax: &[usize], input_shape: (usize, usize)) -> Result<Tensor2> {
    let mut gx = Tensor2::zeros(input_shape.0, input_shape.1);
    maxpool_backward_into(grad_out, argmax, &mut gx)?;
    Ok(gx)
}
