//! Training loss: mean absolute error plus gradient difference loss.
//!
//! L = mean|pred - target| + lambda_gdl * GDL, where GDL averages
//! ||grad pred| - |grad target|| over all horizontal and vertical
//! first-order forward-difference neighbor pairs and channels (exponent
//! 1). Subgradient 0 is used at the kinks of |.|.

use super::conv::Tensor;
use crate::error::{Error, Result};

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss value only.
pub fn loss(pred: &Tensor, target: &Tensor, lambda_gdl: f64) -> Result<f64> {
    Ok(loss_and_grad(pred, target, lambda_gdl, false)?.0)
}

/// Loss value and (optionally) its gradient with respect to `pred`.
pub fn loss_and_grad(
    pred: &Tensor,
    target: &Tensor,
    lambda_gdl: f64,
    need_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    if pred.channels != target.channels
        || pred.height != target.height
        || pred.width != target.width
    {
        return Err(Error::DimensionMismatch("loss tensor shapes".into()));
    }
    if lambda_gdl < 0.0 {
        return Err(Error::InvalidParameter("lambda_gdl must be >= 0".into()));
    }
    let (ch, h, w) = (pred.channels, pred.height, pred.width);
    let n_el = (ch * h * w) as f64;
    let mut grad = if need_grad {
        Some(Tensor::zeros(ch, h, w))
    } else {
        None
    };

    // L1 term
    let mut l1 = 0.0;
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        l1 += d.abs();
        if let Some(g) = grad.as_mut() {
            g.data[i] += sign(d) / n_el;
        }
    }
    l1 /= n_el;

    // GDL term over horizontal and vertical neighbor pairs
    let n_pairs = (ch * (h * (w - 1) + (h - 1) * w)) as f64;
    let mut gdl = 0.0;
    for c in 0..ch {
        let p = pred.plane(c);
        let t = target.plane(c);
        let base = c * h * w;
        // horizontal pairs: (y, x) -> (y, x+1)
        for y in 0..h {
            for x in 0..w - 1 {
                let i0 = y * w + x;
                let i1 = i0 + 1;
                let dp = p[i1] - p[i0];
                let dt = t[i1] - t[i0];
                let term = dp.abs() - dt.abs();
                gdl += term.abs();
                if let Some(g) = grad.as_mut() {
                    let coeff = lambda_gdl * sign(term) * sign(dp) / n_pairs;
                    g.data[base + i1] += coeff;
                    g.data[base + i0] -= coeff;
                }
            }
        }
        // vertical pairs: (y, x) -> (y+1, x)
        for y in 0..h - 1 {
            for x in 0..w {
                let i0 = y * w + x;
                let i1 = i0 + w;
                let dp = p[i1] - p[i0];
                let dt = t[i1] - t[i0];
                let term = dp.abs() - dt.abs();
                gdl += term.abs();
                if let Some(g) = grad.as_mut() {
                    let coeff = lambda_gdl * sign(term) * sign(dp) / n_pairs;
                    g.data[base + i1] += coeff;
                    g.data[base + i0] -= coeff;
                }
            }
        }
    }
    gdl /= n_pairs;

    Ok((l1 + lambda_gdl * gdl, grad))
}
