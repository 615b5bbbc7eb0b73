use ndarray::{Array2, ArrayView2};

use super::decoder::{Completion, CompletionOutput};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, chamfer_with_grad, PointCloud};
use crate::scalar::Scalar;

/// Weight of the detail term by epoch: 0.01 until epoch 100, then 0.1,
/// 0.5 from epoch 200 and 1.0 from epoch 400.
pub fn delta_schedule(epoch: usize) -> f64 {
    match epoch {
        0..100 => 0.01,
        100..200 => 0.1,
        200..400 => 0.5,
        _ => 1.0,
    }
}

/// `CD(coarse, gt) + δ · CD(detail, gt)`.
pub fn completion_loss(out: &CompletionOutput, gt: &PointCloud, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(chamfer_distance(&out.coarse, gt)? + delta * chamfer_distance(&out.detail, gt)?)
}

/// Mean squared error over the shape coefficients.
pub fn shape_loss(beta: &[f64], beta_hat: &[f64]) -> Result<f64> {
    if beta.len() != beta_hat.len() || beta.is_empty() {
        return Err(Error::invalid(format!(
            "shape vectors of length {} and {}",
            beta.len(),
            beta_hat.len()
        )));
    }
    Ok(beta.iter().zip(beta_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / beta.len() as f64)
}

/// Completion loss plus `η` times the shape loss.
pub fn pretrain_loss(
    out: &CompletionOutput,
    gt: &PointCloud,
    beta: &[f64],
    beta_hat: &[f64],
    delta: f64,
    eta: f64,
) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta must be non-negative"));
    }
    Ok(completion_loss(out, gt, delta)? + eta * shape_loss(beta, beta_hat)?)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("delta must be non-negative"))
    }
}

/// Chamfer terms of a completion and the gradient of
/// `CD(coarse) + δ·CD(detail)` with respect to both point sets.
#[derive(Debug, Clone)]
pub struct CompletionGrad<T> {
    pub coarse_cd: T,
    pub detail_cd: T,
    pub coarse: Array2<T>,
    pub detail: Array2<T>,
}

pub fn completion_grad<T: Scalar>(c: &Completion<T>, gt: ArrayView2<'_, T>, delta: T) -> Result<CompletionGrad<T>> {
    check_delta(delta.as_f64())?;
    let (coarse_cd, gc) = chamfer_with_grad(c.coarse.view(), gt)?;
    let (detail_cd, gd) = chamfer_with_grad(c.detail.view(), gt)?;
    Ok(CompletionGrad {
        coarse_cd,
        detail_cd,
        coarse: gc.da,
        detail: gd.da * delta,
    })
}
