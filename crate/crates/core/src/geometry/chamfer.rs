use ndarray::{Array2, ArrayView2};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric Chamfer distance with non-squared Euclidean norms:
/// mean nearest-neighbor distance from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_matrix(a.to_matrix::<f64>().view(), b.to_matrix::<f64>().view())
}

/// Chamfer distance between the rows of two coordinate matrices.
pub fn chamfer_matrix<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<T> {
    check(a, b)?;
    Ok(directed(a, b, |_, _, _| {}) + directed(b, a, |_, _, _| {}))
}

/// Gradients of the Chamfer distance with respect to both inputs.
#[derive(Debug, Clone)]
pub struct ChamferGrad<T> {
    pub da: Array2<T>,
    pub db: Array2<T>,
}

/// Chamfer distance and its gradient. Where a nearest pair coincides exactly
/// the norm is not differentiable and contributes no gradient.
pub fn chamfer_with_grad<T: Scalar>(
    a: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
) -> Result<(T, ChamferGrad<T>)> {
    check(a, b)?;
    let mut da = Array2::zeros(a.raw_dim());
    let mut db = Array2::zeros(b.raw_dim());
    let wa = T::one() / T::from_usize(a.nrows());
    let wb = T::one() / T::from_usize(b.nrows());
    let forward = directed(a, b, |i, j, d| {
        if d > T::zero() {
            for c in 0..a.ncols() {
                let g = (a[[i, c]] - b[[j, c]]) / d * wa;
                da[[i, c]] = da[[i, c]] + g;
                db[[j, c]] = db[[j, c]] - g;
            }
        }
    });
    let backward = directed(b, a, |i, j, d| {
        if d > T::zero() {
            for c in 0..a.ncols() {
                let g = (b[[i, c]] - a[[j, c]]) / d * wb;
                db[[i, c]] = db[[i, c]] + g;
                da[[j, c]] = da[[j, c]] - g;
            }
        }
    });
    Ok((forward + backward, ChamferGrad { da, db }))
}

fn check<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("chamfer distance needs two non-empty clouds"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "chamfer inputs disagree on dimension: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Mean over rows of `from` of the distance to the nearest row of `to`.
/// `visit(i, j, d)` sees each row, its nearest partner and the distance.
fn directed<T: Scalar>(
    from: ArrayView2<'_, T>,
    to: ArrayView2<'_, T>,
    mut visit: impl FnMut(usize, usize, T),
) -> T {
    let dims = from.ncols();
    let mut total = T::zero();
    for i in 0..from.nrows() {
        let mut best = T::infinity();
        let mut best_j = 0;
        for j in 0..to.nrows() {
            let mut d = T::zero();
            for c in 0..dims {
                let t = from[[i, c]] - to[[j, c]];
                d = d + t * t;
            }
            if d < best {
                best = d;
                best_j = j;
            }
        }
        let d = best.sqrt();
        visit(i, best_j, d);
        total = total + d;
    }
    total / T::from_usize(from.nrows())
}
