use ndarray::{Array, Array1, Array2, ArrayView1, ArrayView2, Axis, Dimension};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Negative-side slope used by every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `x · weight + bias`, with `bias` broadcast over rows.
pub fn affine<T: Scalar>(
    x: ArrayView2<'_, T>,
    weight: ArrayView2<'_, T>,
    bias: ArrayView1<'_, T>,
) -> Result<Array2<T>> {
    if x.ncols() != weight.nrows() || weight.ncols() != bias.len() {
        return Err(Error::invalid(format!(
            "affine shapes disagree: x {:?}, weight {:?}, bias {}",
            x.dim(),
            weight.dim(),
            bias.len()
        )));
    }
    Ok(x.dot(&weight) + &bias)
}

#[derive(Debug, Clone)]
pub struct AffineGrad<T> {
    pub x: Array2<T>,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

pub fn affine_backward<T: Scalar>(
    x: ArrayView2<'_, T>,
    weight: ArrayView2<'_, T>,
    grad_out: ArrayView2<'_, T>,
) -> AffineGrad<T> {
    AffineGrad {
        x: grad_out.dot(&weight.t()),
        weight: x.t().dot(&grad_out),
        bias: grad_out.sum_axis(Axis(0)),
    }
}

pub fn leaky_relu<T: Scalar, D: Dimension>(x: &Array<T, D>, slope: T) -> Array<T, D> {
    x.mapv(|v| if v >= T::zero() { v } else { slope * v })
}

/// Gradient through LeakyReLU given the pre-activation input.
pub fn leaky_relu_backward<T: Scalar, D: Dimension>(
    pre: &Array<T, D>,
    grad_out: &Array<T, D>,
    slope: T,
) -> Array<T, D> {
    let mut g = grad_out.clone();
    g.zip_mut_with(pre, |g, &p| {
        if p < T::zero() {
            *g = *g * slope;
        }
    });
    g
}

/// Channel-wise max over rows. Also returns the winning row per column
/// (lowest index on ties) for the backward pass.
pub fn global_max_pool<T: Scalar>(f: ArrayView2<'_, T>) -> Result<(Array1<T>, Vec<usize>)> {
    if f.nrows() == 0 {
        return Err(Error::invalid("max-pool over an empty feature matrix"));
    }
    let mut out = f.row(0).to_owned();
    let mut arg = vec![0usize; f.ncols()];
    for (i, row) in f.rows().into_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > out[c] {
                out[c] = v;
                arg[c] = i;
            }
        }
    }
    Ok((out, arg))
}

pub fn global_max_pool_backward<T: Scalar>(
    argmax: &[usize],
    grad_out: ArrayView1<'_, T>,
    rows: usize,
) -> Array2<T> {
    let mut g = Array2::zeros((rows, argmax.len()));
    for (c, &r) in argmax.iter().enumerate() {
        g[[r, c]] = g[[r, c]] + grad_out[c];
    }
    g
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: ArrayView1<'_, T>, label: usize) -> Result<(T, Array1<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad = exp / sum;
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

/// Mean squared error and its gradient with respect to `a`.
pub fn mse<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<(T, Array1<T>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "mse needs equal non-zero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = T::from_usize(a.len());
    let diff = &a - &b;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let two = T::from_f64(2.0);
    Ok((loss, diff.mapv(|d| two * d / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, GRAD_TOL_F64};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn affine_examples() {
        let x = array![[1.0f64, 2.0]];
        let y = affine(x.view(), array![[1.0], [1.0]].view(), array![0.0].view()).unwrap();
        assert_eq!(y, array![[3.0]]);
        let eye = Array2::<f64>::eye(2);
        let x = array![[0.5f64, -1.5], [2.0, 3.0]];
        assert_eq!(affine(x.view(), eye.view(), Array1::zeros(2).view()).unwrap(), x);
        assert!(affine(x.view(), Array2::zeros((3, 1)).view(), Array1::zeros(1).view()).is_err());
    }

    #[test]
    fn affine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 3, 5);
        let b = random(&mut rng, 1, 5).row(0).to_owned();
        let gy = random(&mut rng, 4, 5);
        let g = affine_backward(x.view(), w.view(), gy.view());
        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            (affine(x.view(), w.view(), b.view()).unwrap() * &gy).sum()
        };
        let flat_w: Vec<f64> = w.iter().copied().collect();
        let r = check_gradient(
            |p| loss(&x, &Array2::from_shape_vec((3, 5), p.to_vec()).unwrap(), &b),
            &flat_w,
            g.weight.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let flat_x: Vec<f64> = x.iter().copied().collect();
        let r = check_gradient(
            |p| loss(&Array2::from_shape_vec((4, 3), p.to_vec()).unwrap(), &w, &b),
            &flat_x,
            g.x.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let r = check_gradient(
            |p| loss(&x, &w, &Array1::from(p.to_vec())),
            b.as_slice().unwrap(),
            g.bias.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn leaky_relu_values_and_gradient() {
        let x = array![0.0f64, 1.5, 3.0];
        assert_eq!(leaky_relu(&x, 0.2), x);
        assert!((leaky_relu(&array![-1.0f64], 0.2)[0] + 0.2).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 4).mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let gy = random(&mut rng, 3, 4);
        let g = leaky_relu_backward(&x, &gy, 0.2);
        let flat: Vec<f64> = x.iter().copied().collect();
        let r = check_gradient(
            |p| (leaky_relu(&Array2::from_shape_vec((3, 4), p.to_vec()).unwrap(), 0.2) * &gy).sum(),
            &flat,
            g.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn max_pool_examples() {
        let f = array![[1.0f64, 5.0], [3.0, 2.0]];
        let (out, arg) = global_max_pool(f.view()).unwrap();
        assert_eq!(out, array![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let single = array![[4.0f64, -1.0]];
        assert_eq!(global_max_pool(single.view()).unwrap().0, array![4.0, -1.0]);
        let swapped = array![[3.0f64, 2.0], [1.0, 5.0]];
        assert_eq!(global_max_pool(swapped.view()).unwrap().0, out);
        assert!(global_max_pool(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn max_pool_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random(&mut rng, 6, 4);
        let gy = array![0.3, -1.0, 2.0, 0.5];
        let (_, arg) = global_max_pool(f.view()).unwrap();
        let g = global_max_pool_backward(&arg, gy.view(), 6);
        let flat: Vec<f64> = f.iter().copied().collect();
        let r = check_gradient(
            |p| {
                let m = Array2::from_shape_vec((6, 4), p.to_vec()).unwrap();
                global_max_pool(m.view()).unwrap().0.dot(&gy)
            },
            &flat,
            g.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = softmax_cross_entropy(array![0.0f64, 0.0].view(), 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = softmax_cross_entropy(array![20.0f64, -20.0].view(), 0).unwrap();
        assert!(l < 1e-15);
        assert!(softmax_cross_entropy(array![0.0f64].view(), 1).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = array![0.3f64, -1.2, 2.0, 0.7];
        let (_, g) = softmax_cross_entropy(logits.view(), 2).unwrap();
        let r = check_gradient(
            |p| softmax_cross_entropy(Array1::from(p.to_vec()).view(), 2).unwrap().0,
            logits.as_slice().unwrap(),
            g.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn mse_examples_and_gradient() {
        let a = Array1::<f64>::from(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(mse(a.view(), a.view()).unwrap().0, 0.0);
        let mut e = Array1::<f64>::zeros(10);
        e[0] = 1.0;
        assert!((mse(e.view(), Array1::zeros(10).view()).unwrap().0 - 0.1).abs() < 1e-15);
        assert!(mse(e.view(), Array1::zeros(9).view()).is_err());

        let b = a.mapv(|v| v * v - 0.3);
        let (_, g) = mse(a.view(), b.view()).unwrap();
        let r = check_gradient(
            |p| mse(Array1::from(p.to_vec()).view(), b.view()).unwrap().0,
            a.as_slice().unwrap(),
            g.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }
}
