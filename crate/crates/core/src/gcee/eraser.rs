use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::geometry::{knn, NeighborGraph};
use crate::scalar::Scalar;

/// Correlation of every supplementary-frame descriptor with the projected
/// salient vector: `R = F_s · (f_p · ω)ᵀ`, with `ω` of shape `D_C x D`.
pub fn correlate<T: Scalar>(
    f_s: ArrayView2<'_, T>,
    f_p: ArrayView1<'_, T>,
    omega: ArrayView2<'_, T>,
) -> Result<Array1<T>> {
    if omega.nrows() != f_p.len() || omega.ncols() != f_s.ncols() {
        return Err(Error::invalid(format!(
            "correlation shapes disagree: F_s {:?}, f_p {}, omega {:?}",
            f_s.dim(),
            f_p.len(),
            omega.dim()
        )));
    }
    Ok(f_s.dot(&f_p.dot(&omega)))
}

#[derive(Debug, Clone)]
pub struct CorrelateGrad<T> {
    pub f_s: Array2<T>,
    pub f_p: Array1<T>,
    pub omega: Array2<T>,
}

pub fn correlate_backward<T: Scalar>(
    f_s: ArrayView2<'_, T>,
    f_p: ArrayView1<'_, T>,
    omega: ArrayView2<'_, T>,
    grad_r: ArrayView1<'_, T>,
) -> CorrelateGrad<T> {
    let projected = f_p.dot(&omega);
    let g_projected = f_s.t().dot(&grad_r);
    let outer = |a: ArrayView1<'_, T>, b: ArrayView1<'_, T>| {
        Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
    };
    CorrelateGrad {
        f_s: outer(grad_r, projected.view()),
        f_p: omega.dot(&g_projected),
        omega: outer(f_p, g_projected.view()),
    }
}

/// Binary erase mask: `false` marks a row to zero out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EraseMask {
    keep: Vec<bool>,
    center: usize,
}

impl EraseMask {
    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keeps(&self, i: usize) -> bool {
        self.keep[i]
    }

    /// Point whose neighborhood was selected.
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn zero_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    /// The mask as 0/1 values.
    pub fn as_binary(&self) -> Vec<u8> {
        self.keep.iter().map(|&k| k as u8).collect()
    }

    pub fn erased(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep.iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i)
    }
}

/// Selects the region (a point plus its `k_b` feature-space neighbors) with
/// the largest summed correlation and masks it out.
pub fn binarize<T: Scalar>(r: ArrayView1<'_, T>, f_s: ArrayView2<'_, T>, k_b: usize) -> Result<EraseMask> {
    if r.len() != f_s.nrows() {
        return Err(Error::invalid(format!(
            "correlation has {} entries for {} feature rows",
            r.len(),
            f_s.nrows()
        )));
    }
    if k_b + 1 > f_s.nrows() {
        return Err(Error::invalid(format!(
            "erase region of {} points exceeds the {} available",
            k_b + 1,
            f_s.nrows()
        )));
    }
    let graph = knn(f_s, k_b + 1, true)?;
    binarize_with_graph(r, &graph, k_b)
}

/// As [`binarize`], reusing a self-inclusive graph with at least `k_b + 1`
/// neighbors per point.
pub fn binarize_with_graph<T: Scalar>(r: ArrayView1<'_, T>, graph: &NeighborGraph, k_b: usize) -> Result<EraseMask> {
    let n = r.len();
    if graph.num_points() != n || !graph.includes_self() || graph.k() < k_b + 1 {
        return Err(Error::invalid(format!(
            "binarization needs a self-inclusive graph over {n} points with k >= {}",
            k_b + 1
        )));
    }
    let region_score = |i: usize| {
        graph.neighbors(i)[..=k_b]
            .iter()
            .fold(T::zero(), |acc, &j| acc + r[j as usize])
    };
    let mut center = 0;
    let mut best = region_score(0);
    for i in 1..n {
        let s = region_score(i);
        if s > best {
            best = s;
            center = i;
        }
    }
    let mut keep = vec![true; n];
    for &j in &graph.neighbors(center)[..=k_b] {
        keep[j as usize] = false;
    }
    Ok(EraseMask { keep, center })
}

/// Zeroes the masked rows of `f_s`.
pub fn erase<T: Scalar>(f_s: ArrayView2<'_, T>, mask: &EraseMask) -> Result<Array2<T>> {
    if mask.len() != f_s.nrows() {
        return Err(Error::invalid(format!(
            "mask of length {} for {} feature rows",
            mask.len(),
            f_s.nrows()
        )));
    }
    let mut out = f_s.to_owned();
    for i in mask.erased() {
        out.row_mut(i).fill(T::zero());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, GRAD_TOL_F64};
    use crate::nn::glorot_uniform;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn correlate_examples() {
        let f_s = array![[1.0f64, 0.0], [0.0, 1.0]];
        let eye = Array2::<f64>::eye(2);
        let r = correlate(f_s.view(), array![1.0, 0.0].view(), eye.view()).unwrap();
        assert_eq!(r, array![1.0, 0.0]);
        let zero = correlate(f_s.view(), array![0.0, 0.0].view(), eye.view()).unwrap();
        assert_eq!(zero, array![0.0, 0.0]);
        assert!(correlate(f_s.view(), array![1.0].view(), eye.view()).is_err());
    }

    #[test]
    fn correlate_is_linear_in_salient_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f_s = glorot_uniform::<f64, _>(7, 4, &mut rng);
        let omega = glorot_uniform::<f64, _>(3, 4, &mut rng);
        let f_p = array![0.25, -0.5, 1.0];
        let base = correlate(f_s.view(), f_p.view(), omega.view()).unwrap();
        let scaled = correlate(f_s.view(), (&f_p * 2.0).view(), omega.view()).unwrap();
        assert_eq!(scaled, base * 2.0);
    }

    #[test]
    fn correlate_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_s = glorot_uniform::<f64, _>(5, 4, &mut rng);
        let omega = glorot_uniform::<f64, _>(3, 4, &mut rng);
        let f_p = array![0.3, -0.7, 0.2];
        let w = array![1.0, -2.0, 0.5, 0.1, 0.9];
        let g = correlate_backward(f_s.view(), f_p.view(), omega.view(), w.view());
        let loss = |fs: &Array2<f64>, fp: &Array1<f64>, om: &Array2<f64>| {
            correlate(fs.view(), fp.view(), om.view()).unwrap().dot(&w)
        };
        let flat: Vec<f64> = f_s.iter().copied().collect();
        let r = check_gradient(
            |p| loss(&Array2::from_shape_vec((5, 4), p.to_vec()).unwrap(), &f_p, &omega),
            &flat,
            g.f_s.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let r = check_gradient(
            |p| loss(&f_s, &Array1::from(p.to_vec()), &omega),
            f_p.as_slice().unwrap(),
            g.f_p.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let flat: Vec<f64> = omega.iter().copied().collect();
        let r = check_gradient(
            |p| loss(&f_s, &f_p, &Array2::from_shape_vec((3, 4), p.to_vec()).unwrap()),
            &flat,
            g.omega.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn full_cloud_region() {
        let f = array![[0.0f64], [1.0], [5.0]];
        let mask = binarize(array![0.1, 0.2, 0.3].view(), f.view(), 2).unwrap();
        assert_eq!(mask.as_binary(), vec![0, 0, 0]);
    }

    #[test]
    fn picks_highest_region() {
        // points 0 and 2 are mutual nearest neighbors in feature space
        let f = array![[0.0f64], [10.0], [0.5]];
        let mask = binarize(array![0.9, 0.1, 0.8].view(), f.view(), 1).unwrap();
        assert_eq!(mask.as_binary(), vec![0, 1, 0]);
        assert_eq!(mask.center(), 0);
        assert_eq!(mask.zero_count(), 2);
    }

    #[test]
    fn region_larger_than_cloud_is_rejected() {
        let f = array![[0.0f64], [1.0]];
        assert!(binarize(array![0.0, 0.0].view(), f.view(), 2).is_err());
    }

    #[test]
    fn erase_examples() {
        let f = array![[1.0f64, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let keep_all = EraseMask {
            keep: vec![true; 3],
            center: 0,
        };
        assert_eq!(erase(f.view(), &keep_all).unwrap(), f);
        let drop_all = EraseMask {
            keep: vec![false; 3],
            center: 0,
        };
        assert_eq!(erase(f.view(), &drop_all).unwrap(), Array2::<f64>::zeros((3, 2)));
        let mask = binarize(array![0.0, 1.0, 0.9].view(), f.view(), 1).unwrap();
        let out = erase(f.view(), &mask).unwrap();
        let zero_rows = out.rows().into_iter().filter(|r| r.iter().all(|v| *v == 0.0)).count();
        assert_eq!(zero_rows, 2);
        assert!(erase(f.view(), &EraseMask { keep: vec![true], center: 0 }).is_err());
    }
}
