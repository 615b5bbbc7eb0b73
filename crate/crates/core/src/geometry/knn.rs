
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed k-nearest-neighbor graph over the rows of a matrix.
///
/// Each row's list is ordered by ascending Euclidean distance with ties
/// broken by ascending index. With `include_self`, a point's own index always
/// heads its list, so the first `k'` entries of any list are exactly the
/// `k'`-neighbor list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    include_self: bool,
    indices: Vec<u32>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn includes_self(&self) -> bool {
        self.include_self
    }

    pub fn num_points(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// The graph restricted to each list's first `k` entries.
    pub fn truncated(&self, k: usize) -> Result<NeighborGraph> {
        if k == 0 || k > self.k {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-neighbor graph to {k}",
                self.k
            )));
        }
        let n = self.num_points();
        let mut indices = Vec::with_capacity(n * k);
        for i in 0..n {
            indices.extend_from_slice(&self.neighbors(i)[..k]);
        }
        Ok(NeighborGraph {
            k,
            include_self: self.include_self,
            indices,
        })
    }
}

/// Brute-force KNN over the rows of `features`.
pub fn knn<T: Scalar>(features: ArrayView2<'_, T>, k: usize, include_self: bool) -> Result<NeighborGraph> {
    let n = features.nrows();
    let limit = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > limit {
        return Err(Error::invalid(format!(
            "k = {k} out of range for {n} points (include_self = {include_self})"
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("knn input contains non-finite values"));
    }

    let dist = pairwise_sq_dist(features);
    let others = if include_self { k - 1 } else { k };
    let mut indices = Vec::with_capacity(n * k);
    // Sorted running top-k; candidates arrive in index order, so an equal
    // distance never displaces an earlier index.
    let mut best: Vec<(T, u32)> = Vec::with_capacity(others + 1);
    for i in 0..n {
        if include_self {
            indices.push(i as u32);
        }
        if others == 0 {
            continue;
        }
        best.clear();
        let row = &dist[i * n..(i + 1) * n];
        for (j, &d) in row.iter().enumerate() {
            if j == i || (best.len() == others && d >= best[others - 1].0) {
                continue;
            }
            let pos = best.partition_point(|b| b.0 <= d);
            best.insert(pos, (d, j as u32));
            best.truncate(others);
        }
        indices.extend(best.iter().map(|c| c.1));
    }
    Ok(NeighborGraph {
        k,
        include_self,
        indices,
    })
}

fn pairwise_sq_dist<T: Scalar>(x: ArrayView2<'_, T>) -> Vec<T> {
    let (n, d) = x.dim();
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        let a = &data[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let v = sq_dist(a, &data[j * d..(j + 1) * d]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

// Eight independent partial sums so the loop vectorizes; the order is fixed,
// so results stay reproducible.
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let t = x[l] - y[l];
            acc[l] = acc[l] + t * t;
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        let t = x - y;
        tail = tail + t * t;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
