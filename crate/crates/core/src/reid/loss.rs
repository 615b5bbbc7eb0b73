use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::softmax_cross_entropy;
use crate::scalar::Scalar;

/// Batch-hard triplet loss over the rows of `emb` and its gradient.
///
/// For each anchor the farthest same-label row and the nearest other-label
/// row are found (ties go to the lower index) and `max(0, d⁺ − d⁻ + margin)`
/// is averaged over anchors that have at least one positive.
pub fn batch_hard_triplet<T: Scalar>(emb: ArrayView2<'_, T>, labels: &[usize], margin: T) -> Result<(T, Array2<T>)> {
    let n = emb.nrows();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} embeddings", labels.len())));
    }
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::invalid("batch-hard triplet needs at least two labels"));
    }
    let dist = pairwise_distances(emb);
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut terms = Vec::new();
    for a in 0..n {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if pos.is_none_or(|p| dist[[a, j]] > dist[[a, p]]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|q| dist[[a, j]] < dist[[a, q]]) {
                neg = Some(j);
            }
        }
        let (Some(p), Some(q)) = (pos, neg) else { continue };
        let hinge = dist[[a, p]] - dist[[a, q]] + margin;
        terms.push((a, p, q, hinge));
    }
    if terms.is_empty() {
        return Err(Error::invalid("no anchor has a positive in the batch"));
    }
    let count = T::from_usize(terms.len());
    let mut loss = T::zero();
    for &(a, p, q, hinge) in &terms {
        if hinge <= T::zero() {
            continue;
        }
        loss = loss + hinge;
        add_distance_grad(emb, &dist, a, p, T::one() / count, &mut grad);
        add_distance_grad(emb, &dist, a, q, -T::one() / count, &mut grad);
    }
    Ok((loss / count, grad))
}

fn pairwise_distances<T: Scalar>(emb: ArrayView2<'_, T>) -> Array2<T> {
    let n = emb.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = emb
                .row(i)
                .iter()
                .zip(emb.row(j))
                .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
                .sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

// d‖a − b‖ is (a − b)/‖a − b‖; coincident rows get the zero subgradient.
fn add_distance_grad<T: Scalar>(emb: ArrayView2<'_, T>, dist: &Array2<T>, a: usize, b: usize, w: T, grad: &mut Array2<T>) {
    let d = dist[[a, b]];
    if d <= T::zero() {
        return;
    }
    for c in 0..emb.ncols() {
        let g = w * (emb[[a, c]] - emb[[b, c]]) / d;
        grad[[a, c]] = grad[[a, c]] + g;
        grad[[b, c]] = grad[[b, c]] - g;
    }
}

/// Mean cross-entropy over rows of `logits` and its gradient.
pub fn cross_entropy<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    let n = logits.nrows();
    if labels.len() != n || n == 0 {
        return Err(Error::invalid(format!("{} labels for {n} logit rows", labels.len())));
    }
    let scale = T::one() / T::from_usize(n);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = T::zero();
    for (i, &l) in labels.iter().enumerate() {
        let (v, g) = softmax_cross_entropy(logits.row(i), l)?;
        loss = loss + v;
        grad.row_mut(i).assign(&(g * scale));
    }
    Ok((loss * scale, grad))
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReidLossParts {
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
}

#[derive(Debug, Clone)]
pub struct ReidLoss<T> {
    pub parts: ReidLossParts,
    pub grad_logits: Array2<T>,
    pub grad_embeddings: Array2<T>,
}

/// `CE + γ · triplet` over one batch of sequences; with `γ = 0` the triplet
/// term is not evaluated.
pub fn reid_loss<T: Scalar>(
    logits: ArrayView2<'_, T>,
    labels: &[usize],
    embeddings: ArrayView2<'_, T>,
    gamma: f64,
    margin: f64,
) -> Result<ReidLoss<T>> {
    if !(gamma >= 0.0) || !(margin >= 0.0) {
        return Err(Error::invalid("gamma and margin must be non-negative"));
    }
    let (ce, grad_logits) = cross_entropy(logits, labels)?;
    let (triplet, grad_embeddings) = if gamma > 0.0 {
        let (t, g) = batch_hard_triplet(embeddings, labels, T::from_f64(margin))?;
        (t.as_f64(), g * T::from_f64(gamma))
    } else {
        (0.0, Array2::zeros(embeddings.raw_dim()))
    };
    let ce = ce.as_f64();
    Ok(ReidLoss {
        parts: ReidLossParts {
            total: ce + gamma * triplet,
            ce,
            triplet,
        },
        grad_logits,
        grad_embeddings,
    })
}
