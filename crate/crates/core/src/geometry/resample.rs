use rand::seq::index;
use rand::Rng;

use super::{vec3, PointCloud};
use crate::error::{Error, Result};

/// How to shrink a cloud that has more points than requested.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    #[default]
    Random,
    FarthestPoint,
}

/// Brings `cloud` to exactly `n` points using random subsetting.
///
/// Upsampling keeps every input point (in order) and appends `n - N` points
/// drawn uniformly with replacement. Downsampling keeps a uniform random
/// subset without replacement, in input order.
pub fn resample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    resample_with(cloud, n, ResampleMethod::Random, rng)
}

pub fn resample_with<R: Rng + ?Sized>(
    cloud: &PointCloud,
    n: usize,
    method: ResampleMethod,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("resample target must be at least one point"));
    }
    let pts = cloud.points();
    let count = pts.len();
    if count == n {
        return Ok(cloud.clone());
    }
    if count < n {
        let mut out = pts.to_vec();
        out.extend((0..n - count).map(|_| pts[rng.random_range(0..count)]));
        return PointCloud::new(out);
    }
    let mut keep = match method {
        ResampleMethod::Random => index::sample(rng, count, n).into_vec(),
        ResampleMethod::FarthestPoint => farthest_point_indices(pts, n, rng.random_range(0..count)),
    };
    keep.sort_unstable();
    PointCloud::new(keep.into_iter().map(|i| pts[i]).collect())
}

fn farthest_point_indices(pts: &[super::Point3], n: usize, start: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    let mut min_dist = vec![f64::INFINITY; pts.len()];
    let mut current = start;
    for _ in 0..n {
        chosen.push(current);
        let anchor = pts[current];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in pts.iter().enumerate() {
            let d = vec3::dist(*p, anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best.0 {
                best = (min_dist[i], i);
            }
        }
        current = best.1;
    }
    chosen
}
