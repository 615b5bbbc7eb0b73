use std::f64::consts::TAU;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::UnitSphere;

use super::body::Capsule;
use crate::error::{Error, Result};
use crate::geometry::{vec3, Point3, PointCloud};

/// `n` points on the capsule surfaces, area-weighted across capsules.
/// Points falling inside a neighboring capsule are kept.
pub fn full_surface_sample<R: Rng + ?Sized>(capsules: &[Capsule], n: usize, rng: &mut R) -> Result<PointCloud> {
    let (points, _) = sample_surface_indexed(capsules, n, rng)?;
    PointCloud::new(points)
}

/// Like [`full_surface_sample`] but also returns the source capsule of each point.
pub fn sample_surface_indexed<R: Rng + ?Sized>(
    capsules: &[Capsule],
    n: usize,
    rng: &mut R,
) -> Result<(Vec<Point3>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("surface sample needs at least one point"));
    }
    let areas: Vec<f64> = capsules.iter().map(Capsule::area).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid(format!("capsule areas: {e}")))?;
    let mut points = Vec::with_capacity(n);
    let mut owners = Vec::with_capacity(n);
    for _ in 0..n {
        let i = pick.sample(rng);
        points.push(sample_capsule(&capsules[i], areas[i], rng));
        owners.push(i);
    }
    Ok((points, owners))
}

fn sample_capsule<R: Rng + ?Sized>(c: &Capsule, area: f64, rng: &mut R) -> Point3 {
    let axis_vec = vec3::sub(c.b, c.a);
    let len = vec3::norm(axis_vec);
    let side = TAU * c.radius * len;
    let dir: [f64; 3] = UnitSphere.sample(rng);
    if len == 0.0 {
        return vec3::add(c.a, vec3::scale(dir, c.radius));
    }
    let axis = vec3::scale(axis_vec, 1.0 / len);
    if rng.random::<f64>() * area < side {
        let u = vec3::orthonormal(axis);
        let v = vec3::cross(axis, u);
        let theta = rng.random_range(0.0..TAU);
        let radial = vec3::add(vec3::scale(u, theta.cos()), vec3::scale(v, theta.sin()));
        let along = rng.random_range(0.0..=len);
        return vec3::add(vec3::add(c.a, vec3::scale(axis, along)), vec3::scale(radial, c.radius));
    }
    // A uniform point on a whole sphere, folded onto the outward hemisphere
    // of whichever end it belongs to; both ends together cover one sphere.
    let along = vec3::dot(dir, axis);
    if along > 0.0 {
        vec3::add(c.b, vec3::scale(dir, c.radius))
    } else {
        vec3::add(c.a, vec3::scale(dir, c.radius))
    }
}
