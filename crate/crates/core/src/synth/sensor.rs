use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::body::Capsule;
use crate::error::{Error, Result};
use crate::geometry::{vec3, Point3, PointCloud};

/// Noise draws are truncated to this many standard deviations.
pub const NOISE_CLIP: f64 = 6.0;

/// Scanning pattern of one virtual LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub position: Point3,
    /// Point the optical axis passes through.
    pub target: Point3,
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub h_rays: usize,
    pub v_rays: usize,
    /// Standard deviation of range noise, meters.
    pub noise_sigma: f64,
    pub frame_rate: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            position: [5.0, 0.0, 1.0],
            target: [0.0, 0.0, 1.0],
            h_fov_deg: 100.0,
            v_fov_deg: 40.0,
            h_rays: 160,
            v_rays: 64,
            noise_sigma: 0.02,
            frame_rate: 10.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < 180.0;
        if !fov_ok(self.h_fov_deg) || !fov_ok(self.v_fov_deg) {
            return Err(Error::Config("sensor fields of view must lie in (0, 180) degrees".into()));
        }
        if self.h_rays == 0 || self.v_rays == 0 {
            return Err(Error::Config("sensor needs at least one ray per axis".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.frame_rate > 0.0) {
            return Err(Error::Config("sensor noise must be >= 0 and frame rate > 0".into()));
        }
        if vec3::dist(self.position, self.target) == 0.0 {
            return Err(Error::Config("sensor target coincides with its position".into()));
        }
        Ok(())
    }

    /// Unit ray directions on a regular angular grid inside the field of view.
    pub fn ray_directions(&self) -> Vec<Point3> {
        let forward = vec3::normalize(vec3::sub(self.target, self.position));
        let mut right = vec3::cross(forward, [0.0, 0.0, 1.0]);
        if vec3::norm(right) < 1e-9 {
            right = vec3::orthonormal(forward);
        }
        let right = vec3::normalize(right);
        let up = vec3::cross(right, forward);
        let step_h = self.h_fov_deg.to_radians() / self.h_rays as f64;
        let step_v = self.v_fov_deg.to_radians() / self.v_rays as f64;
        let mut dirs = Vec::with_capacity(self.h_rays * self.v_rays);
        for j in 0..self.v_rays {
            let el = -self.v_fov_deg.to_radians() / 2.0 + (j as f64 + 0.5) * step_v;
            for i in 0..self.h_rays {
                let az = -self.h_fov_deg.to_radians() / 2.0 + (i as f64 + 0.5) * step_h;
                let horizontal = vec3::add(vec3::scale(forward, az.cos()), vec3::scale(right, az.sin()));
                dirs.push(vec3::add(vec3::scale(horizontal, el.cos()), vec3::scale(up, el.sin())));
            }
        }
        dirs
    }
}

/// Entry distance of a ray into a capsule, if it hits.
pub fn ray_capsule(origin: Point3, dir: Point3, c: &Capsule) -> Option<f64> {
    let ba = vec3::sub(c.b, c.a);
    let oa = vec3::sub(origin, c.a);
    let baba = vec3::dot(ba, ba);
    let bard = vec3::dot(ba, dir);
    let baoa = vec3::dot(ba, oa);
    let rdoa = vec3::dot(dir, oa);
    let oaoa = vec3::dot(oa, oa);
    let r2 = c.radius * c.radius;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let qa = baba - bard * bard;
    if qa > 1e-12 * baba.max(1e-300) {
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r2 * baba;
        let h = qb * qb - qa * qc;
        if h >= 0.0 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                consider(t);
            }
        }
    }
    // Entering through an end cap means entering one of the end spheres.
    for center in [c.a, c.b] {
        let oc = vec3::sub(origin, center);
        let b = vec3::dot(dir, oc);
        let h = b * b - (vec3::dot(oc, oc) - r2);
        if h >= 0.0 {
            consider(-b - h.sqrt());
        }
    }
    best
}

/// Nearest hit along the ray and the capsule it belongs to.
pub fn cast_ray(origin: Point3, dir: Point3, capsules: &[Capsule]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in capsules.iter().enumerate() {
        if let Some(t) = ray_capsule(origin, dir, c) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// One raw return before noise: ray direction, exact range and the hit capsule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub dir: Point3,
    pub range: f64,
    pub capsule: usize,
}

/// Noise-free returns of every ray that hits the body.
pub fn trace(capsules: &[Capsule], sensor: &SensorConfig) -> Result<Vec<Hit>> {
    sensor.validate()?;
    if capsules.is_empty() {
        return Err(Error::invalid("nothing to scan"));
    }
    if let Some(i) = capsules.iter().position(|c| c.signed_distance(sensor.position) <= 0.0) {
        return Err(Error::invalid(format!("sensor sits inside capsule {i}")));
    }
    // Rays that miss the bounding sphere of the whole body skip the capsule tests.
    let bounds = super::body::capsule_bounds(capsules);
    let center = bounds.center();
    let radius = vec3::norm(bounds.extent()) / 2.0;
    let oc = vec3::sub(sensor.position, center);
    let occ = vec3::dot(oc, oc) - radius * radius;
    let mut hits = Vec::new();
    for dir in sensor.ray_directions() {
        let b = vec3::dot(dir, oc);
        if occ > 0.0 && (b > 0.0 || b * b < occ) {
            continue;
        }
        if let Some((range, capsule)) = cast_ray(sensor.position, dir, capsules) {
            hits.push(Hit { dir, range, capsule });
        }
    }
    Ok(hits)
}

/// Single-view scan: nearest hit per ray with truncated Gaussian range noise.
/// Errors if the sensor is inside the body or nothing is hit.
pub fn raycast_scan<R: Rng + ?Sized>(capsules: &[Capsule], sensor: &SensorConfig, rng: &mut R) -> Result<PointCloud> {
    let hits = trace(capsules, sensor)?;
    if hits.is_empty() {
        return Err(Error::invalid("no ray hit the body; check the sensor pose"));
    }
    let points = hits
        .iter()
        .map(|h| {
            let range = h.range + sensor.noise_sigma * truncated_normal(rng);
            vec3::add(sensor.position, vec3::scale(h.dir, range))
        })
        .collect();
    PointCloud::new(points)
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= NOISE_CLIP {
            return z;
        }
    }
}
