use ndarray::Array2;

use super::Point3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An unordered set of 3-D points in meters.
///
/// Always holds at least one point and every coordinate is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; present for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| super::vec3::add(*p, t)).collect(),
        }
    }

    /// `N x 3` matrix of coordinates in the requested precision.
    pub fn to_matrix<T: Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.points.len(), 3), |(i, j)| T::from_f64(self.points[i][j]))
    }

    pub fn from_matrix<T: Scalar>(m: &Array2<T>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::invalid(format!(
                "expected 3 columns for a point matrix, got {}",
                m.ncols()
            )));
        }
        let points = m
            .rows()
            .into_iter()
            .map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()])
            .collect();
        Self::new(points)
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.points).expect("cloud is non-empty")
    }
}

/// Axis-aligned box, `min <= max` component-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    min: Point3,
    max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if (0..3).any(|k| !(min[k] <= max[k]) || !min[k].is_finite() || !max[k].is_finite()) {
            return Err(Error::invalid(format!("degenerate box: min {min:?}, max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn from_points(points: &[Point3]) -> Option<Self> {
        let first = *points.first()?;
        let (mut min, mut max) = (first, first);
        for p in &points[1..] {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Self { min, max })
    }

    pub fn min(&self) -> Point3 {
        self.min
    }

    pub fn max(&self) -> Point3 {
        self.max
    }

    pub fn center(&self) -> Point3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extent(&self) -> Point3 {
        super::vec3::sub(self.max, self.min)
    }

    /// Grows the box by `margin` on every side.
    pub fn padded(&self, margin: f64) -> Self {
        Self {
            min: [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            max: [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        }
    }

    pub fn union(&self, other: &Aabb) -> Self {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }

    pub fn contains(&self, p: Point3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }
}

const ENCLOSE_TOL: f64 = 1e-6;

/// Translates `cloud` so that the center of `bbox` lands on the origin.
///
/// Point count and order are preserved. The box must enclose the cloud.
pub fn normalize_to_box_center(cloud: &PointCloud, bbox: &Aabb) -> Result<PointCloud> {
    if let Some(i) = cloud.points.iter().position(|p| !bbox.contains(*p, ENCLOSE_TOL)) {
        return Err(Error::invalid(format!(
            "bounding box does not enclose point {i} {:?}",
            cloud.points[i]
        )));
    }
    let c = bbox.center();
    Ok(cloud.translated([-c[0], -c[1], -c[2]]))
}
