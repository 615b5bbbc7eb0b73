//! Point-cloud types and the geometry kernels everything else is built on.

mod chamfer;
mod cloud;
mod knn;
pub mod lpc;
mod resample;
pub mod vec3;

pub use chamfer::{chamfer_distance, chamfer_matrix, chamfer_with_grad, ChamferGrad};
pub use cloud::{normalize_to_box_center, Aabb, PointCloud};
pub use knn::{knn, NeighborGraph};
pub use resample::{resample, resample_with, ResampleMethod};

pub type Point3 = [f64; 3];
