//! Synthetic multi-view LiDAR pedestrians: a capsule body with ten shape
//! coefficients, sinusoidal walking, ray-cast scans from sensors arranged
//! around the walking area and full-surface ground truth for completion.

mod body;
mod dataset;
mod sensor;
mod surface;

pub use body::{
    capsule_bounds, make_identity, pose_at, BodyModel, Capsule, GaitParams, JointAngles, Pose, ShapeParams, BETA_RANGE,
    SEGMENTS, SHAPE_DIM,
};
pub use dataset::{
    beta_distance, draw_identities, generate_dataset, FrameRecord, IdentityRecord, Manifest, SequenceRecord, Split,
    SplitPolicy, SynthConfig, MANIFEST_FILE,
};
pub use sensor::{cast_ray, ray_capsule, raycast_scan, trace, Hit, SensorConfig, NOISE_CLIP};
pub use surface::{full_surface_sample, sample_surface_indexed};
