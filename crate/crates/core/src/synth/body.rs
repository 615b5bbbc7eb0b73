use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{vec3, Aabb, Point3};

pub const SHAPE_DIM: usize = 10;

/// Body-shape coefficients. Each entry is sampled from `[-1, 1]` and scales
/// one aspect of the body:
///
/// | index | effect |
/// |---|---|
/// | 0 | overall size |
/// | 1 | leg length |
/// | 2 | torso length |
/// | 3 | arm length |
/// | 4 | shoulder width |
/// | 5 | hip width |
/// | 6 | torso girth |
/// | 7 | limb girth |
/// | 8 | head size |
/// | 9 | pelvis girth |
pub type ShapeParams = [f64; SHAPE_DIM];

/// Range each shape coefficient is drawn from.
pub const BETA_RANGE: (f64, f64) = (-1.0, 1.0);

const SPREAD: ShapeParams = [0.08, 0.10, 0.10, 0.10, 0.15, 0.15, 0.25, 0.25, 0.15, 0.25];

/// A segment swept by a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Point3,
    pub b: Point3,
    pub radius: f64,
}

impl Capsule {
    pub fn closest_on_axis(&self, p: Point3) -> Point3 {
        let ab = vec3::sub(self.b, self.a);
        let len2 = vec3::dot(ab, ab);
        let t = if len2 > 0.0 {
            (vec3::dot(vec3::sub(p, self.a), ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        vec3::add(self.a, vec3::scale(ab, t))
    }

    /// Signed distance from `p` to the surface (negative inside).
    pub fn signed_distance(&self, p: Point3) -> f64 {
        vec3::dist(p, self.closest_on_axis(p)) - self.radius
    }

    /// Outward unit normal at a point on (or near) the surface.
    pub fn normal_at(&self, p: Point3) -> Point3 {
        vec3::normalize(vec3::sub(p, self.closest_on_axis(p)))
    }

    pub fn length(&self) -> f64 {
        vec3::dist(self.a, self.b)
    }

    pub fn area(&self) -> f64 {
        2.0 * PI * self.radius * self.length() + 4.0 * PI * self.radius * self.radius
    }

    pub fn bounds(&self) -> Aabb {
        let r = self.radius;
        let lo = |i: usize| self.a[i].min(self.b[i]) - r;
        let hi = |i: usize| self.a[i].max(self.b[i]) + r;
        Aabb::new([lo(0), lo(1), lo(2)], [hi(0), hi(1), hi(2)]).expect("ordered")
    }

    pub fn transformed(&self, f: impl Fn(Point3) -> Point3) -> Capsule {
        Capsule {
            a: f(self.a),
            b: f(self.b),
            radius: self.radius,
        }
    }
}

/// Names of the eleven body segments, in capsule order.
pub const SEGMENTS: [&str; 11] = [
    "pelvis",
    "torso",
    "head",
    "upper_arm_left",
    "upper_arm_right",
    "forearm_left",
    "forearm_right",
    "thigh_left",
    "thigh_right",
    "shin_left",
    "shin_right",
];

/// Segment dimensions in meters, derived from the shape coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub beta: ShapeParams,
    pub ankle_height: f64,
    pub thigh: f64,
    pub shin: f64,
    pub hip_half_width: f64,
    pub pelvis_radius: f64,
    pub torso: f64,
    pub torso_radius: f64,
    pub shoulder_half_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub limb_radius: f64,
    pub neck: f64,
    pub head_radius: f64,
}

impl BodyModel {
    pub fn from_beta(beta: ShapeParams) -> Self {
        let f = |i: usize| 1.0 + SPREAD[i] * beta[i];
        let s = f(0);
        Self {
            beta,
            ankle_height: 0.07 * s,
            thigh: 0.44 * s * f(1),
            shin: 0.44 * s * f(1),
            hip_half_width: 0.09 * s * f(5),
            pelvis_radius: 0.10 * s * f(9),
            torso: 0.45 * s * f(2),
            torso_radius: 0.13 * s * f(6),
            shoulder_half_width: 0.19 * s * f(4),
            upper_arm: 0.30 * s * f(3),
            forearm: 0.28 * s * f(3),
            limb_radius: 0.05 * s * f(7),
            neck: 0.05 * s,
            head_radius: 0.10 * s * f(8),
        }
    }

    fn hip_height(&self) -> f64 {
        self.ankle_height + self.thigh + self.shin
    }

    /// Standing height: ground to the top of the head.
    pub fn height(&self) -> f64 {
        self.hip_height() + 0.05 * self.torso / 0.45 + self.torso + self.neck + self.head_radius * 2.2
    }

    /// Capsules in a body frame facing `+x`, with the pelvis above the origin.
    pub fn capsules(&self, angles: &JointAngles) -> Vec<Capsule> {
        let hip_z = self.hip_height();
        let torso_base = hip_z + 0.05 * self.torso / 0.45;
        let torso_top = torso_base + self.torso;
        let shoulder_z = torso_top - 0.05 * self.torso / 0.45;
        let head_base = torso_top + self.neck + self.head_radius;
        // Limb direction for a swing angle in the sagittal plane: hanging
        // straight down at zero, forward for positive angles.
        let limb = |angle: f64, len: f64| [angle.sin() * len, 0.0, -angle.cos() * len];
        let side = [1.0, -1.0];
        let mut out = vec![
            Capsule {
                a: [0.0, self.hip_half_width, hip_z],
                b: [0.0, -self.hip_half_width, hip_z],
                radius: self.pelvis_radius,
            },
            Capsule {
                a: [0.0, 0.0, torso_base],
                b: [0.0, 0.0, torso_top],
                radius: self.torso_radius,
            },
            Capsule {
                a: [0.0, 0.0, head_base],
                b: [0.0, 0.0, head_base + 0.2 * self.head_radius],
                radius: self.head_radius,
            },
        ];
        let shoulders: Vec<Point3> = side
            .iter()
            .map(|s| [0.0, s * (self.shoulder_half_width + self.limb_radius), shoulder_z])
            .collect();
        let elbows: Vec<Point3> = (0..2)
            .map(|l| vec3::add(shoulders[l], limb(angles.shoulder[l], self.upper_arm)))
            .collect();
        for l in 0..2 {
            out.push(Capsule {
                a: shoulders[l],
                b: elbows[l],
                radius: self.limb_radius * 0.9,
            });
        }
        for l in 0..2 {
            out.push(Capsule {
                a: elbows[l],
                b: vec3::add(elbows[l], limb(angles.shoulder[l] + angles.elbow[l], self.forearm)),
                radius: self.limb_radius * 0.8,
            });
        }
        let hips: Vec<Point3> = side.iter().map(|s| [0.0, s * self.hip_half_width, hip_z]).collect();
        let knees: Vec<Point3> = (0..2).map(|l| vec3::add(hips[l], limb(angles.hip[l], self.thigh))).collect();
        for l in 0..2 {
            out.push(Capsule {
                a: hips[l],
                b: knees[l],
                radius: self.limb_radius * 1.3,
            });
        }
        for l in 0..2 {
            out.push(Capsule {
                a: knees[l],
                b: vec3::add(knees[l], limb(angles.hip[l] - angles.knee[l], self.shin)),
                radius: self.limb_radius,
            });
        }
        out
    }
}

/// Walking style of one pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Full stride cycles per second.
    pub frequency: f64,
    pub hip_amplitude: f64,
    pub knee_amplitude: f64,
    pub arm_amplitude: f64,
    /// Resting elbow flexion.
    pub elbow_flex: f64,
    pub phase: f64,
    /// Meters per second.
    pub speed: f64,
}

/// Joint angles in radians; index 0 is the left side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    pub hip: [f64; 2],
    pub knee: [f64; 2],
    pub shoulder: [f64; 2],
    pub elbow: [f64; 2],
    /// Gait phase driving each leg, wrapped to `[0, 2π)`.
    pub leg_phase: [f64; 2],
}

impl GaitParams {
    pub fn angles_at(&self, t: f64) -> JointAngles {
        let base = TAU * self.frequency * t + self.phase;
        let leg_phase = [base.rem_euclid(TAU), (base + PI).rem_euclid(TAU)];
        let mut a = JointAngles {
            leg_phase,
            ..Default::default()
        };
        for l in 0..2 {
            let p = leg_phase[l];
            a.hip[l] = self.hip_amplitude * p.sin();
            a.knee[l] = self.knee_amplitude * 0.5 * (1.0 + (p + PI / 2.0).sin());
            // Each arm swings against the leg on its own side.
            a.shoulder[l] = -self.arm_amplitude * p.sin();
            a.elbow[l] = self.elbow_flex * (1.0 + 0.3 * (p + PI).sin());
        }
        a
    }
}

/// A body at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub capsules: Vec<Capsule>,
    pub root: Point3,
    pub angles: JointAngles,
}

/// Poses `body` at time `t` walking along `+x` from the origin.
pub fn pose_at(body: &BodyModel, gait: &GaitParams, t: f64) -> Pose {
    let angles = gait.angles_at(t);
    let root = [gait.speed * t, 0.0, 0.0];
    let capsules = body
        .capsules(&angles)
        .into_iter()
        .map(|c| c.transformed(|p| vec3::add(p, root)))
        .collect();
    Pose { capsules, root, angles }
}

/// Axis-aligned bounds of a capsule set.
pub fn capsule_bounds(capsules: &[Capsule]) -> Aabb {
    capsules
        .iter()
        .map(Capsule::bounds)
        .reduce(|a, b| a.union(&b))
        .expect("at least one capsule")
}

/// Draws shape and gait for one pedestrian; a pure function of `seed`.
pub fn make_identity(seed: u64) -> (BodyModel, GaitParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = [0.0; SHAPE_DIM];
    for b in &mut beta {
        *b = rng.random_range(BETA_RANGE.0..=BETA_RANGE.1);
    }
    let gait = GaitParams {
        frequency: rng.random_range(0.8..1.1),
        hip_amplitude: rng.random_range(0.30..0.55),
        knee_amplitude: rng.random_range(0.40..0.90),
        arm_amplitude: rng.random_range(0.15..0.50),
        elbow_flex: rng.random_range(0.10..0.45),
        phase: rng.random_range(0.0..TAU),
        speed: rng.random_range(1.0..1.6),
    };
    (BodyModel::from_beta(beta), gait)
}
