use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::body::{capsule_bounds, make_identity, pose_at, BodyModel, Capsule, GaitParams, ShapeParams};
use super::sensor::{raycast_scan, SensorConfig, NOISE_CLIP};
use super::surface::full_surface_sample;
use crate::error::{Error, Result};
use crate::geometry::{lpc, normalize_to_box_center, vec3, Point3};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;

// Seed path tags.
const TAG_IDENTITY: u64 = 1;
const TAG_WALK: u64 = 2;
const TAG_SCAN: u64 = 3;
const TAG_TRUTH: u64 = 4;

/// How sequences are assigned to the train and test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitPolicy {
    /// The last `round(n * test_fraction)` identities are held out entirely.
    ByIdentity { test_fraction: f64 },
    /// Sequences `0..train_sequences` of every identity train, the rest test.
    BySequence { train_sequences: usize },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::ByIdentity { test_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub identities: usize,
    /// Sensors around the walking area, evenly spaced in azimuth.
    pub views: usize,
    /// Walks recorded per identity; each walk is seen by every view.
    pub sequences: usize,
    pub frames: usize,
    /// Distance of each sensor from the rig center, meters.
    pub rig_radius: f64,
    pub sensor_height: f64,
    /// Scan pattern shared by all views. Its pose is replaced by the rig layout.
    pub sensor: SensorConfig,
    /// Points in each full-surface ground-truth cloud.
    pub truth_points: usize,
    /// Minimum L2 distance between any two identities' shape vectors (0 disables).
    pub min_beta_separation: f64,
    pub split: SplitPolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 12,
            views: 4,
            sequences: 1,
            frames: 30,
            rig_radius: 5.0,
            sensor_height: 1.0,
            sensor: SensorConfig::default(),
            truth_points: 512,
            min_beta_separation: 0.0,
            split: SplitPolicy::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.views == 0 || self.sequences == 0 || self.frames == 0 {
            return Err(Error::Config("identities, views, sequences and frames must all be at least 1".into()));
        }
        if self.truth_points == 0 {
            return Err(Error::Config("truth_points must be at least 1".into()));
        }
        if !(self.rig_radius > 0.0) {
            return Err(Error::Config("rig_radius must be positive".into()));
        }
        match self.split {
            SplitPolicy::ByIdentity { test_fraction } if !(0.0..=1.0).contains(&test_fraction) => {
                return Err(Error::Config("test_fraction must lie in [0, 1]".into()));
            }
            SplitPolicy::BySequence { train_sequences } if train_sequences > self.sequences => {
                return Err(Error::Config("train_sequences exceeds sequences".into()));
            }
            _ => {}
        }
        self.sensor.validate()
    }

    /// Sensor poses: view `v` sits at azimuth `2πv / views`, aimed at the rig center.
    pub fn rig(&self) -> Vec<SensorConfig> {
        (0..self.views)
            .map(|v| {
                let az = TAU * v as f64 / self.views as f64;
                SensorConfig {
                    position: [self.rig_radius * az.cos(), self.rig_radius * az.sin(), self.sensor_height],
                    target: [0.0, 0.0, self.sensor_height],
                    ..self.sensor.clone()
                }
            })
            .collect()
    }

    fn split_of(&self, identity: usize, sequence: usize) -> Split {
        let test = match self.split {
            SplitPolicy::ByIdentity { test_fraction } => {
                let n_test = (self.identities as f64 * test_fraction).round() as usize;
                identity >= self.identities - n_test.min(self.identities)
            }
            SplitPolicy::BySequence { train_sequences } => sequence >= train_sequences,
        };
        if test {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: usize,
    pub beta: ShapeParams,
    pub gait: GaitParams,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    /// Seconds; equal across views of the same walk and frame.
    pub timestamp: f64,
    pub cloud: String,
    pub ground_truth: String,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub identity: usize,
    pub sequence: usize,
    pub view: usize,
    pub split: Split,
    /// Walking direction, radians from `+x`.
    pub heading: f64,
    /// Capture condition label for real data (e.g. lighting); unset for synthetic scans.
    pub condition: Option<String>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub generator: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub sensors: Vec<SensorConfig>,
    pub identities: Vec<IdentityRecord>,
    pub sequences: Vec<SequenceRecord>,
}

impl Manifest {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Reads `manifest.json` from a dataset directory, or a manifest file directly.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                kind: "manifest",
                reason: format!("unsupported format {}", m.format),
            });
        }
        Ok(m)
    }
}

/// Shape vectors and gaits for every identity, honoring the separation floor.
pub fn draw_identities(config: &SynthConfig, seed: u64) -> Result<Vec<(BodyModel, GaitParams)>> {
    const MAX_ATTEMPTS: u64 = 10_000;
    let mut out: Vec<(BodyModel, GaitParams)> = Vec::with_capacity(config.identities);
    for id in 0..config.identities {
        let mut found = None;
        for attempt in 0..MAX_ATTEMPTS {
            let cand = make_identity(seed::derive(seed, &[TAG_IDENTITY, id as u64, attempt]));
            let far_enough = out.iter().all(|(b, _)| beta_distance(&b.beta, &cand.0.beta) >= config.min_beta_separation);
            if far_enough {
                found = Some(cand);
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            Error::Config(format!(
                "could not place identity {id} at shape distance {} from the others",
                config.min_beta_separation
            ))
        })?);
    }
    Ok(out)
}

pub fn beta_distance(a: &ShapeParams, b: &ShapeParams) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Where a walk is at each frame.
#[derive(Debug, Clone, Copy)]
struct Walk {
    heading: f64,
    start_time: f64,
    start: Point3,
}

impl Walk {
    fn new(config: &SynthConfig, gait: &GaitParams, seed: u64, id: usize, seq: usize) -> Self {
        let mut rng = seed::rng(seed, &[TAG_WALK, id as u64, seq as u64]);
        let heading = rng.random_range(0.0..TAU);
        let start_time = rng.random_range(0.0..1.0 / gait.frequency);
        let duration = (config.frames - 1) as f64 / config.sensor.frame_rate;
        let half = gait.speed * duration / 2.0;
        Self {
            heading,
            start_time,
            start: [-half * heading.cos(), -half * heading.sin(), 0.0],
        }
    }

    /// World-space capsules at `elapsed` seconds into the walk.
    fn capsules(&self, body: &BodyModel, gait: &GaitParams, elapsed: f64) -> Vec<Capsule> {
        let pose = pose_at(body, gait, self.start_time + elapsed);
        let (s, c) = self.heading.sin_cos();
        let offset = vec3::add(self.start, [c * gait.speed * elapsed, s * gait.speed * elapsed, 0.0]);
        pose.capsules
            .iter()
            .map(|cap| {
                cap.transformed(|p| {
                    let l = vec3::sub(p, pose.root);
                    vec3::add(offset, [c * l[0] - s * l[1], s * l[0] + c * l[1], l[2]])
                })
            })
            .collect()
    }
}

fn frame_dir(id: usize, seq: usize, view: usize) -> String {
    format!("frames/id{id:03}/s{seq:02}_v{view:02}")
}

/// Simulates every identity, walk, frame and view and writes the dataset
/// under `out_dir`. The output is a pure function of `(config, seed)`.
pub fn generate_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>, seed: u64) -> Result<Manifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let people = draw_identities(config, seed)?;
    let sensors = config.rig();
    let margin = NOISE_CLIP * config.sensor.noise_sigma;

    let jobs: Vec<(usize, usize)> = (0..config.identities)
        .flat_map(|i| (0..config.sequences).map(move |s| (i, s)))
        .collect();
    let per_walk = jobs
        .par_iter()
        .map(|&(id, seq)| -> Result<Vec<SequenceRecord>> {
            let (body, gait) = &people[id];
            let walk = Walk::new(config, gait, seed, id, seq);
            let mut records: Vec<SequenceRecord> = (0..config.views)
                .map(|view| SequenceRecord {
                    identity: id,
                    sequence: seq,
                    view,
                    split: config.split_of(id, seq),
                    heading: walk.heading,
                    condition: None,
                    frames: Vec::with_capacity(config.frames),
                })
                .collect();
            for view in 0..config.views {
                let dir = out_dir.join(frame_dir(id, seq, view));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            for f in 0..config.frames {
                let elapsed = f as f64 / config.sensor.frame_rate;
                let capsules = walk.capsules(body, gait, elapsed);
                let bbox = capsule_bounds(&capsules).padded(margin);
                let path = [id as u64, seq as u64, f as u64];
                let truth = full_surface_sample(
                    &capsules,
                    config.truth_points,
                    &mut seed::rng(seed, &[TAG_TRUTH, path[0], path[1], path[2]]),
                )?;
                let truth = normalize_to_box_center(&truth, &bbox)?;
                let truth_bytes = lpc::encode(&truth);
                for (view, sensor) in sensors.iter().enumerate() {
                    let mut rng = seed::rng(seed, &[TAG_SCAN, path[0], path[1], path[2], view as u64]);
                    let scan = raycast_scan(&capsules, sensor, &mut rng).map_err(|e| {
                        Error::invalid(format!("identity {id} walk {seq} frame {f} view {view}: {e}"))
                    })?;
                    let scan = normalize_to_box_center(&scan, &bbox)?;
                    let rel = format!("{}/f{f:03}.lpc", frame_dir(id, seq, view));
                    let rel_gt = format!("{}/f{f:03}.gt.lpc", frame_dir(id, seq, view));
                    write_file(&out_dir.join(&rel), &lpc::encode(&scan))?;
                    write_file(&out_dir.join(&rel_gt), &truth_bytes)?;
                    records[view].frames.push(FrameRecord {
                        index: f,
                        timestamp: walk.start_time + elapsed,
                        cloud: rel,
                        ground_truth: rel_gt,
                        points: scan.len(),
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        generator: format!("lidreid {}", env!("CARGO_PKG_VERSION")),
        seed,
        config: config.clone(),
        sensors,
        identities: people
            .iter()
            .enumerate()
            .map(|(id, (body, gait))| IdentityRecord {
                id,
                beta: body.beta,
                gait: *gait,
                height: body.height(),
            })
            .collect(),
        sequences: per_walk.into_iter().flatten().collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            identities: 3,
            views: 2,
            sequences: 2,
            frames: 3,
            truth_points: 64,
            sensor: SensorConfig {
                h_rays: 40,
                v_rays: 20,
                ..Default::default()
            },
            split: SplitPolicy::BySequence { train_sequences: 1 },
            ..Default::default()
        }
    }

    #[test]
    fn split_policies() {
        let c = SynthConfig {
            identities: 10,
            split: SplitPolicy::ByIdentity { test_fraction: 0.3 },
            ..Default::default()
        };
        let test: Vec<usize> = (0..10).filter(|&i| c.split_of(i, 0) == Split::Test).collect();
        assert_eq!(test, vec![7, 8, 9]);
        let c = small();
        assert_eq!(c.split_of(0, 0), Split::Train);
        assert_eq!(c.split_of(0, 1), Split::Test);
    }

    #[test]
    fn separation_floor_is_respected() {
        let c = SynthConfig {
            identities: 12,
            min_beta_separation: 1.0,
            ..Default::default()
        };
        let people = draw_identities(&c, 5).unwrap();
        for i in 0..people.len() {
            for j in 0..i {
                assert!(beta_distance(&people[i].0.beta, &people[j].0.beta) >= 1.0);
            }
        }
        let impossible = SynthConfig {
            identities: 3,
            min_beta_separation: 100.0,
            ..Default::default()
        };
        assert!(draw_identities(&impossible, 5).is_err());
    }

    #[test]
    fn rig_faces_the_center() {
        let rig = SynthConfig::default().rig();
        assert_eq!(rig.len(), 4);
        for s in &rig {
            assert!((vec3::norm([s.position[0], s.position[1], 0.0]) - 5.0).abs() < 1e-12);
            assert_eq!(s.target, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn walk_passes_through_the_center() {
        let c = SynthConfig::default();
        let (body, gait) = make_identity(1);
        let walk = Walk::new(&c, &gait, 3, 0, 0);
        let mid = (c.frames - 1) as f64 / c.sensor.frame_rate / 2.0;
        let pelvis = walk.capsules(&body, &gait, mid)[0];
        let center = vec3::scale(vec3::add(pelvis.a, pelvis.b), 0.5);
        assert!(center[0].abs() < 1e-9 && center[1].abs() < 1e-9);
    }

    #[test]
    fn generates_the_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        let m = generate_dataset(&c, dir.path(), 4).unwrap();
        assert_eq!(m.sequences.len(), 3 * 2 * 2);
        assert_eq!(m.frame_count(), 3 * 2 * 2 * 3);
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
        for s in &m.sequences {
            for f in &s.frames {
                let cloud = lpc::load(dir.path().join(&f.cloud)).unwrap();
                assert_eq!(cloud.len(), f.points);
                assert_eq!(lpc::load(dir.path().join(&f.ground_truth)).unwrap().len(), 64);
            }
        }
        // Views of the same walk share timestamps.
        let a = &m.sequences[0];
        let b = &m.sequences[1];
        assert_eq!((a.identity, a.sequence, b.view), (b.identity, b.sequence, 1));
        let ts = |s: &SequenceRecord| s.frames.iter().map(|f| f.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(a), ts(b));
    }
}
