//! Loading a generated dataset back into memory.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{lpc, resample, PointCloud};
use crate::scalar::Scalar;
use crate::synth::{Manifest, SequenceRecord, ShapeParams, Split};

/// A labeled, time-ordered list of frames of one pedestrian seen from one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub identity: usize,
    pub sequence: usize,
    pub view: usize,
    pub frames: Vec<PointCloud>,
}

/// One single-view frame with its completion and shape targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionSample {
    pub identity: usize,
    pub input: PointCloud,
    pub truth: PointCloud,
    pub beta: ShapeParams,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    /// Opens a dataset directory (or its manifest file).
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let manifest = Manifest::load(path)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &SequenceRecord> {
        self.manifest.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn load_sequence(&self, rec: &SequenceRecord) -> Result<SequenceSample> {
        let frames = rec
            .frames
            .iter()
            .map(|f| lpc::load(self.root.join(&f.cloud)))
            .collect::<Result<Vec<_>>>()?;
        if frames.is_empty() {
            return Err(Error::invalid(format!(
                "sequence {} of identity {} (view {}) has no frames",
                rec.sequence, rec.identity, rec.view
            )));
        }
        Ok(SequenceSample {
            identity: rec.identity,
            sequence: rec.sequence,
            view: rec.view,
            frames,
        })
    }

    pub fn sequences(&self, split: Split) -> Result<Vec<SequenceSample>> {
        self.records(split).map(|r| self.load_sequence(r)).collect()
    }

    /// Every frame of the split paired with its ground truth and shape vector.
    pub fn completion_samples(&self, split: Split) -> Result<Vec<CompletionSample>> {
        let mut out = Vec::new();
        for rec in self.records(split) {
            let beta = self
                .manifest
                .identities
                .iter()
                .find(|i| i.id == rec.identity)
                .ok_or_else(|| Error::invalid(format!("identity {} missing from manifest", rec.identity)))?
                .beta;
            for f in &rec.frames {
                if f.ground_truth.is_empty() {
                    return Err(Error::invalid(format!("frame {} has no ground-truth cloud", f.cloud)));
                }
                out.push(CompletionSample {
                    identity: rec.identity,
                    input: lpc::load(self.root.join(&f.cloud))?,
                    truth: lpc::load(self.root.join(&f.ground_truth))?,
                    beta,
                });
            }
        }
        Ok(out)
    }
}

/// Resamples a frame to exactly `points` points as an `N×3` matrix.
pub fn frame_matrix<T: Scalar, R: Rng + ?Sized>(cloud: &PointCloud, points: usize, rng: &mut R) -> Result<Array2<T>> {
    Ok(resample(cloud, points, rng)?.to_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SensorConfig, SplitPolicy, SynthConfig};

    #[test]
    fn round_trips_a_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            identities: 4,
            views: 2,
            frames: 2,
            truth_points: 32,
            sensor: SensorConfig {
                h_rays: 60,
                v_rays: 30,
                ..Default::default()
            },
            split: SplitPolicy::ByIdentity { test_fraction: 0.5 },
            ..Default::default()
        };
        let m = generate_dataset(&config, dir.path(), 1).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let train = ds.sequences(Split::Train).unwrap();
        assert_eq!(train.len(), 4);
        assert!(train.iter().all(|s| s.identity < 2 && s.frames.len() == 2));
        let samples = ds.completion_samples(Split::Test).unwrap();
        assert_eq!(samples.len(), 2 * 2 * 2);
        assert_eq!(samples[0].beta, m.identities[2].beta);
        assert_eq!(samples[0].truth.len(), 32);
        let via_file = Dataset::open(dir.path().join("manifest.json")).unwrap();
        assert_eq!(via_file.root(), dir.path());
    }
}
