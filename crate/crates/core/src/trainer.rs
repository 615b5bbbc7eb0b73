//! Pieces shared by the pre-training and ReID loops.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{accumulate, AdamW, Checkpoint, ParamSet};
use crate::scalar::Scalar;

/// Optimizer and learning-rate schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Peak learning rate, reached at the start of every cycle.
    pub lr: f64,
    pub lr_floor: f64,
    /// Epochs per cosine cycle.
    pub cycle: usize,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            lr_floor: 1e-7,
            cycle: 200,
            weight_decay: 5e-5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_floor > 0.0) || self.lr_floor > self.lr {
            return Err(Error::Config("need 0 < lr_floor <= lr".into()));
        }
        if self.cycle == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("cycle must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.lr, self.lr_floor, self.cycle)
    }
}

/// Cosine learning rate with period `cycle`: `max` at epoch 0 and every
/// multiple of `cycle`, `floor` half-way through each cycle.
pub fn cosine_lr(epoch: usize, max: f64, floor: f64, cycle: usize) -> f64 {
    let phase = (epoch % cycle) as f64 / cycle as f64;
    floor + 0.5 * (max - floor) * (1.0 + (std::f64::consts::TAU * phase).cos())
}

/// Whether a checkpoint's stored training configuration allows resuming
/// under `current`. The epoch count may differ: no schedule depends on it, so
/// a run can be stopped early and continued, or extended.
pub fn resumable_config(stored: Option<&Value>, current: &Value) -> bool {
    let without_epochs = |v: &Value| {
        let mut v = v.clone();
        if let Some(map) = v.as_object_mut() {
            map.remove("epochs");
        }
        v
    };
    stored.is_some_and(|s| without_epochs(s) == without_epochs(current))
}

/// Sums per-item gradients into one container.
///
/// Items are split into fixed chunks of `chunk` consecutive indices; chunks
/// may run in parallel, but each is summed in index order and the chunk sums
/// are combined in chunk order, so the result does not depend on the thread
/// count. `f(i, grad)` must add item `i`'s gradient into `grad`.
pub fn sum_gradients<T, M, O, F>(zero: &M, n: usize, chunk: usize, f: F) -> Result<(M, Vec<O>)>
where
    T: Scalar,
    M: ParamSet<T> + Clone + Send + Sync,
    O: Send,
    F: Fn(usize, &mut M) -> Result<O> + Sync,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let mut g = zero.clone();
            let outs = (s..(s + chunk).min(n)).map(|i| f(i, &mut g)).collect::<Result<Vec<O>>>()?;
            Ok((g, outs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = zero.clone();
    let mut outs = Vec::with_capacity(n);
    for (g, o) in parts {
        accumulate(&mut total, &g);
        outs.extend(o);
    }
    Ok((total, outs))
}

const OPTIM_STEPS: &str = "optim_steps";

/// Stores AdamW moments as `optim.m.<name>` / `optim.v.<name>`.
pub fn store_optimizer<T: Scalar>(ckpt: &mut Checkpoint, opt: &AdamW<T>) {
    ckpt.metadata.insert(OPTIM_STEPS.into(), Value::from(opt.steps_taken()));
    for (name, m, v) in opt.state() {
        ckpt.insert(format!("optim.m.{name}"), m);
        ckpt.insert(format!("optim.v.{name}"), v);
    }
}

/// Rebuilds an optimizer whose moments line up with `model`'s parameters.
pub fn restore_optimizer<T: Scalar, M: ParamSet<T>>(ckpt: &Checkpoint, model: &M, weight_decay: f64) -> Result<AdamW<T>> {
    let steps = ckpt
        .metadata
        .get(OPTIM_STEPS)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::invalid("checkpoint has no optimizer state to resume from"))?;
    let mut views = Vec::new();
    model.visit("", &mut views);
    let mut state: Vec<(String, ArrayD<T>, ArrayD<T>)> = Vec::new();
    if steps > 0 {
        for (name, v) in &views {
            let m = ckpt.array::<T>(&format!("optim.m.{name}"));
            let s = ckpt.array::<T>(&format!("optim.v.{name}"));
            match (m, s) {
                (Some(m), Some(s)) if m.shape() == v.shape() && s.shape() == v.shape() => {
                    state.push((name.clone(), m, s))
                }
                _ => return Err(Error::ShapeMismatch(format!("optimizer moments for {name} missing or mis-shaped"))),
            }
        }
    }
    let mut opt = AdamW::new(weight_decay);
    opt.restore(steps, state)?;
    Ok(opt)
}

/// Append-only CSV of per-epoch metrics.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Starts a fresh log with a header row.
    pub fn create(path: impl AsRef<Path>, columns: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{}", columns.join(",")).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    /// Continues an existing log, keeping only the header and rows whose
    /// first column (the epoch) is below `next_epoch`.
    pub fn resume(path: impl AsRef<Path>, columns: &[&str], next_epoch: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let kept: Vec<String> = match std::fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .skip(1)
                .filter(|l| {
                    l.split(',')
                        .next()
                        .and_then(|e| e.parse::<usize>().ok())
                        .is_some_and(|e| e < next_epoch)
                })
                .map(str::to_string)
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut log = Self::create(&path, columns)?;
        for line in kept {
            writeln!(log.file, "{line}").map_err(|e| Error::io(&log.path, e))?;
        }
        log.file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(log)
    }

    pub fn row(&mut self, values: &[String]) -> Result<()> {
        writeln!(self.file, "{}", values.join(",")).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn resuming_ignores_only_the_epoch_count() {
        let a = serde_json::json!({"epochs": 3, "lr": 1e-3});
        assert!(resumable_config(Some(&serde_json::json!({"epochs": 9, "lr": 1e-3})), &a));
        assert!(!resumable_config(Some(&serde_json::json!({"epochs": 3, "lr": 2e-3})), &a));
        assert!(!resumable_config(None, &a));
    }

    #[test]
    fn cosine_hits_the_documented_points() {
        let c = OptimConfig::default();
        assert_eq!(c.lr_at(0), 5e-5);
        assert!((c.lr_at(200) - 5e-5).abs() < 1e-20);
        assert!((c.lr_at(100) - 1e-7).abs() < 1e-20);
        let min_epoch = (0..200).min_by(|&a, &b| c.lr_at(a).total_cmp(&c.lr_at(b))).unwrap();
        assert_eq!(min_epoch, 100);
        assert!(c.lr_at(50) > c.lr_at(99) && c.lr_at(150) < c.lr_at(199));
        assert_eq!(c.lr_at(437), c.lr_at(37));
    }

    #[test]
    fn gradient_sum_ignores_chunking() {
        let zero = Linear::<f32>::zeros(2, 1);
        let add = |i: usize, g: &mut Linear<f32>| -> Result<usize> {
            g.weight[[0, 0]] += 0.1 * i as f32;
            g.bias[0] += 1.0;
            Ok(i * 2)
        };
        let (a, outs) = sum_gradients(&zero, 10, 3, add).unwrap();
        assert_eq!(outs, (0..10).map(|i| i * 2).collect::<Vec<_>>());
        assert_eq!(a.bias[0], 10.0);
        let (b, _) = sum_gradients(&zero, 10, 3, add).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut model = Linear::<f32>::zeros(2, 2);
        let grad = Linear {
            weight: array![[0.1f32, -0.2], [0.3, 0.4]],
            bias: array![0.5f32, -0.5],
        };
        let mut opt = AdamW::new(0.01);
        opt.step(&mut model, &grad, 1e-2);
        opt.step(&mut model, &grad, 1e-2);
        let mut ckpt = Checkpoint::new("test");
        store_optimizer(&mut ckpt, &opt);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        let mut restored = restore_optimizer::<f32, _>(&back, &model, 0.01).unwrap();
        let mut m2 = model.clone();
        opt.step(&mut model, &grad, 1e-2);
        restored.step(&mut m2, &grad, 1e-2);
        assert_eq!(model, m2);
    }

    #[test]
    fn metrics_log_resume_drops_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = MetricsLog::create(&path, &["epoch", "loss"]).unwrap();
        for e in 0..4 {
            log.row(&[e.to_string(), "1.5".into()]).unwrap();
        }
        drop(log);
        let mut log = MetricsLog::resume(&path, &["epoch", "loss"], 2).unwrap();
        log.row(&["2".into(), "0.5".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,loss\n0,1.5\n1,1.5\n2,0.5\n");
    }
}
