use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::loss::delta_schedule;
use super::network::{LossParts, PretrainModelConfig, PretrainNet};
use crate::data::{frame_matrix, CompletionSample, Dataset};
use crate::error::{Error, Result};
use crate::nn::{scale_grads, zeros_like, AdamW, Checkpoint};
use crate::seed;
use crate::synth::Split;
use crate::trainer::{restore_optimizer, resumable_config, store_optimizer, sum_gradients, MetricsLog, OptimConfig};

pub const CHECKPOINT_KIND: &str = "pretrain";
pub const CHECKPOINT_FILE: &str = "pretrain.ckpt";
pub const METRICS_FILE: &str = "pretrain_metrics.csv";
const COLUMNS: [&str; 7] = ["epoch", "loss", "lr", "delta", "coarse_cd", "detail_cd", "shape_mse"];

const TAG_INIT: u64 = 11;
const TAG_ORDER: u64 = 12;
const TAG_RESAMPLE: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub model: PretrainModelConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the shape loss.
    pub eta: f64,
    /// Frames drawn per epoch; 0 visits every training frame.
    pub frames_per_epoch: usize,
    /// Write the checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Items per gradient-summation chunk.
    pub grad_chunk: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: PretrainModelConfig::default(),
            optim: OptimConfig {
                lr: 1e-4,
                ..OptimConfig::default()
            },
            epochs: 700,
            batch_size: 32,
            eta: 1.0,
            frames_per_epoch: 0,
            checkpoint_every: 50,
            grad_chunk: 8,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 || self.grad_chunk == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, grad_chunk and checkpoint_every must be positive".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config("eta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean training metrics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub delta: f64,
    pub loss: LossParts,
}

#[derive(Debug)]
pub struct PretrainRun {
    pub model: PretrainNet<f32>,
    pub history: Vec<EpochStats>,
    pub checkpoint: PathBuf,
}

struct Prepared {
    input: crate::geometry::PointCloud,
    truth: Array2<f32>,
    beta: Array1<f32>,
}

fn prepare(samples: Vec<CompletionSample>) -> Vec<Prepared> {
    samples
        .into_iter()
        .map(|s| Prepared {
            truth: s.truth.to_matrix(),
            beta: s.beta.iter().map(|&b| b as f32).collect(),
            input: s.input,
        })
        .collect()
}

/// Trains encoder, decoder and shape head on the dataset's training split.
///
/// Writes `pretrain.ckpt` and `pretrain_metrics.csv` under `out_dir`. With
/// `resume`, continues from a checkpoint written by an earlier run with the
/// same configuration and seed and reproduces the remaining epochs exactly.
pub fn run_pretraining(
    dataset: &Dataset,
    config: &PretrainConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
    resume: Option<&Path>,
) -> Result<PretrainRun> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let samples = prepare(dataset.completion_samples(Split::Train)?);
    if samples.is_empty() {
        return Err(Error::invalid("the training split has no frames to pre-train on"));
    }

    let mut model = PretrainNet::<f32>::new(&config.model, &mut seed::rng(seed, &[TAG_INIT]));
    let mut opt = AdamW::new(config.optim.weight_decay);
    let mut start = 0;
    let metrics = out_dir.join(METRICS_FILE);
    let mut log = if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        check_resumable(&ckpt, config, seed)?;
        ckpt.load_module("", &mut model)?;
        opt = restore_optimizer(&ckpt, &model, config.optim.weight_decay)?;
        start = ckpt.metadata.get("epoch").and_then(Value::as_u64).unwrap_or(0) as usize;
        MetricsLog::resume(&metrics, &COLUMNS, start)?
    } else {
        MetricsLog::create(&metrics, &COLUMNS)?
    };

    let points = config.model.encoder.points;
    let zero = zeros_like(&model);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut history = Vec::new();
    for epoch in start..config.epochs {
        let lr = config.optim.lr_at(epoch);
        let delta = delta_schedule(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seed::rng(seed, &[TAG_ORDER, epoch as u64]));
        if config.frames_per_epoch > 0 {
            order.truncate(config.frames_per_epoch);
        }
        let mut sum = LossParts::default();
        for batch in order.chunks(config.batch_size) {
            let (mut grad, parts) = sum_gradients(&zero, batch.len(), config.grad_chunk, |i, g| {
                let idx = batch[i];
                let s = &samples[idx];
                let mut rng = seed::rng(seed, &[TAG_RESAMPLE, epoch as u64, idx as u64]);
                let x = frame_matrix::<f32, _>(&s.input, points, &mut rng)?;
                model.loss_and_grad(x.view(), s.truth.view(), s.beta.view(), delta, config.eta, g)
            })?;
            scale_grads(&mut grad, 1.0 / batch.len() as f32);
            opt.step(&mut model, &grad, lr);
            for p in &parts {
                sum.add(p);
            }
        }
        let stats = EpochStats {
            epoch,
            lr,
            delta,
            loss: sum.scaled(1.0 / order.len() as f64),
        };
        log.row(&[
            epoch.to_string(),
            stats.loss.total.to_string(),
            lr.to_string(),
            delta.to_string(),
            stats.loss.coarse_cd.to_string(),
            stats.loss.detail_cd.to_string(),
            stats.loss.shape_mse.to_string(),
        ])?;
        history.push(stats);
        if (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs {
            save_checkpoint(&model, &opt, config, seed, epoch + 1, &checkpoint)?;
        }
    }
    if start >= config.epochs {
        save_checkpoint(&model, &opt, config, seed, start, &checkpoint)?;
    }
    Ok(PretrainRun {
        model,
        history,
        checkpoint,
    })
}

fn check_resumable(ckpt: &Checkpoint, config: &PretrainConfig, seed: u64) -> Result<()> {
    if ckpt.kind() != Some(CHECKPOINT_KIND) {
        return Err(Error::invalid(format!("expected a {CHECKPOINT_KIND} checkpoint, found {:?}", ckpt.kind())));
    }
    if ckpt.metadata.get("seed").and_then(Value::as_u64) != Some(seed) {
        return Err(Error::invalid("resume seed differs from the checkpoint's seed"));
    }
    if !resumable_config(ckpt.metadata.get("train_config"), &serde_json::to_value(config)?) {
        return Err(Error::invalid("resume configuration differs from the checkpoint's configuration"));
    }
    Ok(())
}

fn save_checkpoint(
    model: &PretrainNet<f32>,
    opt: &AdamW<f32>,
    config: &PretrainConfig,
    seed: u64,
    next_epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(CHECKPOINT_KIND);
    ckpt.metadata.insert("model".into(), serde_json::to_value(&config.model)?);
    ckpt.metadata.insert("train_config".into(), serde_json::to_value(config)?);
    ckpt.metadata.insert("seed".into(), Value::from(seed));
    ckpt.metadata.insert("epoch".into(), Value::from(next_epoch));
    ckpt.insert_module("", model);
    store_optimizer(&mut ckpt, opt);
    ckpt.save(path)
}

/// Rebuilds a pre-training model from its checkpoint alone.
pub fn load_pretrained(ckpt: &Checkpoint) -> Result<(PretrainNet<f32>, PretrainModelConfig)> {
    if ckpt.kind() != Some(CHECKPOINT_KIND) {
        return Err(Error::invalid(format!("expected a {CHECKPOINT_KIND} checkpoint, found {:?}", ckpt.kind())));
    }
    let config: PretrainModelConfig = serde_json::from_value(
        ckpt.metadata
            .get("model")
            .cloned()
            .ok_or_else(|| Error::invalid("checkpoint does not record its model configuration"))?,
    )?;
    config.validate()?;
    let mut model = PretrainNet::new(&config, &mut seed::rng(0, &[TAG_INIT]));
    ckpt.load_module("", &mut model)?;
    Ok((model, config))
}

/// Held-out quality of a pre-trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretrainEval {
    pub frames: usize,
    pub coarse_cd: f64,
    pub detail_cd: f64,
    pub beta_mse: f64,
    /// Mean per-coefficient variance of the true shape vectors: the error
    /// of always predicting their mean.
    pub beta_variance: f64,
}

pub fn evaluate_pretraining(
    model: &PretrainNet<f32>,
    samples: &[CompletionSample],
    points: usize,
    seed: u64,
) -> Result<PretrainEval> {
    if samples.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let mut sum = LossParts::default();
    for (i, s) in samples.iter().enumerate() {
        let x = frame_matrix::<f32, _>(&s.input, points, &mut seed::rng(seed, &[TAG_RESAMPLE, u64::MAX, i as u64]))?;
        let truth: Array2<f32> = s.truth.to_matrix();
        let beta: Array1<f32> = s.beta.iter().map(|&b| b as f32).collect();
        sum.add(&model.loss(x.view(), truth.view(), beta.view(), 1.0, 1.0)?);
    }
    let n = samples.len() as f64;
    let dims = samples[0].beta.len();
    let mut variance = 0.0;
    for d in 0..dims {
        let mean = samples.iter().map(|s| s.beta[d]).sum::<f64>() / n;
        variance += samples.iter().map(|s| (s.beta[d] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(PretrainEval {
        frames: samples.len(),
        coarse_cd: sum.coarse_cd / n,
        detail_cd: sum.detail_cd / n,
        beta_mse: sum.shape_mse / n,
        beta_variance: variance / dims as f64,
    })
}
