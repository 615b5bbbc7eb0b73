use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::loss::{reid_loss, ReidLossParts};
use super::network::{ReidModelConfig, ReidNet};
use super::sampler::IdentityPool;
use crate::data::{frame_matrix, Dataset, SequenceSample};
use crate::error::{Error, Result};
use crate::nn::{zeros_like, AdamW, Checkpoint};
use crate::seed;
use crate::synth::Split;
use crate::temporal::stack;
use crate::trainer::{restore_optimizer, resumable_config, store_optimizer, sum_gradients, MetricsLog, OptimConfig};

pub const CHECKPOINT_KIND: &str = "reid";
pub const CHECKPOINT_FILE: &str = "reid.ckpt";
pub const METRICS_FILE: &str = "reid_metrics.csv";
const COLUMNS: [&str; 5] = ["epoch", "loss", "lr", "ce", "triplet"];

const TAG_INIT: u64 = 21;
const TAG_BATCH: u64 = 22;
const TAG_RESAMPLE: u64 = 23;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReidTrainConfig {
    pub model: ReidModelConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    /// Identities per batch (P).
    pub identities_per_batch: usize,
    /// Fragments per identity (K).
    pub sequences_per_identity: usize,
    /// Frames per fragment (T).
    pub frames_per_sequence: usize,
    /// Batches per epoch; 0 means enough to cover every identity once.
    pub batches_per_epoch: usize,
    /// Weight of the triplet term.
    pub gamma: f64,
    pub margin: f64,
    pub checkpoint_every: usize,
    /// Sequences per gradient-summation chunk.
    pub grad_chunk: usize,
}

impl Default for ReidTrainConfig {
    fn default() -> Self {
        Self {
            model: ReidModelConfig::default(),
            optim: OptimConfig::default(),
            epochs: 700,
            identities_per_batch: 6,
            sequences_per_identity: 6,
            frames_per_sequence: 30,
            batches_per_epoch: 0,
            gamma: 1.0,
            margin: 0.3,
            checkpoint_every: 50,
            grad_chunk: 2,
        }
    }
}

impl ReidTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.identities_per_batch < 2 || self.sequences_per_identity < 2 {
            return Err(Error::Config(
                "a batch needs at least two identities with two sequences each".into(),
            ));
        }
        if self.frames_per_sequence == 0 || self.frames_per_sequence > self.model.temporal.max_len {
            return Err(Error::Config(format!(
                "frames_per_sequence must be in 1..={}",
                self.model.temporal.max_len
            )));
        }
        if self.checkpoint_every == 0 || self.grad_chunk == 0 {
            return Err(Error::Config("checkpoint_every and grad_chunk must be positive".into()));
        }
        if !(self.gamma >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Config("gamma and margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReidEpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: ReidLossParts,
}

#[derive(Debug)]
pub struct ReidRun {
    pub model: ReidNet<f32>,
    pub history: Vec<ReidEpochStats>,
    pub checkpoint: PathBuf,
}

/// Trains the ReID network on the dataset's training split.
///
/// `init` is a checkpoint whose `encoder.*` tensors seed the encoder (a
/// pre-training checkpoint). `resume` continues an interrupted run with the
/// same configuration and seed.
pub fn train(
    dataset: &Dataset,
    config: &ReidTrainConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
    init: Option<&Path>,
    resume: Option<&Path>,
) -> Result<ReidRun> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sequences = dataset.sequences(Split::Train)?;
    let pool = IdentityPool::new(&sequences);
    if pool.classes() < config.identities_per_batch {
        return Err(Error::invalid(format!(
            "the training split has {} identities, a batch needs {}",
            pool.classes(),
            config.identities_per_batch
        )));
    }

    let mut model = ReidNet::<f32>::new(&config.model, pool.classes(), &mut seed::rng(seed, &[TAG_INIT]));
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
        if let Some(path) = init {
            model.load_encoder(&Checkpoint::load(path)?)?;
        }
        MetricsLog::create(&metrics, &COLUMNS)?
    };

    let batches = if config.batches_per_epoch > 0 {
        config.batches_per_epoch
    } else {
        pool.classes().div_ceil(config.identities_per_batch)
    };
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut history = Vec::new();
    for epoch in start..config.epochs {
        let lr = config.optim.lr_at(epoch);
        let mut sum = ReidLossParts::default();
        for b in 0..batches {
            let parts = train_step(&mut model, &mut opt, &pool, &sequences, config, seed, epoch, b, lr)?;
            sum.total += parts.total;
            sum.ce += parts.ce;
            sum.triplet += parts.triplet;
        }
        let n = batches as f64;
        let stats = ReidEpochStats {
            epoch,
            lr,
            loss: ReidLossParts {
                total: sum.total / n,
                ce: sum.ce / n,
                triplet: sum.triplet / n,
            },
        };
        log.row(&[
            epoch.to_string(),
            stats.loss.total.to_string(),
            lr.to_string(),
            stats.loss.ce.to_string(),
            stats.loss.triplet.to_string(),
        ])?;
        history.push(stats);
        if (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs {
            save_checkpoint(&model, &opt, config, &pool, seed, epoch + 1, &checkpoint)?;
        }
    }
    if start >= config.epochs {
        save_checkpoint(&model, &opt, config, &pool, seed, start, &checkpoint)?;
    }
    Ok(ReidRun {
        model,
        history,
        checkpoint,
    })
}

// Embeddings of the whole batch are needed before the triplet gradient is
// known, so the forward pass runs twice: once without caches to get the
// loss, then per sequence with caches for the backward pass. Only one
// chunk of sequences holds activations at a time.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut ReidNet<f32>,
    opt: &mut AdamW<f32>,
    pool: &IdentityPool,
    sequences: &[SequenceSample],
    config: &ReidTrainConfig,
    seed: u64,
    epoch: usize,
    b: usize,
    lr: f64,
) -> Result<ReidLossParts> {
    let batch = pool.sample_batch(
        config.identities_per_batch,
        config.sequences_per_identity,
        config.frames_per_sequence,
        &mut seed::rng(seed, &[TAG_BATCH, epoch as u64, b as u64]),
    )?;
    let points = config.model.encoder.points;
    let inputs: Vec<Vec<Array2<f32>>> = batch
        .items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let src = &sequences[item.sequence];
            item.frames
                .iter()
                .enumerate()
                .map(|(j, &f)| {
                    let path = [TAG_RESAMPLE, epoch as u64, b as u64, i as u64, j as u64];
                    frame_matrix(&src.frames[f], points, &mut seed::rng(seed, &path))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let outputs: Vec<_> = inputs.par_iter().map(|f| model.forward(f)).collect::<Result<_>>()?;
    let embeddings = stack(&outputs.iter().map(|o| o.0.clone()).collect::<Vec<_>>())?;
    let logits = stack(&outputs.iter().map(|o| o.1.clone()).collect::<Vec<_>>())?;
    let loss = reid_loss(logits.view(), &batch.labels(), embeddings.view(), config.gamma, config.margin)?;
    let zero = zeros_like(&*model);
    let net = &*model;
    let (grad, _) = sum_gradients(&zero, inputs.len(), config.grad_chunk, |i, g| {
        let ge: ArrayView1<'_, f32> = loss.grad_embeddings.row(i);
        net.backward(&inputs[i], ge, loss.grad_logits.row(i), g)
    })?;
    opt.step(model, &grad, lr);
    Ok(loss.parts)
}

fn check_resumable(ckpt: &Checkpoint, config: &ReidTrainConfig, seed: u64) -> Result<()> {
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
    model: &ReidNet<f32>,
    opt: &AdamW<f32>,
    config: &ReidTrainConfig,
    pool: &IdentityPool,
    seed: u64,
    next_epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(CHECKPOINT_KIND);
    ckpt.metadata.insert("model".into(), serde_json::to_value(&config.model)?);
    ckpt.metadata.insert("classes".into(), Value::from(model.classes()));
    ckpt.metadata.insert("identities".into(), serde_json::to_value(pool.identities())?);
    ckpt.metadata.insert("train_config".into(), serde_json::to_value(config)?);
    ckpt.metadata.insert("seed".into(), Value::from(seed));
    ckpt.metadata.insert("epoch".into(), Value::from(next_epoch));
    ckpt.insert_module("", model);
    store_optimizer(&mut ckpt, opt);
    ckpt.save(path)
}

/// Rebuilds a ReID network from its checkpoint alone.
pub fn load_reid(ckpt: &Checkpoint) -> Result<(ReidNet<f32>, ReidModelConfig)> {
    if ckpt.kind() != Some(CHECKPOINT_KIND) {
        return Err(Error::invalid(format!("expected a {CHECKPOINT_KIND} checkpoint, found {:?}", ckpt.kind())));
    }
    let config: ReidModelConfig = serde_json::from_value(
        ckpt.metadata
            .get("model")
            .cloned()
            .ok_or_else(|| Error::invalid("checkpoint does not record its model configuration"))?,
    )?;
    config.validate()?;
    let classes = ckpt
        .metadata
        .get("classes")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::invalid("checkpoint does not record its class count"))? as usize;
    let mut model = ReidNet::new(&config, classes, &mut seed::rng(0, &[TAG_INIT]));
    ckpt.load_module("", &mut model)?;
    Ok((model, config))
}
