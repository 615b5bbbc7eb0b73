use ndarray::{Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcee::{EncoderConfig, Gcee};
use crate::nn::{join_name, Checkpoint, Linear, ParamSet};
use crate::scalar::Scalar;
use crate::temporal::{TemporalConfig, TemporalFusion};

/// Architecture of the ReID network minus the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReidModelConfig {
    pub encoder: EncoderConfig,
    pub temporal: TemporalConfig,
}

impl Default for ReidModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            temporal: TemporalConfig::default(),
        }
    }
}

impl ReidModelConfig {
    /// Every width divided by `divisor`; depth, heads and lengths unchanged.
    pub fn narrowed(&self, divisor: usize) -> Self {
        let encoder = self.encoder.narrowed(divisor);
        Self {
            temporal: TemporalConfig {
                width: encoder.latent_dim(),
                ffn: (self.temporal.ffn / divisor).max(1),
                ..self.temporal.clone()
            },
            encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.temporal.validate()?;
        if self.temporal.width != self.encoder.latent_dim() {
            return Err(Error::Config(format!(
                "temporal width {} must equal the frame vector width {}",
                self.temporal.width,
                self.encoder.latent_dim()
            )));
        }
        Ok(())
    }
}

/// Frame encoder, temporal fusion and an identity classifier used only in
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct ReidNet<T> {
    pub encoder: Gcee<T>,
    pub temporal: TemporalFusion<T>,
    pub classifier: Linear<T>,
}

impl<T: Scalar> ReidNet<T> {
    pub fn new<R: Rng + ?Sized>(config: &ReidModelConfig, classes: usize, rng: &mut R) -> Self {
        let encoder = Gcee::new(&config.encoder, rng);
        let temporal = TemporalFusion::new(&config.temporal, rng);
        let classifier = Linear::new(temporal.width(), classes.max(1), rng);
        Self {
            encoder,
            temporal,
            classifier,
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.temporal.width()
    }

    /// Sequence embedding of resampled, normalized frames.
    pub fn embed(&self, frames: &[Array2<T>]) -> Result<Array1<T>> {
        let per_frame = self.encoder.encode_sequence(frames)?;
        self.temporal.fuse_vectors(&per_frame)
    }

    /// Embedding and class logits.
    pub fn forward(&self, frames: &[Array2<T>]) -> Result<(Array1<T>, Array1<T>)> {
        let emb = self.embed(frames)?;
        let logits = self.classifier.forward(emb.view().insert_axis(Axis(0))).remove_axis(Axis(0));
        Ok((emb, logits))
    }

    /// Recomputes the forward pass of one sequence with caches and adds the
    /// parameter gradient for upstream `dL/d embedding` and `dL/d logits`.
    pub fn backward(
        &self,
        frames: &[Array2<T>],
        grad_embedding: ArrayView1<'_, T>,
        grad_logits: ArrayView1<'_, T>,
        grad: &mut ReidNet<T>,
    ) -> Result<()> {
        let (per_frame, enc_cache) = self.encoder.forward_sequence(frames)?;
        let seq = crate::temporal::stack(&per_frame)?;
        let (emb, fusion_cache) = self.temporal.forward(seq.view())?;
        let g_emb = self.classifier.backward(
            emb.view().insert_axis(Axis(0)),
            grad_logits.insert_axis(Axis(0)),
            &mut grad.classifier,
        );
        let g_emb = g_emb.row(0).to_owned() + grad_embedding;
        let g_seq = self.temporal.backward(&fusion_cache, g_emb.view(), &mut grad.temporal);
        let rows: Vec<ArrayView1<'_, T>> = g_seq.rows().into_iter().collect();
        self.encoder.backward_sequence(&enc_cache, &rows, &mut grad.encoder);
        Ok(())
    }

    /// Copies encoder weights from a checkpoint that stores them under
    /// `encoder.` (pre-training and ReID checkpoints both do).
    pub fn load_encoder(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.load_module("encoder", &mut self.encoder)
    }
}

impl<T: Scalar> ParamSet<T> for ReidNet<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.encoder.visit(&join_name(prefix, "encoder"), out);
        self.temporal.visit(&join_name(prefix, "temporal"), out);
        self.classifier.visit(&join_name(prefix, "classifier"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.encoder.visit_mut(&join_name(prefix, "encoder"), out);
        self.temporal.visit_mut(&join_name(prefix, "temporal"), out);
        self.classifier.visit_mut(&join_name(prefix, "classifier"), out);
    }
}
