use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{Completion, CompletionOutput, Decoder, DecoderConfig, ShapeHead};
use super::loss::completion_grad;
use crate::error::{Error, Result};
use crate::gcee::{EncoderConfig, Gcee};
use crate::geometry::PointCloud;
use crate::nn::{join_name, mse, ParamSet};
use crate::scalar::Scalar;
use crate::synth::SHAPE_DIM;

/// Architecture of the pre-training model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub shape_hidden: [usize; 2],
}

impl Default for PretrainModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            shape_hidden: [256, 128],
        }
    }
}

impl PretrainModelConfig {
    /// Every width divided by `divisor`; point counts are unchanged.
    pub fn narrowed(&self, divisor: usize) -> Self {
        Self {
            encoder: self.encoder.narrowed(divisor),
            decoder: self.decoder.narrowed(divisor),
            shape_hidden: self.shape_hidden.map(|w| (w / divisor).max(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.shape_hidden.contains(&0) {
            return Err(Error::Config("shape_hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder plus completion decoder and shape head.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainNet<T> {
    pub encoder: Gcee<T>,
    pub decoder: Decoder<T>,
    pub shape_head: ShapeHead<T>,
}

/// Loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub coarse_cd: f64,
    pub detail_cd: f64,
    pub shape_mse: f64,
}

impl LossParts {
    pub fn add(&mut self, other: &LossParts) {
        self.total += other.total;
        self.coarse_cd += other.coarse_cd;
        self.detail_cd += other.detail_cd;
        self.shape_mse += other.shape_mse;
    }

    pub fn scaled(mut self, f: f64) -> Self {
        self.total *= f;
        self.coarse_cd *= f;
        self.detail_cd *= f;
        self.shape_mse *= f;
        self
    }
}

impl<T: Scalar> PretrainNet<T> {
    pub fn new<R: Rng + ?Sized>(config: &PretrainModelConfig, rng: &mut R) -> Self {
        let encoder = Gcee::new(&config.encoder, rng);
        let latent = encoder.output_dim();
        Self {
            decoder: Decoder::new(latent, &config.decoder, rng),
            shape_head: ShapeHead::new(latent, config.shape_hidden, SHAPE_DIM, rng),
            encoder,
        }
    }

    /// Latent vector of one frame, the frame standing in as its own supplement.
    pub fn latent(&self, points: ArrayView2<'_, T>) -> Result<Array1<T>> {
        self.encoder.embed_frame(points)
    }

    pub fn forward(&self, points: ArrayView2<'_, T>) -> Result<(Completion<T>, Array1<T>)> {
        let z = self.latent(points)?;
        let (c, _) = self.decoder.forward(z.view())?;
        let beta = self.shape_head.predict(z.view())?;
        Ok((c, beta))
    }

    /// Completes a normalized, resampled frame.
    pub fn complete(&self, cloud: &PointCloud) -> Result<CompletionOutput> {
        let z = self.latent(cloud.to_matrix::<T>().view())?;
        self.decoder.decode(z.view())
    }

    pub fn predict_shape(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let z = self.latent(cloud.to_matrix::<T>().view())?;
        Ok(self.shape_head.predict(z.view())?.iter().map(|v| v.as_f64()).collect())
    }

    pub fn loss(
        &self,
        points: ArrayView2<'_, T>,
        truth: ArrayView2<'_, T>,
        beta: ArrayView1<'_, T>,
        delta: f64,
        eta: f64,
    ) -> Result<LossParts> {
        let (c, beta_hat) = self.forward(points)?;
        let g = completion_grad(&c, truth, T::from_f64(delta))?;
        let (shape, _) = mse(beta_hat.view(), beta)?;
        Ok(parts(g.coarse_cd, g.detail_cd, shape, delta, eta))
    }

    /// Loss of one sample; its parameter gradient is added to `grad`.
    pub fn loss_and_grad(
        &self,
        points: ArrayView2<'_, T>,
        truth: ArrayView2<'_, T>,
        beta: ArrayView1<'_, T>,
        delta: f64,
        eta: f64,
        grad: &mut PretrainNet<T>,
    ) -> Result<LossParts> {
        let frames = [points.to_owned()];
        let (mut z, enc_cache) = self.encoder.forward_sequence(&frames)?;
        let z = z.remove(0);
        let (c, dec_cache) = self.decoder.forward(z.view())?;
        let (beta_hat, head_cache) = self.shape_head.forward(z.view())?;
        let g = completion_grad(&c, truth, T::from_f64(delta))?;
        let (shape, g_beta) = mse(beta_hat.view(), beta)?;
        let mut gz = self.decoder.backward(&dec_cache, g.coarse.view(), g.detail.view(), &mut grad.decoder);
        let g_beta: Array1<T> = g_beta * T::from_f64(eta);
        gz += &self.shape_head.backward(&head_cache, g_beta.view(), &mut grad.shape_head);
        self.encoder.backward_sequence(&enc_cache, &[gz.view()], &mut grad.encoder);
        Ok(parts(g.coarse_cd, g.detail_cd, shape, delta, eta))
    }
}

fn parts<T: Scalar>(coarse: T, detail: T, shape: T, delta: f64, eta: f64) -> LossParts {
    let (coarse_cd, detail_cd, shape_mse) = (coarse.as_f64(), detail.as_f64(), shape.as_f64());
    LossParts {
        total: coarse_cd + delta * detail_cd + eta * shape_mse,
        coarse_cd,
        detail_cd,
        shape_mse,
    }
}

impl<T: Scalar> ParamSet<T> for PretrainNet<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.encoder.visit(&join_name(prefix, "encoder"), out);
        self.decoder.visit(&join_name(prefix, "decoder"), out);
        self.shape_head.visit(&join_name(prefix, "shape_head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.encoder.visit_mut(&join_name(prefix, "encoder"), out);
        self.decoder.visit_mut(&join_name(prefix, "decoder"), out);
        self.shape_head.visit_mut(&join_name(prefix, "shape_head"), out);
    }
}
