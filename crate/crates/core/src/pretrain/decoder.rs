use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{join_name, leaky_relu, leaky_relu_backward, Linear, ParamSet, LEAKY_SLOPE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub coarse_points: usize,
    /// Hidden width of the coarse MLP.
    pub hidden: usize,
    /// Hidden width of the folding MLP.
    pub fold_hidden: usize,
    /// Folding grid is `grid_side x grid_side` around each coarse point.
    pub grid_side: usize,
    /// Half-extent of the folding grid.
    pub grid_scale: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            coarse_points: 128,
            hidden: 1024,
            fold_hidden: 256,
            grid_side: 2,
            grid_scale: 0.05,
        }
    }
}

impl DecoderConfig {
    pub fn detail_points(&self) -> usize {
        self.coarse_points * self.grid_side * self.grid_side
    }

    pub fn narrowed(&self, divisor: usize) -> Self {
        Self {
            hidden: (self.hidden / divisor).max(1),
            fold_hidden: (self.fold_hidden / divisor).max(1),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_points == 0 || self.hidden == 0 || self.fold_hidden == 0 || self.grid_side == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted shapes: `coarse` (M x 3) and `detail` (M·g² x 3).
#[derive(Debug, Clone, PartialEq)]
pub struct Completion<T> {
    pub coarse: Array2<T>,
    pub detail: Array2<T>,
}

/// Completion output as point clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutput {
    pub coarse: PointCloud,
    pub detail: PointCloud,
}

/// Two-stage folding decoder. A coarse MLP maps `z` to `M` points; a folding
/// MLP maps `(grid offset, coarse point, z)` to a displacement around each
/// coarse point.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub coarse1: Linear<T>,
    pub coarse2: Linear<T>,
    /// Input rows: 2 grid coordinates, 3 coarse coordinates, then `z`.
    pub fold1: Linear<T>,
    pub fold2: Linear<T>,
    grid: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    z: Array2<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    coarse: Array2<T>,
    fold_pre: Array2<T>,
    fold_act: Array2<T>,
}

const GRID_DIM: usize = 2;
const FOLD_HEAD: usize = GRID_DIM + 3;

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(latent: usize, config: &DecoderConfig, rng: &mut R) -> Self {
        let g = config.grid_side;
        let step = if g > 1 { 2.0 * config.grid_scale / (g - 1) as f64 } else { 0.0 };
        let lo = if g > 1 { -config.grid_scale } else { 0.0 };
        let grid = Array2::from_shape_fn((g * g, GRID_DIM), |(r, c)| {
            let idx = if c == 0 { r / g } else { r % g };
            T::from_f64(lo + step * idx as f64)
        });
        Self {
            coarse1: Linear::new(latent, config.hidden, rng),
            coarse2: Linear::new(config.hidden, config.coarse_points * 3, rng),
            fold1: Linear::new(FOLD_HEAD + latent, config.fold_hidden, rng),
            fold2: Linear::new(config.fold_hidden, 3, rng),
            grid,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.coarse1.input_dim()
    }

    pub fn coarse_points(&self) -> usize {
        self.coarse2.output_dim() / 3
    }

    pub fn offsets_per_point(&self) -> usize {
        self.grid.nrows()
    }

    pub fn forward(&self, z: ArrayView1<'_, T>) -> Result<(Completion<T>, DecoderCache<T>)> {
        if z.len() != self.latent_dim() {
            return Err(Error::invalid(format!(
                "latent of length {} given to a decoder expecting {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let m = self.coarse_points();
        let g = self.offsets_per_point();
        let z2 = z.to_owned().insert_axis(Axis(0));
        let hidden_pre = self.coarse1.forward(z2.view());
        let hidden = leaky_relu(&hidden_pre, T::from_f64(LEAKY_SLOPE));
        let coarse = self
            .coarse2
            .forward(hidden.view())
            .into_shape_with_order((m, 3))
            .expect("coarse width is 3M");

        let w = &self.fold1.weight;
        let from_z = z2.dot(&w.slice(s![FOLD_HEAD.., ..])) + &self.fold1.bias;
        let from_grid = self.grid.dot(&w.slice(s![..GRID_DIM, ..]));
        let from_coarse = coarse.dot(&w.slice(s![GRID_DIM..FOLD_HEAD, ..]));
        let mut fold_pre = Array2::zeros((m * g, self.fold1.output_dim()));
        for i in 0..m {
            for j in 0..g {
                let mut row = fold_pre.row_mut(i * g + j);
                row.assign(&from_z.row(0));
                row += &from_grid.row(j);
                row += &from_coarse.row(i);
            }
        }
        let fold_act = leaky_relu(&fold_pre, T::from_f64(LEAKY_SLOPE));
        let mut detail = self.fold2.forward(fold_act.view());
        for i in 0..m {
            for j in 0..g {
                let mut row = detail.row_mut(i * g + j);
                row += &coarse.row(i);
            }
        }
        Ok((
            Completion {
                coarse: coarse.clone(),
                detail,
            },
            DecoderCache {
                z: z2,
                hidden_pre,
                hidden,
                coarse,
                fold_pre,
                fold_act,
            },
        ))
    }

    /// Point-cloud version of [`Decoder::forward`].
    pub fn decode(&self, z: ArrayView1<'_, T>) -> Result<CompletionOutput> {
        let (c, _) = self.forward(z)?;
        Ok(CompletionOutput {
            coarse: PointCloud::from_matrix(&c.coarse)?,
            detail: PointCloud::from_matrix(&c.detail)?,
        })
    }

    /// Returns `dL/dz` and accumulates parameter gradients.
    pub fn backward(
        &self,
        cache: &DecoderCache<T>,
        grad_coarse: ArrayView2<'_, T>,
        grad_detail: ArrayView2<'_, T>,
        grad: &mut Decoder<T>,
    ) -> Array1<T> {
        let m = self.coarse_points();
        let g = self.offsets_per_point();
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut g_coarse = grad_coarse.to_owned();
        for i in 0..m {
            for j in 0..g {
                let mut row = g_coarse.row_mut(i);
                row += &grad_detail.row(i * g + j);
            }
        }
        let g_act = self.fold2.backward(cache.fold_act.view(), grad_detail, &mut grad.fold2);
        let g_pre = leaky_relu_backward(&cache.fold_pre, &g_act, slope);

        // Fold-input gradients, grouped by the shared factor of each block.
        let h = self.fold1.output_dim();
        let mut by_point = Array2::<T>::zeros((m, h));
        let mut by_offset = Array2::<T>::zeros((g, h));
        for i in 0..m {
            for j in 0..g {
                let r = g_pre.row(i * g + j);
                let mut a = by_point.row_mut(i);
                a += &r;
                let mut b = by_offset.row_mut(j);
                b += &r;
            }
        }
        let total = by_point.sum_axis(Axis(0)).insert_axis(Axis(0));
        let w = &self.fold1.weight;
        {
            let gw = &mut grad.fold1.weight;
            let mut head = gw.slice_mut(s![..GRID_DIM, ..]);
            head += &self.grid.t().dot(&by_offset);
            let mut mid = gw.slice_mut(s![GRID_DIM..FOLD_HEAD, ..]);
            mid += &cache.coarse.t().dot(&by_point);
            let mut tail = gw.slice_mut(s![FOLD_HEAD.., ..]);
            tail += &cache.z.t().dot(&total);
            grad.fold1.bias += &total.row(0);
        }
        g_coarse += &by_point.dot(&w.slice(s![GRID_DIM..FOLD_HEAD, ..]).t());
        let mut gz = total.dot(&w.slice(s![FOLD_HEAD.., ..]).t());

        let g_flat = g_coarse.into_shape_with_order((1, m * 3)).expect("3M entries");
        let g_hidden = self.coarse2.backward(cache.hidden.view(), g_flat.view(), &mut grad.coarse2);
        let g_hidden_pre = leaky_relu_backward(&cache.hidden_pre, &g_hidden, slope);
        gz += &self.coarse1.backward(cache.z.view(), g_hidden_pre.view(), &mut grad.coarse1);
        gz.row(0).to_owned()
    }
}

impl<T: Scalar> ParamSet<T> for Decoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.coarse1.visit(&join_name(prefix, "coarse1"), out);
        self.coarse2.visit(&join_name(prefix, "coarse2"), out);
        self.fold1.visit(&join_name(prefix, "fold1"), out);
        self.fold2.visit(&join_name(prefix, "fold2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.coarse1.visit_mut(&join_name(prefix, "coarse1"), out);
        self.coarse2.visit_mut(&join_name(prefix, "coarse2"), out);
        self.fold1.visit_mut(&join_name(prefix, "fold1"), out);
        self.fold2.visit_mut(&join_name(prefix, "fold2"), out);
    }
}

/// Regresses the ten shape coefficients from a latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeHead<T> {
    pub hidden1: Linear<T>,
    pub hidden2: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct ShapeHeadCache<T> {
    z: Array2<T>,
    pre1: Array2<T>,
    act1: Array2<T>,
    pre2: Array2<T>,
    act2: Array2<T>,
}

impl<T: Scalar> ShapeHead<T> {
    pub fn new<R: Rng + ?Sized>(latent: usize, hidden: [usize; 2], outputs: usize, rng: &mut R) -> Self {
        Self {
            hidden1: Linear::new(latent, hidden[0], rng),
            hidden2: Linear::new(hidden[0], hidden[1], rng),
            out: Linear::new(hidden[1], outputs, rng),
        }
    }

    pub fn forward(&self, z: ArrayView1<'_, T>) -> Result<(Array1<T>, ShapeHeadCache<T>)> {
        if z.len() != self.hidden1.input_dim() {
            return Err(Error::invalid(format!(
                "latent of length {} given to a shape head expecting {}",
                z.len(),
                self.hidden1.input_dim()
            )));
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let z2 = z.to_owned().insert_axis(Axis(0));
        let pre1 = self.hidden1.forward(z2.view());
        let act1 = leaky_relu(&pre1, slope);
        let pre2 = self.hidden2.forward(act1.view());
        let act2 = leaky_relu(&pre2, slope);
        let y = self.out.forward(act2.view()).row(0).to_owned();
        Ok((
            y,
            ShapeHeadCache {
                z: z2,
                pre1,
                act1,
                pre2,
                act2,
            },
        ))
    }

    pub fn predict(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        Ok(self.forward(z)?.0)
    }

    pub fn backward(&self, cache: &ShapeHeadCache<T>, grad_out: ArrayView1<'_, T>, grad: &mut ShapeHead<T>) -> Array1<T> {
        let slope = T::from_f64(LEAKY_SLOPE);
        let g = grad_out.to_owned().insert_axis(Axis(0));
        let g = self.out.backward(cache.act2.view(), g.view(), &mut grad.out);
        let g = leaky_relu_backward(&cache.pre2, &g, slope);
        let g = self.hidden2.backward(cache.act1.view(), g.view(), &mut grad.hidden2);
        let g = leaky_relu_backward(&cache.pre1, &g, slope);
        self.hidden1
            .backward(cache.z.view(), g.view(), &mut grad.hidden1)
            .row(0)
            .to_owned()
    }
}

impl<T: Scalar> ParamSet<T> for ShapeHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.hidden1.visit(&join_name(prefix, "hidden1"), out);
        self.hidden2.visit(&join_name(prefix, "hidden2"), out);
        self.out.visit(&join_name(prefix, "out"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.hidden1.visit_mut(&join_name(prefix, "hidden1"), out);
        self.hidden2.visit_mut(&join_name(prefix, "hidden2"), out);
        self.out.visit_mut(&join_name(prefix, "out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chamfer_with_grad;
    use crate::nn::gradcheck::{check_gradient, check_params, GRAD_TOL_F64};
    use crate::nn::{glorot_uniform, zero_grads, zeros_like};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> DecoderConfig {
        DecoderConfig {
            coarse_points: 4,
            hidden: 8,
            fold_hidden: 8,
            grid_side: 2,
            grid_scale: 0.05,
        }
    }

    fn latent(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        glorot_uniform::<f64, _>(1, n, rng).row(0).to_owned() * 3.0
    }

    #[test]
    fn counts_follow_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Decoder::<f32>::new(16, &DecoderConfig::default().narrowed(8), &mut rng);
        let z = Array1::from_elem(16, 0.3f32);
        let out = d.decode(z.view()).unwrap();
        assert_eq!(out.coarse.len(), 128);
        assert_eq!(out.detail.len(), 512);
        assert!(d.decode(Array1::zeros(15).view()).is_err());
    }

    #[test]
    fn zero_parameters_put_coarse_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = Decoder::<f64>::new(8, &toy(), &mut rng);
        zero_grads(&mut d);
        let (c, _) = d.forward(latent(&mut rng, 8).view()).unwrap();
        assert!(c.coarse.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Decoder::<f64>::new(8, &toy(), &mut rng);
        assert_eq!(d.grid, ndarray::array![[-0.05, -0.05], [-0.05, 0.05], [0.05, -0.05], [0.05, 0.05]]);
    }

    #[test]
    fn folding_matches_the_concatenated_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Decoder::<f64>::new(8, &toy(), &mut rng);
        let z = latent(&mut rng, 8);
        let (c, _) = d.forward(z.view()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut input = Vec::new();
                input.extend(d.grid.row(j).iter());
                input.extend(c.coarse.row(i).iter());
                input.extend(z.iter());
                let x = Array2::from_shape_vec((1, 13), input).unwrap();
                let h = leaky_relu(&d.fold1.forward(x.view()), LEAKY_SLOPE);
                let p = d.fold2.forward(h.view()).row(0).to_owned() + c.coarse.row(i);
                let got = c.detail.row(i * 4 + j);
                assert!((p - got).iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn chamfer_gradients_reach_decoder_and_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Decoder::<f64>::new(8, &toy(), &mut rng);
        let z = latent(&mut rng, 8);
        let target = glorot_uniform::<f64, _>(9, 3, &mut rng);
        let loss = |d: &Decoder<f64>, z: ArrayView1<f64>| {
            let (c, _) = d.forward(z).unwrap();
            let (a, _) = chamfer_with_grad(c.coarse.view(), target.view()).unwrap();
            let (b, _) = chamfer_with_grad(c.detail.view(), target.view()).unwrap();
            a + 0.7 * b
        };
        let (c, cache) = d.forward(z.view()).unwrap();
        let (_, gc) = chamfer_with_grad(c.coarse.view(), target.view()).unwrap();
        let (_, gd) = chamfer_with_grad(c.detail.view(), target.view()).unwrap();
        let mut grad = zeros_like(&d);
        let gz = d.backward(&cache, gc.da.view(), (gd.da * 0.7).view(), &mut grad);
        let r = check_params(&d, &grad, 20, |m| loss(m, z.view()));
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let r = check_gradient(|p| loss(&d, ArrayView1::from(p)), z.as_slice().unwrap(), gz.as_slice().unwrap());
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
    }

    #[test]
    fn shape_head_contract_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut head = ShapeHead::<f64>::new(8, [6, 5], 10, &mut rng);
        let z = latent(&mut rng, 8);
        assert_eq!(head.predict(z.view()).unwrap().len(), 10);
        let w = latent(&mut rng, 10);
        let (_, cache) = head.forward(z.view()).unwrap();
        let mut grad = zeros_like(&head);
        let gz = head.backward(&cache, w.view(), &mut grad);
        let r = check_params(&head, &grad, 30, |m| m.predict(z.view()).unwrap().dot(&w));
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");
        let r = check_gradient(
            |p| head.predict(ArrayView1::from(p)).unwrap().dot(&w),
            z.as_slice().unwrap(),
            gz.as_slice().unwrap(),
        );
        assert!(r.max_rel_error <= GRAD_TOL_F64, "{r:?}");

        head.out.weight.fill(0.0);
        head.out.bias = Array1::from_iter((0..10).map(|i| i as f64));
        assert_eq!(head.predict(z.view()).unwrap(), head.out.bias);
    }
}
