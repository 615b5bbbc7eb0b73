use ndarray::{ArrayD, Zip};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with decoupled weight decay.
///
/// Moment buffers are created on the first step and follow the parameter
/// order reported by [`ParamSet::visit`].
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    names: Vec<String>,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<M: ParamSet<T>>(&mut self, params: &mut M, grads: &M, lr: f64) {
        let mut p = Vec::new();
        params.visit_mut("", &mut p);
        let mut g = Vec::new();
        grads.visit("", &mut g);
        assert_eq!(p.len(), g.len(), "gradient structure differs from parameters");
        if self.m.is_empty() {
            self.names = p.iter().map(|(n, _)| n.clone()).collect();
            self.m = p.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::from_f64(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(1.0 - lr * self.weight_decay);
        let eps = T::from_f64(self.eps);
        for (((_, mut pv), (_, gv)), (m, v)) in p.into_iter().zip(g).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(&mut pv)
                .and(&gv)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *p = *p * decay;
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    /// Moment buffers as `(name, first, second)` triples.
    pub fn state(&self) -> impl Iterator<Item = (&str, &ArrayD<T>, &ArrayD<T>)> {
        self.names
            .iter()
            .zip(self.m.iter().zip(self.v.iter()))
            .map(|(n, (m, v))| (n.as_str(), m, v))
    }

    pub fn restore(&mut self, step: u64, state: Vec<(String, ArrayD<T>, ArrayD<T>)>) -> Result<()> {
        if state.is_empty() && step > 0 {
            return Err(Error::invalid("optimizer state missing for a non-zero step"));
        }
        self.step = step;
        self.names = Vec::with_capacity(state.len());
        self.m = Vec::with_capacity(state.len());
        self.v = Vec::with_capacity(state.len());
        for (name, m, v) in state {
            if m.shape() != v.shape() {
                return Err(Error::invalid(format!("moment shapes disagree for {name}")));
            }
            self.names.push(name);
            self.m.push(m);
            self.v.push(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut layer = Linear::<f64>::zeros(1, 1);
        layer.weight[[0, 0]] = 1.0;
        let mut grad = Linear::<f64>::zeros(1, 1);
        grad.weight[[0, 0]] = 0.5;
        let mut opt = AdamW::new(0.0);
        opt.step(&mut layer, &grad, 0.1);
        // bias-corrected first step is lr * sign(g)
        assert!((layer.weight[[0, 0]] - 0.9).abs() < 1e-6);
        assert_eq!(layer.bias, array![0.0]);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut layer = Linear::<f64>::zeros(1, 1);
        layer.weight[[0, 0]] = 2.0;
        let grad = Linear::<f64>::zeros(1, 1);
        let mut opt = AdamW::new(0.5);
        opt.step(&mut layer, &grad, 0.1);
        assert!((layer.weight[[0, 0]] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut layer = Linear::<f64>::zeros(1, 1);
        layer.weight[[0, 0]] = 3.0;
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let mut grad = Linear::<f64>::zeros(1, 1);
            grad.weight[[0, 0]] = 2.0 * (layer.weight[[0, 0]] - 1.0);
            opt.step(&mut layer, &grad, 0.01);
        }
        assert!((layer.weight[[0, 0]] - 1.0).abs() < 1e-2);
    }
}
