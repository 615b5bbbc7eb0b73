//! Central finite-difference gradient checking.
//!
//! The relative error of one entry is `|analytic - numeric| / max(|analytic|,
//! |numeric|, ABS_FLOOR)`. The floor keeps entries whose true gradient is
//! (near) zero from blowing up the ratio; for those the check degrades to an
//! absolute tolerance of `tol * ABS_FLOOR`.

use ndarray::ArrayViewMutD;

use super::params::ParamSet;

/// Relative error budget for checks run at `f64`.
pub const GRAD_TOL_F64: f64 = 1e-4;
/// Relative error budget for checks run at `f32`.
pub const GRAD_TOL_F32: f64 = 1e-2;

pub const ABS_FLOOR: f64 = 1e-3;
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheck {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || self.checked == 0 {
            self.max_rel_error = err;
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        self.checked += 1;
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        if other.max_rel_error > self.max_rel_error {
            GradCheck {
                checked: self.checked + other.checked,
                ..other
            }
        } else {
            GradCheck {
                checked: self.checked + other.checked,
                ..self
            }
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length must match input");
    let mut report = GradCheck::empty();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        report.record(i, analytic[i], (up - down) / (2.0 * STEP));
    }
    report
}

/// Checks the accumulated parameter gradient `grads` of `loss` at `model`.
///
/// At most `max_per_tensor` entries of each tensor are probed, spread evenly
/// over the tensor, so large layers stay cheap to check.
pub fn check_params<M>(model: &M, grads: &M, max_per_tensor: usize, loss: impl Fn(&M) -> f64) -> GradCheck
where
    M: ParamSet<f64> + Clone,
{
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut views = Vec::new();
        grads.visit("", &mut views);
        views.into_iter().map(|(n, v)| (n, v.iter().copied().collect())).collect()
    };
    let mut report = GradCheck::empty();
    let mut work = model.clone();
    let mut flat_offset = 0;
    for (t, (_, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let stride = (len / max_per_tensor.max(1)).max(1);
        for e in (0..len).step_by(stride).take(max_per_tensor) {
            let original = with_entry(&mut work, t, e, |v| *v);
            with_entry(&mut work, t, e, |v| *v = original + STEP);
            let up = loss(&work);
            with_entry(&mut work, t, e, |v| *v = original - STEP);
            let down = loss(&work);
            with_entry(&mut work, t, e, |v| *v = original);
            report.record(flat_offset + e, grad[e], (up - down) / (2.0 * STEP));
        }
        flat_offset += len;
    }
    report
}

fn with_entry<M: ParamSet<f64>, R>(m: &mut M, tensor: usize, entry: usize, f: impl FnOnce(&mut f64) -> R) -> R {
    let mut views: Vec<(String, ArrayViewMutD<'_, f64>)> = Vec::new();
    m.visit_mut("", &mut views);
    let view = &mut views[tensor].1;
    let slot = view.iter_mut().nth(entry).expect("entry in range");
    f(slot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let ok = check_gradient(f, &[1.5, -2.0], &[3.0, 3.0]);
        assert!(ok.max_rel_error < 1e-8);
        let bad = check_gradient(f, &[1.5, -2.0], &[3.0, 2.0]);
        assert!(bad.max_rel_error > 0.3);
        assert_eq!(bad.worst_index, 1);
    }
}
