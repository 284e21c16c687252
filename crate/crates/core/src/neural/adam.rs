use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neural::graph::ParamGrads;
use crate::neural::nets::Module;

/// Adam with bias correction. Moments are keyed by parameter name; parameters
/// that receive no gradient in a step are left untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub(crate) first: BTreeMap<String, Matrix>,
    #[serde(skip)]
    pub(crate) second: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn moments(&self, name: &str) -> Option<(&Matrix, &Matrix)> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }

    /// Applies one update. Gradients are validated before anything mutates.
    pub fn step(&mut self, model: &mut dyn Module, grads: &ParamGrads) -> Result<()> {
        if let Some((name, _)) = grads.0.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NumericGuardTripped(format!("non-finite gradient for {name}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let first = &mut self.first;
        let second = &mut self.second;
        model.visit_mut("", &mut |name, p| {
            let Some(g) = grads.get(&name) else {
                return;
            };
            let m = first
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let v = second
                .entry(name)
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let mh = ms[i] / bc1;
                let vh = vs[i] / bc2;
                ps[i] -= lr * mh / (vh.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::nets::Linear;

    fn grads_for(l: &Linear, f: impl Fn(&Matrix) -> Matrix) -> ParamGrads {
        let mut out = ParamGrads::default();
        l.visit("", &mut |n, m| {
            out.0.insert(n, f(m));
        });
        out
    }

    fn layer() -> Linear {
        let mut rng = crate::neural::nets::seeded_rng(5);
        Linear::new(3, 2, &mut rng)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut l = layer();
        let before = l.clone();
        let mut adam = AdamState::new(5e-4).unwrap();
        let g = grads_for(&l, |m| Matrix::zeros(m.rows(), m.cols()));
        for _ in 0..3 {
            adam.step(&mut l, &g).unwrap();
        }
        assert_eq!(l, before);
        assert_eq!(adam.step, 3);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut l = layer();
        let mut adam = AdamState::new(1e-3).unwrap();
        let g = grads_for(&l, |m| Matrix::filled(m.rows(), m.cols(), 0.37));
        for _ in 0..200 {
            let before = l.weight.clone();
            adam.step(&mut l, &g).unwrap();
            let delta = before[(0, 0)] - l.weight[(0, 0)];
            assert!((delta - 1e-3).abs() < 1e-6 * 1e-3 + 1e-10);
        }
    }

    #[test]
    fn nan_gradient_trips_guard_without_mutation() {
        let mut l = layer();
        let before = l.clone();
        let mut adam = AdamState::new(1e-3).unwrap();
        let g = grads_for(&l, |m| Matrix::filled(m.rows(), m.cols(), f64::NAN));
        assert!(matches!(adam.step(&mut l, &g), Err(Error::NumericGuardTripped(_))));
        assert_eq!(l, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut l = layer();
            let mut adam = AdamState::new(1e-2).unwrap();
            for k in 0..10 {
                let g = grads_for(&l, |m| m.map(|x| x * k as f64 - 0.1));
                adam.step(&mut l, &g).unwrap();
            }
            l
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        assert!(AdamState::new(0.0).is_err());
    }
}
