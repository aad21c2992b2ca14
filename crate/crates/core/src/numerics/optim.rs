use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UpdateRule {
    Sgd,
    /// Bias-corrected adaptive moments.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

/// Optimizer accumulators keyed by parameter name.
///
/// Parameters absent from a step's gradient map are left untouched, including
/// their moments, so skills that were not routed in a batch do not drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub rule: UpdateRule,
    pub lr: f64,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(rule: UpdateRule, lr: f64) -> Self {
        Self {
            rule,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `params` that has an entry in
    /// `grads`. Gradients are validated up front; on error nothing is modified.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), NumericsError> {
        self.apply_stores(&mut [params], grads)
    }

    /// One step over several stores whose names do not overlap.
    pub fn apply_stores(
        &mut self,
        stores: &mut [&mut ParamStore],
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), NumericsError> {
        for (name, g) in grads {
            let Some(p) = stores.iter().find_map(|s| s.get(name)) else { continue };
            if p.shape() != g.shape() {
                return Err(NumericsError::GradientShape {
                    name: name.clone(),
                    expected: p.shape().into(),
                    got: g.shape().into(),
                });
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(NumericsError::NonFiniteGradient(name.clone()));
            }
        }
        for store in stores.iter_mut() {
            for (name, p) in store.iter_mut() {
                let Some(g) = grads.get(name) else { continue };
                self.update(name, p, g);
            }
        }
        self.step += 1;
        Ok(())
    }

    fn update(&mut self, name: &str, p: &mut Tensor, g: &Tensor) {
        match self.rule {
            UpdateRule::Sgd => {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= self.lr * d;
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let slot = self.moments.entry(String::from(name)).or_insert_with(|| Moments {
                    first: vec![0.0; g.numel()],
                    second: vec![0.0; g.numel()],
                    steps: 0,
                });
                slot.steps += 1;
                let t = slot.steps as f64;
                let c1 = 1.0 - libm::pow(beta1, t);
                let c2 = 1.0 - libm::pow(beta2, t);
                let w = p.data_mut();
                for k in 0..w.len() {
                    let d = g.data()[k];
                    slot.first[k] = beta1 * slot.first[k] + (1.0 - beta1) * d;
                    slot.second[k] = beta2 * slot.second[k] + (1.0 - beta2) * d * d;
                    let mhat = slot.first[k] / c1;
                    let vhat = slot.second[k] / c2;
                    w[k] -= self.lr * mhat / (libm::sqrt(vhat) + eps);
                }
            }
        }
    }

    /// Flattened accumulators for persistence: `(name, first, second, steps)`.
    pub fn export_moments(&self) -> Vec<(String, Vec<f64>, Vec<f64>, u64)> {
        self.moments
            .iter()
            .map(|(n, m)| (n.clone(), m.first.clone(), m.second.clone(), m.steps))
            .collect()
    }

    pub fn import_moments(
        &mut self,
        step: u64,
        moments: Vec<(String, Vec<f64>, Vec<f64>, u64)>,
    ) {
        self.step = step;
        self.moments = moments
            .into_iter()
            .map(|(n, first, second, steps)| (n, Moments { first, second, steps }))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v));
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor> {
        let mut g = BTreeMap::new();
        g.insert("w".into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn sgd_step() {
        let mut p = store(1.0);
        let mut opt = OptimizerState::new(UpdateRule::Sgd, 0.1);
        opt.apply(&mut p, &grad(2.0)).unwrap();
        assert!((p.get("w").unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for rule in [UpdateRule::Sgd, UpdateRule::adam()] {
            let mut p = store(1.5);
            let mut opt = OptimizerState::new(rule, 0.1);
            opt.apply(&mut p, &grad(0.0)).unwrap();
            assert_eq!(p.get("w").unwrap().item(), 1.5);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t=1: m = (1-b1) g, v = (1-b2) g^2, mhat = vhat = 1 -> step = lr / (1 + eps)
        let lr = 5e-4;
        let mut p = store(0.0);
        let mut opt = OptimizerState::new(UpdateRule::adam(), lr);
        opt.apply(&mut p, &grad(1.0)).unwrap();
        let moved = -p.get("w").unwrap().item();
        assert!((moved - lr / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn absent_parameters_untouched() {
        let mut p = store(1.0);
        p.insert("other", Tensor::scalar(3.0));
        let mut opt = OptimizerState::new(UpdateRule::adam(), 0.1);
        opt.apply(&mut p, &grad(1.0)).unwrap();
        assert_eq!(p.get("other").unwrap().item(), 3.0);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut p = store(1.0);
        let mut opt = OptimizerState::new(UpdateRule::Sgd, 0.1);
        let mut g = BTreeMap::new();
        g.insert("w".into(), Tensor::from_parts(vec![1], vec![f64::NAN]));
        assert!(matches!(
            opt.apply(&mut p, &g),
            Err(NumericsError::NonFiniteGradient(_))
        ));
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }
}
