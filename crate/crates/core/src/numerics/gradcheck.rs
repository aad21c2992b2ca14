use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, Tensor, Var};

/// Denominator floor for the relative error, so vanishing gradients are
/// compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many (seeded, randomly chosen) entries per parameter.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-3,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(flat index, analytic, numeric)` for entries over tolerance.
    pub failures: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: BTreeMap<String, ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.values().all(|p| p.failures.is_empty())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.values().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = libm::fabs(analytic).max(libm::fabs(numeric)).max(REL_FLOOR);
    libm::fabs(analytic - numeric) / scale
}

/// Compares reverse-mode gradients of `loss` against central differences
/// `(f(x+eps) - f(x-eps)) / 2eps`, replaying the recorded graph for every
/// perturbed entry.
pub fn check_gradients(
    graph: &Graph,
    loss: Var,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericsError> {
    if !(opts.epsilon > 0.0 && opts.epsilon <= 1e-2) {
        return Err(NumericsError::BadEpsilon(opts.epsilon));
    }
    let analytic = graph.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for (name, grad) in &analytic {
        let var = graph.leaf_var(name).expect("gradient names come from leaves");
        let base = graph.value(var).clone();
        let n = base.numel();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck::default();
        for idx in entries {
            let numeric = {
                let eval_at = |delta: f64| -> Result<f64, NumericsError> {
                    let mut data = base.data().to_vec();
                    data[idx] += delta;
                    let mut inputs = BTreeMap::new();
                    inputs.insert(name.clone(), Tensor::new(base.shape().to_vec(), data)?);
                    Ok(graph.replay_value(&inputs, loss)?.item())
                };
                (eval_at(opts.epsilon)? - eval_at(-opts.epsilon)?) / (2.0 * opts.epsilon)
            };
            let a = grad.data()[idx];
            let rel = relative_error(a, numeric);
            check.checked += 1;
            check.max_rel_err = check.max_rel_err.max(rel);
            check.max_abs_err = check.max_abs_err.max(libm::fabs(a - numeric));
            if rel > opts.tolerance {
                check.failures.push((idx, a, numeric));
            }
        }
        report.params.insert(name.clone(), check);
    }
    Ok(report)
}
