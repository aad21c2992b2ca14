//! Behavior-cloning cross-entropy, representation distillation against a
//! frozen teacher, the total objective and teacher snapshots.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{Fnv64, Graph, NumericsError, ParamStore, Tensor, Var};
use crate::perceiver::{ActionLogits, ActionTarget, AdapterSet, HeadVars};

pub const DEFAULT_TEMPERATURE: f64 = 3.0;
pub const DEFAULT_SRD_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistillError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{count} predictions for {targets} targets")]
    BatchMismatch { count: usize, targets: usize },
    #[error("target {index} out of range for a head with {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("loss component {0} is not finite")]
    NonFinite(&'static str),
    #[error("the base task has no teacher")]
    BaseTask,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn head_targets(t: &ActionTarget, grid: usize) -> [usize; 6] {
    [
        (t.translation[0] * grid + t.translation[1]) * grid + t.translation[2],
        t.rotation[0],
        t.rotation[1],
        t.rotation[2],
        t.gripper,
        t.collision,
    ]
}

/// Sum of per-head cross-entropies, averaged over the batch.
pub fn loss_ce(
    g: &mut Graph,
    heads: &[HeadVars],
    targets: &[ActionTarget],
) -> Result<Var, DistillError> {
    if heads.is_empty() {
        return Err(DistillError::EmptyBatch);
    }
    if heads.len() != targets.len() {
        return Err(DistillError::BatchMismatch {
            count: heads.len(),
            targets: targets.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (h, t) in heads.iter().zip(targets) {
        let cells = g.value(h.translation).numel();
        let grid = libm::round(libm::cbrt(cells as f64)) as usize;
        for (var, idx) in h.all().into_iter().zip(head_targets(t, grid)) {
            let classes = g.value(var).numel();
            if idx >= classes || t.translation.iter().any(|&c| c >= grid) {
                return Err(DistillError::TargetOutOfRange {
                    index: idx,
                    classes,
                });
            }
            let lp = g.log_softmax(var)?;
            let picked = g.gather(lp, Arc::from(vec![idx]), &[1])?;
            let nll = g.sum(picked)?;
            total = Some(match total {
                None => g.scale(nll, -1.0)?,
                Some(acc) => g.sub(acc, nll)?,
            });
        }
    }
    let total = total.expect("nonempty batch");
    Ok(g.scale(total, 1.0 / heads.len() as f64)?)
}

fn teacher_heads(t: &ActionLogits) -> [Vec<f64>; 6] {
    [
        t.translation.clone(),
        t.rotation[0].clone(),
        t.rotation[1].clone(),
        t.rotation[2].clone(),
        t.gripper.to_vec(),
        t.collision.to_vec(),
    ]
}

/// `KL(softmax(teacher / tau) || softmax(student / tau))` per head, summed
/// over heads and averaged over the masked samples. Zero when no sample is
/// masked.
pub fn loss_srd(
    g: &mut Graph,
    student: &[HeadVars],
    teacher: &[Option<ActionLogits>],
    mask: &[bool],
    tau: f64,
) -> Result<Var, DistillError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DistillError::Temperature(tau));
    }
    if student.len() != mask.len() || teacher.len() != mask.len() {
        return Err(DistillError::BatchMismatch {
            count: student.len(),
            targets: mask.len(),
        });
    }
    let masked = mask.iter().filter(|&&m| m).count();
    if masked == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut total: Option<Var> = None;
    for ((s, t), &m) in student.iter().zip(teacher).zip(mask) {
        if !m {
            continue;
        }
        let t = t.as_ref().ok_or(DistillError::BatchMismatch {
            count: 0,
            targets: masked,
        })?;
        for (var, logits) in s.all().into_iter().zip(teacher_heads(t).iter()) {
            let shape = g.value(var).shape().to_vec();
            let p = softmax(&logits, tau);
            let log_p: Vec<f64> = p.iter().map(|&x| if x > 0.0 { libm::log(x) } else { 0.0 }).collect();
            let entropy_term: f64 = p.iter().zip(&log_p).map(|(a, b)| a * b).sum();
            let scaled = g.scale(var, 1.0 / tau)?;
            let lq = g.log_softmax(scaled)?;
            let pt = g.constant(Tensor::new(shape, p)?);
            let cross = g.mul(pt, lq)?;
            let cross = g.sum(cross)?;
            // KL = sum p log p - sum p log q
            let kl = g.scale(cross, -1.0)?;
            let kl = g.add_scalar(kl, entropy_term)?;
            total = Some(match total {
                None => kl,
                Some(acc) => g.add(acc, kl)?,
            });
        }
    }
    let total = total.expect("masked samples exist");
    Ok(g.scale(total, 1.0 / masked as f64)?)
}

fn softmax(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| libm::exp((v - m) / tau)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Graph form of `ce + ssr + lambda2 * srd`.
pub fn combine(
    g: &mut Graph,
    ce: Var,
    ssr: Option<Var>,
    srd: Option<Var>,
    lambda2: f64,
) -> Result<Var, DistillError> {
    let mut total = ce;
    if let Some(s) = ssr {
        total = g.add(total, s)?;
    }
    if let Some(d) = srd {
        let d = g.scale(d, lambda2)?;
        total = g.add(total, d)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ssr: f64,
    pub srd: f64,
    pub total: f64,
    /// Replayed samples in the batch.
    pub masked: usize,
}

pub fn loss_total(
    ce: f64,
    ssr: f64,
    srd: f64,
    lambda2: f64,
    masked: usize,
) -> Result<LossBreakdown, DistillError> {
    for (name, v) in [("ce", ce), ("ssr", ssr), ("srd", srd), ("lambda2", lambda2)] {
        if !v.is_finite() {
            return Err(DistillError::NonFinite(name));
        }
    }
    Ok(LossBreakdown {
        ce,
        ssr,
        srd,
        total: ce + ssr + lambda2 * srd,
        masked,
    })
}

/// Frozen copy of the models at the end of the previous task.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSnapshot {
    pub task: usize,
    pub base: ParamStore,
    pub adapters: AdapterSet,
    pub field: ParamStore,
    fingerprint: u64,
}

fn snapshot_hash(base: &ParamStore, adapters: &AdapterSet, field: &ParamStore) -> u64 {
    let mut h = Fnv64::new();
    for part in [base.fingerprint(), adapters.params.fingerprint(), field.fingerprint()] {
        h.write(&part.to_le_bytes());
    }
    h.write(&(adapters.allocated() as u64).to_le_bytes());
    h.finish()
}

impl TeacherSnapshot {
    /// Captures the models for 0-based `task`, which must follow the base task.
    pub fn capture(
        base: &ParamStore,
        adapters: &AdapterSet,
        field: &ParamStore,
        task: usize,
    ) -> Result<Self, DistillError> {
        if task == 0 {
            return Err(DistillError::BaseTask);
        }
        Ok(Self {
            task,
            base: base.clone(),
            adapters: adapters.clone(),
            field: field.clone(),
            fingerprint: snapshot_hash(base, adapters, field),
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Recomputes the parameter hash and compares it with the capture-time value.
    pub fn is_intact(&self) -> bool {
        snapshot_hash(&self.base, &self.adapters, &self.field) == self.fingerprint
    }
}
