use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PerceiverConfig, PerceiverError};
use crate::numerics::{ParamStore, Tensor};

/// Attention projections that carry low-rank factors.
pub const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

pub fn block_names(cfg: &PerceiverConfig) -> Vec<String> {
    let mut names = alloc::vec![String::from("x")];
    names.extend((0..cfg.self_blocks).map(|b| format!("s{b}")));
    names
}

pub fn latents_name(h: usize) -> String {
    format!("adapter.{h}.latents")
}

/// `(W_a, W_b)` parameter names for one projection.
pub fn factor_names(h: usize, block: &str, proj: &str) -> (String, String) {
    (
        format!("adapter.{h}.{block}.{proj}.a"),
        format!("adapter.{h}.{block}.{proj}.b"),
    )
}

/// Skill-specific latents and LoRA factors, one slot per skill code.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub params: ParamStore,
    allocated: usize,
}

impl AdapterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allocated(&self) -> usize {
        self.allocated
    }

    pub fn contains(&self, h: usize) -> bool {
        h < self.allocated
    }

    /// Adds slot `h`, which must be the next free code. Latents and `W_a` are
    /// Gaussian; `W_b` is zero so the new slot starts as an exact no-op.
    pub fn allocate<R: Rng + ?Sized>(
        &mut self,
        h: usize,
        cfg: &PerceiverConfig,
        rng: &mut R,
    ) -> Result<(), PerceiverError> {
        if h != self.allocated {
            return Err(PerceiverError::AdapterOrder {
                expected: self.allocated,
                got: h,
            });
        }
        self.params
            .insert(latents_name(h), Tensor::randn(&[cfg.latents, cfg.dim], 1.0, rng));
        let std = 1.0 / libm::sqrt(cfg.dim as f64);
        for block in block_names(cfg) {
            for proj in PROJECTIONS {
                let (a, b) = factor_names(h, &block, proj);
                self.params.insert(a, Tensor::randn(&[cfg.dim, cfg.rank], std, rng));
                self.params.insert(b, Tensor::zeros(&[cfg.rank, cfg.dim]));
            }
        }
        self.allocated += 1;
        Ok(())
    }

    /// Names of every tensor owned by slot `h`.
    pub fn slot_names(&self, h: usize) -> Vec<String> {
        let prefix = format!("adapter.{h}.");
        self.params
            .names()
            .filter(|n| n.starts_with(&prefix))
            .cloned()
            .collect()
    }

    /// Restores the slot count after the parameters were loaded by name.
    pub fn from_params(params: ParamStore, allocated: usize) -> Result<Self, PerceiverError> {
        for h in 0..allocated {
            if !params.contains(&latents_name(h)) {
                return Err(PerceiverError::UnallocatedSkill(h));
            }
        }
        Ok(Self { params, allocated })
    }
}
