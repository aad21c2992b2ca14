//! Voxel-and-language policy with skill-routed latents and low-rank adapters.

pub mod action;
mod adapters;
mod network;
mod voxel;

pub use action::{ActionCodec, ActionLogits, ActionTarget, Pose, ROTATION_BINS};
pub use adapters::{block_names, factor_names, latents_name, AdapterSet, PROJECTIONS};
pub use network::{cross_attend, lora_linear, HeadVars, Perceiver, PolicyVars, Projection, Routing};
pub use voxel::{voxelize, PolicyInput, VoxelGrid, VoxelInput, APPEARANCE_CHANNELS, CHANNELS};

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceiverError {
    #[error("pose position {0:?} lies outside the workspace")]
    PoseOutsideWorkspace(Vec3),
    #[error("angle {0} outside [0, 360)")]
    AngleOutOfRange(f64),
    #[error("action target {0:?} outside codec ranges")]
    TargetOutOfRange(ActionTarget),
    #[error("no observed point of '{0}' lands inside the workspace")]
    EmptyGrid(String),
    #[error("grid extent {grid} is not divisible by patch size {patch}")]
    PatchDivisibility { grid: usize, patch: usize },
    #[error("skill code {0} has no adapters allocated")]
    UnallocatedSkill(usize),
    #[error("adapters must be allocated in order: expected code {expected}, got {got}")]
    AdapterOrder { expected: usize, got: usize },
    #[error("invalid perceiver config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceiverConfig {
    pub grid: usize,
    pub patch: usize,
    /// Width of the per-cell voxel encoding.
    pub voxel_dim: usize,
    pub dim: usize,
    pub latents: usize,
    pub rank: usize,
    pub self_blocks: usize,
    pub text_dim: usize,
    /// Hidden width of the voxel-space translation head.
    pub trans_dim: usize,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self {
            grid: 20,
            patch: 5,
            voxel_dim: 16,
            dim: 64,
            latents: 32,
            rank: 10,
            self_blocks: 2,
            text_dim: 64,
            trans_dim: 16,
        }
    }
}

impl PerceiverConfig {
    pub fn validate(&self) -> Result<(), PerceiverError> {
        if self.patch == 0 || self.grid % self.patch != 0 {
            return Err(PerceiverError::PatchDivisibility {
                grid: self.grid,
                patch: self.patch,
            });
        }
        let dims = [self.voxel_dim, self.dim, self.latents, self.rank, self.text_dim, self.trans_dim];
        if dims.contains(&0) {
            return Err(PerceiverError::Config(String::from("all widths must be positive")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid * self.grid
    }

    /// Voxel patches, not counting the state token.
    pub fn patches(&self) -> usize {
        let per = self.grid / self.patch;
        per * per * per
    }
}
