//! Discretized action space: translation over the voxel grid, per-axis Euler
//! rotation bins, gripper and collision flags.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::PerceiverError;
use crate::geometry::{Aabb, Vec3};

/// Rotation resolution in degrees.
pub const ROTATION_RESOLUTION_DEG: f64 = 5.0;
/// Bins per rotation axis (360 / 5).
pub const ROTATION_BINS: usize = 72;

/// Continuous keyframe pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    /// Euler angles in degrees, each in `[0, 360)`.
    pub euler_deg: [f64; 3],
    pub gripper_open: bool,
    pub collision: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTarget {
    pub translation: [usize; 3],
    pub rotation: [usize; 3],
    pub gripper: usize,
    pub collision: usize,
}

/// Per-head logits, already detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionLogits {
    /// Flat over the `G^3` grid, index `(x*G + y)*G + z`.
    pub translation: Vec<f64>,
    pub rotation: [Vec<f64>; 3],
    pub gripper: [f64; 2],
    pub collision: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCodec {
    pub grid: usize,
    pub bounds: Aabb,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ActionCodec {
    pub fn new(grid: usize, bounds: Aabb) -> Self {
        Self { grid, bounds }
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid * self.grid
    }

    pub fn flat_cell(&self, cell: [usize; 3]) -> usize {
        (cell[0] * self.grid + cell[1]) * self.grid + cell[2]
    }

    pub fn unflatten_cell(&self, flat: usize) -> [usize; 3] {
        let g = self.grid;
        [flat / (g * g), (flat / g) % g, flat % g]
    }

    /// Cell containing `p`, or `None` outside the workspace.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut cell = [0; 3];
        for a in 0..3 {
            let frac = (p[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]);
            cell[a] = (libm::floor(frac * self.grid as f64) as usize).min(self.grid - 1);
        }
        Some(cell)
    }

    pub fn cell_center(&self, cell: [usize; 3]) -> Vec3 {
        let mut p = [0.0; 3];
        for a in 0..3 {
            let size = (self.bounds.max[a] - self.bounds.min[a]) / self.grid as f64;
            p[a] = self.bounds.min[a] + (cell[a] as f64 + 0.5) * size;
        }
        p
    }

    pub fn encode(&self, pose: &Pose) -> Result<ActionTarget, PerceiverError> {
        let translation = self
            .cell_of(pose.position)
            .ok_or(PerceiverError::PoseOutsideWorkspace(pose.position))?;
        let mut rotation = [0; 3];
        for (a, r) in rotation.iter_mut().enumerate() {
            let angle = pose.euler_deg[a];
            if !(0.0..360.0).contains(&angle) {
                return Err(PerceiverError::AngleOutOfRange(angle));
            }
            *r = (libm::floor(angle / ROTATION_RESOLUTION_DEG) as usize).min(ROTATION_BINS - 1);
        }
        Ok(ActionTarget {
            translation,
            rotation,
            gripper: usize::from(pose.gripper_open),
            collision: usize::from(pose.collision),
        })
    }

    /// Pose at the center of every bin of `target`.
    pub fn bin_center(&self, target: &ActionTarget) -> Pose {
        let mut euler = [0.0; 3];
        for a in 0..3 {
            euler[a] = (target.rotation[a] as f64 + 0.5) * ROTATION_RESOLUTION_DEG;
        }
        Pose {
            position: self.cell_center(target.translation),
            euler_deg: euler,
            gripper_open: target.gripper == 1,
            collision: target.collision == 1,
        }
    }

    /// Per-head argmax; ties go to the lowest index.
    pub fn decode(&self, logits: &ActionLogits) -> ActionTarget {
        let flat = argmax(&logits.translation);
        ActionTarget {
            translation: self.unflatten_cell(flat),
            rotation: [
                argmax(&logits.rotation[0]),
                argmax(&logits.rotation[1]),
                argmax(&logits.rotation[2]),
            ],
            gripper: argmax(&logits.gripper),
            collision: argmax(&logits.collision),
        }
    }

    /// Logits that decode to `target`: one on the target bin, zero elsewhere.
    pub fn one_hot(&self, target: &ActionTarget) -> ActionLogits {
        let hot = |n: usize, i: usize| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        };
        let mut gripper = [0.0; 2];
        gripper[target.gripper] = 1.0;
        let mut collision = [0.0; 2];
        collision[target.collision] = 1.0;
        ActionLogits {
            translation: hot(self.cells(), self.flat_cell(target.translation)),
            rotation: target.rotation.map(|r| hot(ROTATION_BINS, r)),
            gripper,
            collision,
        }
    }

    pub fn validate(&self, target: &ActionTarget) -> Result<(), PerceiverError> {
        let ok = target.translation.iter().all(|&t| t < self.grid)
            && target.rotation.iter().all(|&r| r < ROTATION_BINS)
            && target.gripper < 2
            && target.collision < 2;
        if ok {
            Ok(())
        } else {
            Err(PerceiverError::TargetOutOfRange(*target))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit_codec() -> ActionCodec {
        ActionCodec::new(20, Aabb::new([0.0; 3], [1.0; 3]))
    }

    #[test]
    fn midpoint_and_last_rotation_bin() {
        let codec = unit_codec();
        let t = codec
            .encode(&Pose {
                position: [0.5, 0.5, 0.5],
                euler_deg: [359.0, 0.0, 4.99],
                gripper_open: true,
                collision: false,
            })
            .unwrap();
        assert_eq!(t.translation, [10, 10, 10]);
        assert_eq!(t.rotation, [71, 0, 0]);
        assert_eq!((t.gripper, t.collision), (1, 0));
    }

    #[test]
    fn upper_face_clamps_to_last_bin() {
        let codec = unit_codec();
        assert_eq!(codec.cell_of([1.0, 1.0, 1.0]), Some([19, 19, 19]));
    }

    #[test]
    fn rejects_outside_workspace_and_bad_angle() {
        let codec = unit_codec();
        let mut pose = Pose {
            position: [1.2, 0.5, 0.5],
            euler_deg: [0.0; 3],
            gripper_open: false,
            collision: false,
        };
        assert!(matches!(
            codec.encode(&pose),
            Err(PerceiverError::PoseOutsideWorkspace(_))
        ));
        pose.position = [0.5; 3];
        pose.euler_deg[1] = 360.0;
        assert!(matches!(
            codec.encode(&pose),
            Err(PerceiverError::AngleOutOfRange(_))
        ));
    }

    #[test]
    fn decode_breaks_ties_low() {
        let codec = ActionCodec::new(2, Aabb::new([0.0; 3], [1.0; 3]));
        let logits = ActionLogits {
            translation: vec![1.0; 8],
            rotation: [vec![0.0; 72], vec![0.0; 72], vec![0.0; 72]],
            gripper: [3.0, 3.0],
            collision: [0.0, 1.0],
        };
        let t = codec.decode(&logits);
        assert_eq!(t.translation, [0, 0, 0]);
        assert_eq!(t.rotation, [0, 0, 0]);
        assert_eq!((t.gripper, t.collision), (0, 1));
    }

    proptest! {
        #[test]
        fn bin_center_round_trip(
            x in 0usize..20, y in 0usize..20, z in 0usize..20,
            r0 in 0usize..72, r1 in 0usize..72, r2 in 0usize..72,
            g in 0usize..2, c in 0usize..2,
        ) {
            let codec = unit_codec();
            let t = ActionTarget { translation: [x, y, z], rotation: [r0, r1, r2], gripper: g, collision: c };
            prop_assert_eq!(codec.encode(&codec.bin_center(&t)).unwrap(), t);
        }

        #[test]
        fn decode_invariant_to_head_shift(shift in -50.0f64..50.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let codec = ActionCodec::new(4, Aabb::new([0.0; 3], [1.0; 3]));
            let mut l = ActionLogits {
                translation: (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                rotation: core::array::from_fn(|_| (0..72).map(|_| rng.gen_range(-3.0..3.0)).collect()),
                gripper: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                collision: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            };
            let before = codec.decode(&l);
            l.translation.iter_mut().for_each(|v| *v += shift);
            l.rotation[1].iter_mut().for_each(|v| *v += shift);
            l.gripper.iter_mut().for_each(|v| *v += shift);
            prop_assert_eq!(codec.decode(&l), before);
        }
    }
}
