use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::PerceiverError;
use crate::geometry::{Aabb, Camera};
use crate::numerics::Tensor;
use crate::perceiver::action::ActionCodec;
use crate::synthbench::{back_project, RgbdImage, TextEncoding};

/// Occupancy, RGB, normalized cell position.
pub const CHANNELS: usize = 7;
/// Leading channels that carry appearance rather than position.
pub const APPEARANCE_CHANNELS: usize = 4;

/// Dense `G^3 x C` grid, flat cell index `(x*G + y)*G + z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub grid: usize,
    pub bounds: Aabb,
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn cells(&self) -> usize {
        self.grid * self.grid * self.grid
    }

    pub fn cell(&self, flat: usize) -> &[f64] {
        &self.data[flat * CHANNELS..(flat + 1) * CHANNELS]
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells()).filter(|&c| self.data[c * CHANNELS] > 0.0)
    }
}

/// Back-projects every foreground pixel and marks the cells the points land
/// in. Colors of points sharing a cell are averaged; points outside the
/// workspace are dropped.
pub fn voxelize(
    image: &RgbdImage,
    camera: &Camera,
    bounds: &Aabb,
    grid: usize,
    label: &str,
) -> Result<VoxelGrid, PerceiverError> {
    let codec = ActionCodec::new(grid, *bounds);
    let cells = codec.cells();
    let mut sums = vec![0.0; cells * 3];
    let mut counts = vec![0usize; cells];
    for row in 0..image.height {
        for col in 0..image.width {
            let Some(p) = back_project(camera, image, row, col) else { continue };
            let Some(cell) = codec.cell_of(p) else { continue };
            let flat = codec.flat_cell(cell);
            let rgb = image.rgb(row, col);
            for k in 0..3 {
                sums[flat * 3 + k] += rgb[k];
            }
            counts[flat] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(PerceiverError::EmptyGrid(String::from(label)));
    }
    let mut data = vec![0.0; cells * CHANNELS];
    for flat in 0..cells {
        if counts[flat] == 0 {
            continue;
        }
        let n = counts[flat] as f64;
        let cell = codec.unflatten_cell(flat);
        let d = &mut data[flat * CHANNELS..(flat + 1) * CHANNELS];
        d[0] = 1.0;
        for k in 0..3 {
            d[1 + k] = sums[flat * 3 + k] / n;
            d[4 + k] = (cell[k] as f64 + 0.5) / grid as f64;
        }
    }
    Ok(VoxelGrid {
        grid,
        bounds: *bounds,
        data,
    })
}

/// Voxel features reshaped for the network: per-cell rows and per-patch rows.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelInput {
    /// `G^3 x C`.
    pub cells: Tensor,
    /// `(G/P)^3 x (P^3 C)`, cells of a patch in `(dx*P + dy)*P + dz` order.
    pub patches: Tensor,
}

impl VoxelInput {
    pub fn new(grid: &VoxelGrid, patch: usize) -> Result<Self, PerceiverError> {
        let g = grid.grid;
        if patch == 0 || g % patch != 0 {
            return Err(PerceiverError::PatchDivisibility { grid: g, patch });
        }
        let per = g / patch;
        let width = patch * patch * patch * CHANNELS;
        let mut patches = vec![0.0; per * per * per * width];
        for x in 0..g {
            for y in 0..g {
                for z in 0..g {
                    let flat = (x * g + y) * g + z;
                    let src = grid.cell(flat);
                    if src[0] == 0.0 {
                        continue;
                    }
                    let p = ((x / patch) * per + y / patch) * per + z / patch;
                    let o = ((x % patch) * patch + y % patch) * patch + z % patch;
                    let dst = p * width + o * CHANNELS;
                    patches[dst..dst + CHANNELS].copy_from_slice(src);
                }
            }
        }
        Ok(Self {
            cells: Tensor::new(vec![grid.cells(), CHANNELS], grid.data.clone())?,
            patches: Tensor::new(vec![per * per * per, width], patches)?,
        })
    }
}

/// Everything the policy reads for one keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput {
    pub voxels: Arc<VoxelInput>,
    /// `N_e x D_text` frozen token embeddings.
    pub tokens: Tensor,
    /// Gripper and collision bits of the current keyframe.
    pub state: [usize; 2],
}

impl PolicyInput {
    pub fn new(voxels: Arc<VoxelInput>, text: &TextEncoding, state: [usize; 2]) -> Result<Self, PerceiverError> {
        if state.iter().any(|&b| b > 1) {
            return Err(PerceiverError::Config(format!("state bits {state:?} must be 0 or 1")));
        }
        Ok(Self {
            voxels,
            tokens: text.tokens.clone(),
            state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::{default_cameras, render_observation, Scene, SceneObject};

    fn scene(objects: Vec<SceneObject>) -> Scene {
        let bounds = Aabb::new([0.0; 3], [1.0; 3]);
        Scene {
            bounds,
            objects,
            cameras: default_cameras(&bounds, 32, 1),
        }
    }

    fn connected(grid: &VoxelGrid, occ: &[usize]) -> bool {
        let g = grid.grid;
        let codec = ActionCodec::new(g, grid.bounds);
        let mut seen = vec![false; occ.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            let a = codec.unflatten_cell(occ[i]);
            for (j, &o) in occ.iter().enumerate() {
                let b = codec.unflatten_cell(o);
                let adj = (0..3).all(|k| a[k].abs_diff(b[k]) <= 1);
                if adj && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn centered_object_is_one_component_with_center() {
        let s = scene(vec![SceneObject {
            position: [0.525, 0.525, 0.525],
            extent: [0.2; 3],
            color: [0.3, 0.6, 0.9],
            class: 0,
        }]);
        let img = render_observation(&s, 0).unwrap();
        let grid = voxelize(&img, &s.cameras[0], &s.bounds, 20, "center").unwrap();
        let occ: Vec<usize> = grid.occupied().collect();
        assert!(!occ.is_empty());
        assert!(connected(&grid, &occ));
        // Surface cells of a 4-cell-wide cube around cell 10: the visible faces
        // sit within two cells of the center.
        let codec = ActionCodec::new(20, s.bounds);
        for &o in &occ {
            let c = codec.unflatten_cell(o);
            assert!(c.iter().all(|&k| (8..=12).contains(&k)), "{c:?}");
            let cell = grid.cell(o);
            assert!(cell[1..4].iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn empty_image_errors() {
        let s = scene(vec![]);
        let img = render_observation(&s, 0).unwrap();
        assert!(matches!(
            voxelize(&img, &s.cameras[0], &s.bounds, 20, "empty"),
            Err(PerceiverError::EmptyGrid(l)) if l == "empty"
        ));
    }

    #[test]
    fn deterministic_and_patch_layout() {
        let s = scene(vec![SceneObject {
            position: [0.4, 0.6, 0.04],
            extent: [0.08; 3],
            color: [1.0, 0.0, 0.0],
            class: 0,
        }]);
        let img = render_observation(&s, 0).unwrap();
        let a = voxelize(&img, &s.cameras[0], &s.bounds, 20, "a").unwrap();
        let b = voxelize(&img, &s.cameras[0], &s.bounds, 20, "a").unwrap();
        assert_eq!(a, b);
        let input = VoxelInput::new(&a, 5).unwrap();
        assert_eq!(input.patches.shape(), &[64, 125 * CHANNELS]);
        let nonzero_cells = a.occupied().count();
        let nonzero_patch_cells = input
            .patches
            .data()
            .chunks(CHANNELS)
            .filter(|c| c[0] > 0.0)
            .count();
        assert_eq!(nonzero_cells, nonzero_patch_cells);
        assert!(matches!(
            VoxelInput::new(&a, 3),
            Err(PerceiverError::PatchDivisibility { grid: 20, patch: 3 })
        ));
    }
}
