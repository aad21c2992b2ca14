use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::{add, scale, Aabb, Camera, Vec3};

/// Depth written where a ray hits nothing.
pub const FAR_PLANE: f64 = 3.0;
const FACE_SHADE: [f64; 3] = [0.8, 0.9, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub position: Vec3,
    pub extent: Vec3,
    pub color: [f64; 3],
    pub class: usize,
}

impl SceneObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::centered(self.position, self.extent)
    }

    /// Point just below the middle of the top face.
    pub fn grasp_point(&self) -> Vec3 {
        [
            self.position[0],
            self.position[1],
            self.position[2] + 0.5 * self.extent[2] - 0.005,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bounds: Aabb,
    pub objects: Vec<SceneObject>,
    /// Index 0 is the front camera, the rest are auxiliary views.
    pub cameras: Vec<Camera>,
}

/// Row-major `H x W x 4` image: RGB in `[0,1]` then depth along the ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbdImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbdImage {
    pub fn rgb(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.data[(row * self.width + col) * 4 + 3]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Standard rig: a front camera and three auxiliary views around the table.
pub fn default_cameras(bounds: &Aabb, size: usize, aux: usize) -> Vec<Camera> {
    let c = bounds.center();
    let target = [c[0], c[1], bounds.min[2]];
    let lo = bounds.min;
    let hi = bounds.max;
    let mid_z = lo[2] + 0.9 * (hi[2] - lo[2]);
    let origins: [Vec3; 4] = [
        [c[0], lo[1] - 0.1, mid_z],
        [lo[0] - 0.1, c[1], mid_z],
        [hi[0] + 0.1, c[1], mid_z],
        [c[0], hi[1] + 0.1, mid_z],
    ];
    origins
        .iter()
        .take(1 + aux.min(3))
        .map(|&o| Camera::look_at(o, target, 40.0, size, size))
        .collect()
}

/// Nearest-surface ray cast against every box. For disjoint boxes this is the
/// same picture a back-to-front painter pass produces.
pub fn render_observation(scene: &Scene, camera: usize) -> Result<RgbdImage, SynthError> {
    let cam = scene
        .cameras
        .get(camera)
        .ok_or(SynthError::CameraIndex(camera))?;
    let boxes: Vec<Aabb> = scene.objects.iter().map(SceneObject::aabb).collect();
    let mut data = Vec::with_capacity(cam.width * cam.height * 4);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d = cam.ray_dir(row, col);
            let mut best: Option<(f64, usize, usize)> = None;
            for (k, b) in boxes.iter().enumerate() {
                if let Some(hit) = b.intersect(cam.origin, d) {
                    if hit.t_enter > 0.0 && best.map_or(true, |(t, _, _)| hit.t_enter < t) {
                        best = Some((hit.t_enter, k, hit.axis));
                    }
                }
            }
            match best {
                Some((t, k, axis)) => {
                    let c = scene.objects[k].color;
                    let s = FACE_SHADE[axis];
                    data.extend_from_slice(&[c[0] * s, c[1] * s, c[2] * s, t.min(FAR_PLANE)]);
                }
                None => data.extend_from_slice(&[0.0, 0.0, 0.0, FAR_PLANE]),
            }
        }
    }
    Ok(RgbdImage {
        width: cam.width,
        height: cam.height,
        data,
    })
}

/// World point seen at `(row, col)`, or `None` for background pixels.
pub fn back_project(cam: &Camera, image: &RgbdImage, row: usize, col: usize) -> Option<Vec3> {
    let depth = image.depth(row, col);
    if depth >= FAR_PLANE {
        return None;
    }
    Some(add(cam.origin, scale(cam.ray_dir(row, col), depth)))
}
