//! Small 3-vector helpers, axis-aligned boxes and pinhole cameras.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

/// Ray/box hit: entry distance, exit distance and the axis of the entry face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t_enter: f64,
    pub t_exit: f64,
    pub axis: usize,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn centered(center: Vec3, extent: Vec3) -> Self {
        let h = scale(extent, 0.5);
        Self::new(sub(center, h), add(center, h))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    pub fn center(&self) -> Vec3 {
        scale(add(self.min, self.max), 0.5)
    }

    /// Slab intersection with the ray `o + t d` restricted to `t >= 0`.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if libm::fabs(d[a]) < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let mut near = (self.min[a] - o[a]) * inv;
            let mut far = (self.max[a] - o[a]) * inv;
            if near > far {
                core::mem::swap(&mut near, &mut far);
            }
            if near > t0 {
                t0 = near;
                axis = a;
            }
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(Hit {
            t_enter: t0,
            t_exit: t1,
            axis,
        })
    }
}

/// Pinhole camera with square pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn look_at(origin: Vec3, target: Vec3, fov_y_deg: f64, width: usize, height: usize) -> Self {
        let forward = normalize(sub(target, origin));
        let world_up = if libm::fabs(forward[2]) > 0.999 {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        let right = normalize(cross(forward, world_up));
        let up = cross(right, forward);
        Self {
            origin,
            forward,
            right,
            up,
            fov_y_deg,
            width,
            height,
        }
    }

    /// Unit direction through the center of pixel `(row, col)`.
    pub fn ray_dir(&self, row: usize, col: usize) -> Vec3 {
        let half = libm::tan(self.fov_y_deg.to_radians() * 0.5);
        let aspect = self.width as f64 / self.height as f64;
        let x = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * half * aspect;
        let y = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * half;
        normalize(add(self.forward, add(scale(self.right, x), scale(self.up, y))))
    }

    /// Pixel containing the projection of `p`, if it lies in front of the camera and inside the frame.
    pub fn project(&self, p: Vec3) -> Option<(usize, usize)> {
        let rel = sub(p, self.origin);
        let z = dot(rel, self.forward);
        if z <= 0.0 {
            return None;
        }
        let half = libm::tan(self.fov_y_deg.to_radians() * 0.5);
        let aspect = self.width as f64 / self.height as f64;
        let x = dot(rel, self.right) / z / (half * aspect);
        let y = dot(rel, self.up) / z / half;
        let col = (x + 1.0) * 0.5 * self.width as f64;
        let row = (1.0 - y) * 0.5 * self.height as f64;
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }
}
