use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SsrError;
use crate::geometry::{Aabb, Vec3};
use crate::numerics::{Axis, Binder, Graph, ParamStore, Tensor, Var, WeightedRows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub hidden: usize,
    /// Width of the rendered semantic feature.
    pub feature_dim: usize,
    /// Width of the voxel feature sampled at each point.
    pub voxel_dim: usize,
    pub samples: usize,
    /// Rays per keyframe sample.
    pub rays: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature_dim: 16,
            voxel_dim: 16,
            samples: 24,
            rays: 16,
        }
    }
}

/// Field outputs at `n` points.
#[derive(Clone, Copy, Debug)]
pub struct FieldOutput {
    /// `n x 1`, nonnegative.
    pub sigma: Var,
    /// `n x 3`, in `[0, 1]`.
    pub color: Var,
    /// `n x D_f`.
    pub semantic: Var,
}

/// Coordinate network `(x, d, v_s) -> (sigma, c, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub config: FieldConfig,
}

/// Trilinear weights of the 8 cell centers around each point. Neighbors
/// outside the grid, and points outside `bounds`, contribute zero.
pub fn trilinear_rows(points: &[Vec3], grid: usize, bounds: &Aabb) -> WeightedRows {
    let mut index = Vec::with_capacity(points.len() * 8);
    let mut weight = Vec::with_capacity(points.len() * 8);
    for p in points {
        let inside = bounds.contains(*p);
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (p[a] - bounds.min[a]) / (bounds.max[a] - bounds.min[a]) * grid as f64 - 0.5;
            let f = libm::floor(u);
            base[a] = f as isize;
            frac[a] = u - f;
        }
        for corner in 0..8 {
            let mut w = 1.0;
            let mut cell = [0isize; 3];
            for a in 0..3 {
                let bit = (corner >> (2 - a)) & 1;
                cell[a] = base[a] + bit as isize;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let valid = inside && cell.iter().all(|&c| c >= 0 && (c as usize) < grid);
            if valid {
                let (x, y, z) = (cell[0] as usize, cell[1] as usize, cell[2] as usize);
                index.push((x * grid + y) * grid + z);
                weight.push(w);
            } else {
                index.push(0);
                weight.push(0.0);
            }
        }
    }
    WeightedRows {
        out_rows: points.len(),
        per_row: 8,
        index,
        weight,
    }
}

impl FieldModel {
    pub fn new(config: FieldConfig) -> Self {
        Self { config }
    }

    fn input_dim(&self) -> usize {
        6 + self.config.voxel_dim
    }

    fn out_dim(&self) -> usize {
        4 + self.config.feature_dim
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>, f64)> {
        let h = self.config.hidden;
        let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
        vec![
            ("field.l1.w".into(), vec![self.input_dim(), h], libm::sqrt(2.0) * inv(self.input_dim())),
            ("field.l1.b".into(), vec![h], 0.0),
            ("field.l2.w".into(), vec![h, h], libm::sqrt(2.0) * inv(h)),
            ("field.l2.b".into(), vec![h], 0.0),
            ("field.out.w".into(), vec![h, self.out_dim()], inv(h)),
            ("field.out.b".into(), vec![self.out_dim()], 0.0),
        ]
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape, std) in self.shapes() {
            let t = if std == 0.0 {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, std, rng)
            };
            store.insert(name, t);
        }
        store
    }

    /// Evaluates the field at `points` (`n x 3`) seen along `dirs` (`n x 3`)
    /// with voxel features `vs` (`n x D_v`).
    pub fn eval(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        points: Var,
        dirs: Var,
        vs: Var,
    ) -> Result<FieldOutput, SsrError> {
        let x = g.concat(&[points, dirs, vs], Axis::Cols)?;
        let mut h = x;
        for layer in ["l1", "l2"] {
            let w = b.var(g, &alloc::format!("field.{layer}.w"))?;
            let bias = b.var(g, &alloc::format!("field.{layer}.b"))?;
            h = g.matmul(h, w)?;
            h = g.add(h, bias)?;
            h = g.relu(h)?;
        }
        let w = b.var(g, "field.out.w")?;
        let bias = b.var(g, "field.out.b")?;
        let out = g.matmul(h, w)?;
        let out = g.add(out, bias)?;
        let raw_sigma = g.slice_cols(out, 0, 1)?;
        let raw_color = g.slice_cols(out, 1, 4)?;
        let semantic = g.slice_cols(out, 4, self.out_dim())?;
        Ok(FieldOutput {
            sigma: g.softplus(raw_sigma)?,
            color: g.sigmoid(raw_color)?,
            semantic,
        })
    }
}
