use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::field::{trilinear_rows, FieldModel};
use super::SsrError;
use crate::geometry::{add, scale, Aabb, Camera, Vec3};
use crate::numerics::{Binder, Graph, Tensor, Var};
use crate::synthbench::RgbdImage;

/// Pixel rays clipped to the workspace, with their supervision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub dirs: Vec<Vec3>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
    /// Observed pixel colors.
    pub colors: Vec<[f64; 3]>,
    /// Oracle features at the same pixels, `len * D_f` values when present.
    pub features: Option<Vec<f64>>,
}

type Hit = (usize, usize, Vec3, f64, f64);

fn hits(camera: &Camera, image: &RgbdImage, bounds: &Aabb) -> Vec<Hit> {
    let mut out = Vec::new();
    for row in 0..image.height {
        for col in 0..image.width {
            let d = camera.ray_dir(row, col);
            if let Some(h) = bounds.intersect(camera.origin, d) {
                if h.t_exit > h.t_enter {
                    out.push((row, col, d, h.t_enter, h.t_exit));
                }
            }
        }
    }
    out
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Draws `count` pixels of `image` uniformly among those whose ray meets
    /// `bounds`. `features` is the `H x W x D_f` oracle map of the same view.
    pub fn sample<R: Rng + ?Sized>(
        camera: &Camera,
        image: &RgbdImage,
        features: Option<&Tensor>,
        count: usize,
        bounds: &Aabb,
        rng: &mut R,
    ) -> Result<Self, SsrError> {
        let hits = hits(camera, image, bounds);
        if hits.is_empty() || count == 0 {
            return Err(SsrError::NoRays);
        }
        let fdim = features.map(|f| f.last_dim());
        let mut batch = Self {
            features: fdim.map(|_| Vec::new()),
            ..Self::default()
        };
        for _ in 0..count {
            let (row, col, d, t0, t1) = hits[rng.gen_range(0..hits.len())];
            batch.origins.push(camera.origin);
            batch.dirs.push(d);
            batch.near.push(t0);
            batch.far.push(t1);
            batch.colors.push(image.rgb(row, col));
            if let (Some(f), Some(k), Some(out)) = (features, fdim, batch.features.as_mut()) {
                let i = (row * image.width + col) * k;
                out.extend_from_slice(&f.data()[i..i + k]);
            }
        }
        Ok(batch)
    }

    /// One ray per pixel whose ray meets `bounds`, in raster order, with the
    /// `(row, col)` of each.
    pub fn every_pixel(camera: &Camera, image: &RgbdImage, bounds: &Aabb) -> (Self, Vec<(usize, usize)>) {
        let mut batch = Self::default();
        let mut pixels = Vec::new();
        for (row, col, d, t0, t1) in hits(camera, image, bounds) {
            batch.origins.push(camera.origin);
            batch.dirs.push(d);
            batch.near.push(t0);
            batch.far.push(t1);
            batch.colors.push(image.rgb(row, col));
            pixels.push((row, col));
        }
        (batch, pixels)
    }

    pub fn extend(&mut self, other: &RayBatch) {
        self.origins.extend_from_slice(&other.origins);
        self.dirs.extend_from_slice(&other.dirs);
        self.near.extend_from_slice(&other.near);
        self.far.extend_from_slice(&other.far);
        self.colors.extend_from_slice(&other.colors);
        match (&mut self.features, &other.features) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            _ => self.features = None,
        }
    }

    pub fn color_tensor(&self) -> Tensor {
        let data = self.colors.iter().flatten().copied().collect();
        Tensor::new(vec![self.len(), 3], data).expect("colors are finite")
    }

    pub fn feature_tensor(&self) -> Option<Tensor> {
        let f = self.features.as_ref()?;
        let k = f.len().checked_div(self.len())?;
        Tensor::new(vec![self.len(), k], f.clone()).ok()
    }
}

/// Sample depths along each ray, row-major `rays x samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Depths {
    pub samples: usize,
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Depths {
    /// Stratified depths in `[near, far)`. Without `rng` each sample sits at
    /// the midpoint of its stratum.
    pub fn stratified<R: Rng + ?Sized>(
        rays: &RayBatch,
        samples: usize,
        mut rng: Option<&mut R>,
    ) -> Result<Self, SsrError> {
        if samples < 2 {
            return Err(SsrError::TooFewSamples(samples));
        }
        let mut t = Vec::with_capacity(rays.len() * samples);
        let mut delta = Vec::with_capacity(rays.len() * samples);
        for r in 0..rays.len() {
            let (n, f) = (rays.near[r], rays.far[r]);
            let step = (f - n) / samples as f64;
            let start = t.len();
            for i in 0..samples {
                let u = match rng.as_deref_mut() {
                    Some(rng) => rng.gen::<f64>(),
                    None => 0.5,
                };
                t.push(n + (i as f64 + u) * step);
            }
            for i in 0..samples {
                let next = if i + 1 < samples { t[start + i + 1] } else { f };
                delta.push((next - t[start + i]).max(0.0));
            }
        }
        Ok(Self { samples, t, delta })
    }

    pub fn points(&self, rays: &RayBatch) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.t.len());
        for r in 0..rays.len() {
            for i in 0..self.samples {
                let t = self.t[r * self.samples + i];
                out.push(add(rays.origins[r], scale(rays.dirs[r], t)));
            }
        }
        out
    }
}

/// Quadrature weights and transmittance from `sigma * delta` (`R x S`):
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`, `w_i = T_i (1 - exp(-sigma_i delta_i))`.
pub fn render_weights(g: &mut Graph, sigma_delta: Var) -> Result<(Var, Var), SsrError> {
    let acc = g.exclusive_cumsum(sigma_delta)?;
    let neg = g.scale(acc, -1.0)?;
    let trans = g.exp(neg)?;
    let neg_sd = g.scale(sigma_delta, -1.0)?;
    let keep = g.exp(neg_sd)?;
    let one_minus = g.scale(keep, -1.0)?;
    let alpha = g.add_scalar(one_minus, 1.0)?;
    let w = g.mul(trans, alpha)?;
    Ok((w, trans))
}

/// Weights and transmittance of one ray, evaluated through the graph ops.
pub fn quadrature(sigma: &[f64], delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SsrError> {
    let n = sigma.len();
    let sd: Vec<f64> = sigma.iter().zip(delta).map(|(s, d)| s * d).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, n], sd)?);
    let (w, t) = render_weights(&mut g, x)?;
    Ok((g.value(w).data().to_vec(), g.value(t).data().to_vec()))
}

#[derive(Clone, Copy, Debug)]
pub struct Rendered {
    /// `R x 3`.
    pub color: Var,
    /// `R x D_f`.
    pub semantic: Var,
    /// `R x S`, shared by both renders.
    pub weights: Var,
    /// Per-sample field colors, `R x S x 3`.
    pub point_color: Var,
    /// Per-sample field features, `R x S x D_f`.
    pub point_semantic: Var,
}

/// Renders color and semantic features along `rays`. `voxel_features` is the
/// `G^3 x D_v` grid; with `stop_grad` no gradient reaches it.
#[allow(clippy::too_many_arguments)]
pub fn render(
    g: &mut Graph,
    binder: &mut Binder,
    model: &FieldModel,
    voxel_features: Var,
    grid: usize,
    bounds: &Aabb,
    rays: &RayBatch,
    depths: &Depths,
    stop_grad: bool,
) -> Result<Rendered, SsrError> {
    if rays.is_empty() {
        return Err(SsrError::NoRays);
    }
    let (r, s) = (rays.len(), depths.samples);
    let n = r * s;
    let pts = depths.points(rays);
    let features = if stop_grad {
        g.detach(voxel_features)?
    } else {
        voxel_features
    };
    let vs = g.gather_weighted(features, Arc::new(trilinear_rows(&pts, grid, bounds)))?;
    let pts_data = pts.iter().flatten().copied().collect();
    let mut dir_data = Vec::with_capacity(n * 3);
    for d in &rays.dirs {
        for _ in 0..s {
            dir_data.extend_from_slice(d);
        }
    }
    let points = g.constant(Tensor::new(vec![n, 3], pts_data)?);
    let dirs = g.constant(Tensor::new(vec![n, 3], dir_data)?);
    let out = model.eval(g, binder, points, dirs, vs)?;
    let delta = g.constant(Tensor::new(vec![n, 1], depths.delta.clone())?);
    let sd = g.mul(out.sigma, delta)?;
    let sd = g.reshape(sd, &[r, s])?;
    let (weights, _) = render_weights(g, sd)?;
    let colors = g.reshape(out.color, &[r, s, 3])?;
    let k = model.config.feature_dim;
    let sem = g.reshape(out.semantic, &[r, s, k])?;
    Ok(Rendered {
        color: g.integrate(weights, colors)?,
        semantic: g.integrate(weights, sem)?,
        weights,
        point_color: colors,
        point_semantic: sem,
    })
}

fn row_sq_mean(g: &mut Graph, diff: Var, rows: usize) -> Result<Var, SsrError> {
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    Ok(g.scale(total, 1.0 / rows as f64)?)
}

/// `mean_r |C_r - Y_r|^2 + beta * mean_r m_r |C_r - C^_r|^2`, where `m_r`
/// marks rays of replayed samples and `C^` is the teacher rendering.
pub fn loss_color(
    g: &mut Graph,
    color: Var,
    observed: &Tensor,
    teacher: Option<&Tensor>,
    mask: &[bool],
    beta: f64,
) -> Result<Var, SsrError> {
    let rows = observed.shape()[0];
    if mask.len() != rows {
        return Err(SsrError::MaskLength {
            mask: mask.len(),
            rays: rows,
        });
    }
    let y = g.constant(observed.clone());
    let diff = g.sub(color, y)?;
    let fit = row_sq_mean(g, diff, rows)?;
    if !mask.iter().any(|&m| m) {
        return Ok(fit);
    }
    let teacher = teacher.ok_or(SsrError::MissingTeacher)?;
    let t = g.constant(teacher.clone());
    let cols = observed.last_dim();
    let m = g.constant(Tensor::new(
        vec![rows, cols],
        mask.iter()
            .flat_map(|&m| core::iter::repeat(if m { 1.0 } else { 0.0 }).take(cols))
            .collect(),
    )?);
    let d = g.sub(color, t)?;
    let d = g.mul(d, m)?;
    let pseudo = row_sq_mean(g, d, rows)?;
    let pseudo = g.scale(pseudo, beta)?;
    Ok(g.add(fit, pseudo)?)
}

/// `mean_r |M_r - F^_r|^2`.
pub fn loss_semantic(g: &mut Graph, semantic: Var, target: &Tensor) -> Result<Var, SsrError> {
    let t = g.constant(target.clone());
    let diff = g.sub(semantic, t)?;
    row_sq_mean(g, diff, target.shape()[0])
}

pub fn loss_ssr(g: &mut Graph, color: Var, semantic: Var, lambda1: f64) -> Result<Var, SsrError> {
    if lambda1 < 0.0 {
        return Err(SsrError::NegativeWeight(lambda1));
    }
    let s = g.scale(semantic, lambda1)?;
    Ok(g.add(color, s)?)
}
