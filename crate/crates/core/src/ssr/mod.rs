//! Voxel-conditioned neural field with volume rendering of color and
//! semantic features, and the rendering losses.

mod field;
mod render;

pub use field::{trilinear_rows, FieldConfig, FieldModel, FieldOutput};
pub use render::{
    loss_color, loss_semantic, loss_ssr, quadrature, render, render_weights, Depths, RayBatch,
    Rendered,
};

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SsrError {
    #[error("at least two samples per ray are required, got {0}")]
    TooFewSamples(usize),
    #[error("replay mask is set but no teacher rendering was supplied")]
    MissingTeacher,
    #[error("ray batch is empty or no pixel ray meets the workspace")]
    NoRays,
    #[error("mask has {mask} entries for {rays} rays")]
    MaskLength { mask: usize, rays: usize },
    #[error("semantic weight must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
