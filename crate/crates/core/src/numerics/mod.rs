//! Dense `f64` tensors, a define-by-run reverse-mode graph, optimizers and a
//! central-difference gradient checker.

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod tensor;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Axis, Graph, Var, WeightedRows};
pub use optim::{OptimizerState, UpdateRule};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid shape {shape:?}: every extent must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match payload length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {context} at flat index {index}")]
    NonFinite { context: &'static str, index: usize },
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("leaf '{0}' registered twice")]
    DuplicateLeaf(String),
    #[error("no leaf named '{0}'")]
    UnknownLeaf(String),
    #[error("rows have different lengths")]
    Ragged,
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("gradient for '{name}' has shape {got:?}, parameter has {expected:?}")]
    GradientShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    BadEpsilon(f64),
}

/// Named parameter tensors in deterministic (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Registers `name` as a trainable leaf of `graph`.
    pub fn leaf(&self, graph: &mut Graph, name: &str) -> Result<Var, NumericsError> {
        match graph.leaf_var(name) {
            Some(v) => Ok(v),
            None => {
                let t = self
                    .entries
                    .get(name)
                    .ok_or_else(|| NumericsError::UnknownLeaf(name.into()))?;
                graph.param(name, t.clone())
            }
        }
    }

    /// Registers `name` as a frozen constant (no gradient).
    pub fn frozen(&self, graph: &mut Graph, name: &str) -> Result<Var, NumericsError> {
        let t = self
            .entries
            .get(name)
            .ok_or_else(|| NumericsError::UnknownLeaf(name.into()))?;
        Ok(graph.constant(t.clone()))
    }

    /// FNV-1a over names, shapes and payload bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, t) in &self.entries {
            h.write(name.as_bytes());
            for &d in t.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Registers parameters from one or more stores into a graph, once each.
///
/// Trainable binders create named leaves (so gradients come back keyed by
/// parameter name); frozen binders create unnamed constants, which lets a
/// teacher copy with identical names share a graph with its student.
pub struct Binder<'a> {
    stores: Vec<&'a ParamStore>,
    trainable: bool,
    cache: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn trainable(stores: Vec<&'a ParamStore>) -> Self {
        Self {
            stores,
            trainable: true,
            cache: BTreeMap::new(),
        }
    }

    pub fn frozen(stores: Vec<&'a ParamStore>) -> Self {
        Self {
            stores,
            trainable: false,
            cache: BTreeMap::new(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn contains(&self, name: &str) -> bool {
        self.stores.iter().any(|s| s.contains(name))
    }

    pub fn var(&mut self, graph: &mut Graph, name: &str) -> Result<Var, NumericsError> {
        if let Some(&v) = self.cache.get(name) {
            return Ok(v);
        }
        let t = self
            .stores
            .iter()
            .find_map(|s| s.get(name))
            .ok_or_else(|| NumericsError::UnknownLeaf(name.into()))?;
        let v = if self.trainable {
            graph.param(name, t.clone())?
        } else {
            graph.constant(t.clone())
        };
        self.cache.insert(name.into(), v);
        Ok(v)
    }
}
