//! Adaptive language semantic bank: novelty detection, EMA compensation and
//! skill-code assignment.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Tensor};

pub const DEFAULT_CAPACITY: usize = 16;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SepError {
    #[error("bank is full ({capacity} rows) and no row matches")]
    Capacity { capacity: usize },
    #[error("embedding has dimension {got}, bank rows have {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding must be finite and nonzero")]
    DegenerateEmbedding,
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("bank is empty")]
    Empty,
    #[error("bank rows beyond the occupancy must be zero")]
    Corrupt,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoutingDecision {
    pub skill: usize,
    pub is_new: bool,
    /// Largest cosine against occupied rows at decision time, `-inf` for an
    /// empty bank.
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticBank {
    dim: usize,
    capacity: usize,
    threshold: f64,
    occupancy: usize,
    rows: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

impl SemanticBank {
    pub fn new(dim: usize, capacity: usize, threshold: f64) -> Result<Self, SepError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(SepError::Threshold(threshold));
        }
        Ok(Self {
            dim,
            capacity,
            threshold,
            occupancy: 0,
            rows: vec![0.0; dim * capacity],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.rows[h * self.dim..(h + 1) * self.dim]
    }

    fn best(&self, l: &[f64]) -> Result<(Option<usize>, f64), SepError> {
        if l.len() != self.dim {
            return Err(SepError::Dimension {
                expected: self.dim,
                got: l.len(),
            });
        }
        let ln = norm(l);
        if !(ln.is_finite() && ln > 0.0) {
            return Err(SepError::DegenerateEmbedding);
        }
        let mut best = (None, f64::NEG_INFINITY);
        for h in 0..self.occupancy {
            let r = self.row(h);
            let rn = norm(r);
            if rn == 0.0 {
                continue;
            }
            let c = r.iter().zip(l).map(|(a, b)| a * b).sum::<f64>() / (rn * ln);
            if c > best.1 {
                best = (Some(h), c);
            }
        }
        Ok(best)
    }

    /// Read-only decision: the matched row, or `is_new` with `skill` set to
    /// the next free row.
    pub fn lookup(&self, l: &[f64]) -> Result<RoutingDecision, SepError> {
        let (h, c) = self.best(l)?;
        Ok(match h {
            Some(h) if c > self.threshold => RoutingDecision {
                skill: h,
                is_new: false,
                similarity: c,
            },
            _ => RoutingDecision {
                skill: self.occupancy,
                is_new: true,
                similarity: c,
            },
        })
    }

    /// Closest occupied row regardless of the threshold.
    pub fn nearest(&self, l: &[f64]) -> Result<(usize, f64), SepError> {
        match self.best(l)? {
            (Some(h), c) => Ok((h, c)),
            (None, _) => Err(SepError::Empty),
        }
    }

    /// Routes `l` and applies the EMA update, or claims a new row.
    pub fn route(&mut self, l: &[f64]) -> Result<RoutingDecision, SepError> {
        let d = self.lookup(l)?;
        let (h, coef) = if d.is_new {
            if self.occupancy == self.capacity {
                return Err(SepError::Capacity {
                    capacity: self.capacity,
                });
            }
            self.occupancy += 1;
            (d.skill, 1.0)
        } else {
            (d.skill, d.similarity.min(1.0))
        };
        let dim = self.dim;
        for (b, x) in self.rows[h * dim..(h + 1) * dim].iter_mut().zip(l) {
            *b += coef * (x - *b);
        }
        Ok(d)
    }

    /// Routes each embedding in order; updates apply sequentially.
    pub fn route_batch<L: AsRef<[f64]>>(&mut self, ls: &[L]) -> Result<Vec<RoutingDecision>, SepError> {
        ls.iter().map(|l| self.route(l.as_ref())).collect()
    }

    /// `occupancy x occupancy` cosines between stored rows.
    pub fn pairwise_cosines(&self) -> Vec<Vec<f64>> {
        (0..self.occupancy)
            .map(|i| {
                (0..self.occupancy)
                    .map(|j| {
                        let (a, b) = (self.row(i), self.row(j));
                        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.capacity, self.dim], self.rows.clone()).expect("bank rows are finite")
    }

    /// Rebuilds a bank from its row matrix; occupancy is the count of
    /// leading nonzero rows.
    pub fn from_tensor(t: &Tensor, threshold: f64) -> Result<Self, SepError> {
        let (capacity, dim) = t.rows_cols();
        let mut bank = Self::new(dim, capacity, threshold)?;
        bank.rows = t.data().to_vec();
        bank.occupancy = (0..capacity)
            .take_while(|&h| bank.row(h).iter().any(|&x| x != 0.0))
            .count();
        if (bank.occupancy..capacity).any(|h| bank.row(h).iter().any(|&x| x != 0.0)) {
            return Err(SepError::Corrupt);
        }
        Ok(bank)
    }
}
