use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use super::{SampleRef, TrainError};

/// Episodes kept per finished skill, as positions within that skill's list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub episodes: BTreeMap<usize, Vec<usize>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.values().all(Vec::is_empty)
    }

    pub fn contains_skill(&self, skill: usize) -> bool {
        self.episodes.contains_key(&skill)
    }
}

/// Stores up to `capacity` episodes, drawn without replacement, for each
/// finished skill not already in memory. `counts[i]` is the number of
/// episodes of `skills[i]`.
pub fn update_memory<R: Rng + ?Sized>(
    memory: &mut ReplayBuffer,
    skills: &[usize],
    counts: &[usize],
    rng: &mut R,
) -> Result<(), TrainError> {
    if memory.capacity == 0 {
        return Err(TrainError::Capacity);
    }
    for (&skill, &n) in skills.iter().zip(counts) {
        if memory.contains_skill(skill) {
            continue;
        }
        let mut picked = sample(rng, n, memory.capacity.min(n)).into_vec();
        picked.sort_unstable();
        memory.episodes.insert(skill, picked);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<SampleRef>,
    /// Marks slots drawn from memory.
    pub replay: Vec<bool>,
}

/// Draws `size` keyframes. Each slot comes from `memory` with probability
/// `mix`, defaulting to the memory share of the union of both pools.
pub fn sample_batch<R: Rng + ?Sized>(
    current: &[SampleRef],
    memory: &[SampleRef],
    size: usize,
    mix: Option<f64>,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    if current.is_empty() && memory.is_empty() {
        return Err(TrainError::EmptyPools);
    }
    let p = match (current.is_empty(), memory.is_empty()) {
        (true, _) => 1.0,
        (_, true) => 0.0,
        _ => mix.unwrap_or(memory.len() as f64 / (memory.len() + current.len()) as f64),
    };
    let mut batch = Batch {
        samples: Vec::with_capacity(size),
        replay: Vec::with_capacity(size),
    };
    for _ in 0..size {
        let from_memory = p >= 1.0 || (p > 0.0 && rng.gen::<f64>() < p);
        let pool = if from_memory { memory } else { current };
        batch.samples.push(pool[rng.gen_range(0..pool.len())]);
        batch.replay.push(from_memory);
    }
    Ok(batch)
}
