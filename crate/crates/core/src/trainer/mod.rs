//! The never-ending training loop: task sequencing, mixed current/replay
//! batches, loss assembly, optimization and memory maintenance.

mod data;
mod replay;
mod run;

pub use data::{Dataset, EpisodeData, SampleRef};
pub use replay::{sample_batch, update_memory, Batch, ReplayBuffer};
pub use run::{LogRow, RunState, StatePolicy, TaskSummary, Trainer, CHECKPOINT_VERSION};

use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::distill::DistillError;
use crate::evalkit::EvalError;
use crate::numerics::{Fnv64, NumericsError};
use crate::perceiver::{PerceiverConfig, PerceiverError};
use crate::sep::SepError;
use crate::ssr::{FieldConfig, SsrError};
use crate::synthbench::{SuiteConfig, SynthError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("task {requested} requested but the run is at task {current}")]
    TaskOrder { requested: usize, current: usize },
    #[error("all tasks are finished")]
    Finished,
    #[error("both sample pools are empty")]
    EmptyPools,
    #[error("memory capacity must be at least 1")]
    Capacity,
    #[error("checkpoint entry '{0}' is missing or malformed")]
    Entry(String),
    #[error("checkpoint was written for config hash {found:016x}, expected {expected:016x}")]
    ConfigMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Perceiver(#[from] PerceiverError),
    #[error(transparent)]
    Ssr(#[from] SsrError),
    #[error(transparent)]
    Sep(#[from] SepError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Preset component switches mirroring the compared methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ours,
    Er,
    Ft,
    NoSep,
    NoSrd,
    NoSsr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ours,
        Method::Er,
        Method::Ft,
        Method::NoSep,
        Method::NoSrd,
        Method::NoSsr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Er => "er",
            Method::Ft => "ft",
            Method::NoSep => "no-sep",
            Method::NoSrd => "no-srd",
            Method::NoSsr => "no-ssr",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn switches(self) -> Switches {
        let ours = Switches::default();
        match self {
            Method::Ours => ours,
            Method::Er => Switches {
                no_sep: true,
                no_srd: true,
                no_pseudo_gt: true,
                ..ours
            },
            Method::Ft => Switches {
                no_sep: true,
                no_srd: true,
                no_pseudo_gt: true,
                no_replay: true,
                ..ours
            },
            Method::NoSep => Switches {
                no_sep: true,
                ..ours
            },
            Method::NoSrd => Switches {
                no_srd: true,
                ..ours
            },
            Method::NoSsr => Switches {
                no_ssr: true,
                ..ours
            },
        }
    }
}

/// Component switches; all off is the full method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Switches {
    pub no_sep: bool,
    pub no_srd: bool,
    pub no_ssr: bool,
    pub no_replay: bool,
    pub no_pseudo_gt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub suite: SuiteConfig,
    pub perceiver: PerceiverConfig,
    pub field: FieldConfig,
    pub base_iterations: usize,
    pub incremental_iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub delta: f64,
    pub beta: f64,
    /// Stored episodes per finished skill.
    pub memory: usize,
    pub bank_capacity: usize,
    /// Probability of drawing a slot from memory; uniform over the union of
    /// pools when unset.
    pub mix_ratio: Option<f64>,
    /// Keeps rendering gradients out of the voxel encoder.
    pub stop_grad: bool,
    pub switches: Switches,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suite: SuiteConfig::default(),
            perceiver: PerceiverConfig::default(),
            field: FieldConfig::default(),
            base_iterations: 2000,
            incremental_iterations: 500,
            batch: 2,
            lr: 5e-4,
            lambda1: 0.1,
            lambda2: crate::distill::DEFAULT_SRD_WEIGHT,
            tau: crate::distill::DEFAULT_TEMPERATURE,
            delta: crate::sep::DEFAULT_THRESHOLD,
            beta: 1.0,
            memory: 4,
            bank_capacity: crate::sep::DEFAULT_CAPACITY,
            mix_ratio: None,
            stop_grad: false,
            switches: Switches::default(),
        }
    }
}

impl RunConfig {
    pub fn with_method(mut self, m: Method) -> Self {
        self.switches = m.switches();
        self
    }

    pub fn iterations(&self, task: usize) -> usize {
        if task == 0 {
            self.base_iterations
        } else {
            self.incremental_iterations
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.suite.validate()?;
        self.perceiver.validate()?;
        let bad = |s: &str| Err(TrainError::Config(s.to_string()));
        if self.perceiver.grid != self.suite.grid {
            return bad("perceiver grid must equal suite grid");
        }
        if self.perceiver.text_dim != self.suite.text_dim {
            return bad("perceiver text_dim must equal suite text_dim");
        }
        if self.perceiver.voxel_dim != self.field.voxel_dim {
            return bad("field voxel_dim must equal perceiver voxel_dim");
        }
        if self.field.samples < 2 || self.field.rays == 0 || self.field.hidden == 0 {
            return bad("field needs at least 2 samples, 1 ray and a hidden layer");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.memory == 0 {
            return bad("memory must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be nonnegative")));
            }
        }
        if let Some(r) = self.mix_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad("mix_ratio must lie in [0, 1]");
            }
        }
        if self.bank_capacity < self.suite.skills {
            return bad("bank capacity must cover every skill");
        }
        Ok(())
    }

    /// Digest of every field, used to tie checkpoints and reports to a config.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write(format!("{self:?}").as_bytes());
        h.finish()
    }
}
