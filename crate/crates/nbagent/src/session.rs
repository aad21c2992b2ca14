//! Training and evaluation sessions over files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nbagent_core::evalkit::RunReport;
use nbagent_core::trainer::{Dataset, RunConfig, RunState, TrainError, Trainer};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactError};
use crate::checkpoint::{self, CheckpointError};
use crate::manifest::{ManifestError, SuiteManifest};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("suite manifest (seed {manifest}) is not the suite the checkpoint was trained on (seed {checkpoint})")]
    SuiteMismatch { manifest: u64, checkpoint: u64 },
}

/// Metadata stored alongside the tensors of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub method: String,
    pub config: RunConfig,
    pub task: usize,
    pub iteration: usize,
    pub state_version: u32,
}

pub fn save_state(path: &Path, trainer: &Trainer, st: &RunState) -> Result<(), SessionError> {
    let meta = CheckpointMeta {
        method: trainer.method_name().to_string(),
        config: trainer.config.clone(),
        task: st.task,
        iteration: st.iteration,
        state_version: nbagent_core::trainer::CHECKPOINT_VERSION,
    };
    let entries = st.to_entries(trainer.config.hash());
    checkpoint::save(path, &serde_json::to_string(&meta)?, &entries)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_state`], returning its metadata and
/// the raw entries.
pub fn read_state(path: &Path) -> Result<(CheckpointMeta, checkpoint::Container), SessionError> {
    let c = checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&c.meta)?;
    if meta.state_version != nbagent_core::trainer::CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: meta.state_version,
            expected: nbagent_core::trainer::CHECKPOINT_VERSION,
        }
        .into());
    }
    Ok((meta, c))
}

pub fn load_state(path: &Path, trainer: &Trainer) -> Result<RunState, SessionError> {
    let (_, c) = read_state(path)?;
    Ok(RunState::from_entries(trainer, &c.entries)?)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stops after this many optimization steps in this session and writes
    /// `checkpoint-interrupted.bin`.
    pub interrupt_after: Option<usize>,
    /// Writes PPM images of one observed and one field-rendered view per task.
    pub dump_views: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainOutcome {
    Finished(RunReport),
    Interrupted { checkpoint: PathBuf },
}

pub fn checkpoint_name(task: usize) -> String {
    format!("checkpoint-task{}.bin", task + 1)
}

pub const INTERRUPTED_NAME: &str = "checkpoint-interrupted.bin";

pub fn train(config: RunConfig, opts: &TrainOptions) -> Result<TrainOutcome, SessionError> {
    let trainer = Trainer::from_config(config)?;
    train_with(&trainer, opts)
}

pub fn train_with(trainer: &Trainer, opts: &TrainOptions) -> Result<TrainOutcome, SessionError> {
    fs::create_dir_all(&opts.out_dir)?;
    let mut st = match &opts.resume {
        Some(p) => load_state(p, trainer)?,
        None => trainer.init_state()?,
    };
    let start = st.log.len();
    while st.task < trainer.tasks().len() {
        let budget = opts.interrupt_after.map(|n| n.saturating_sub(st.log.len() - start));
        match trainer.run_task(&mut st, budget)? {
            Some(summary) => {
                save_state(&opts.out_dir.join(checkpoint_name(summary.task)), trainer, &st)?;
                if opts.dump_views {
                    dump_views(trainer, &st, summary.task, &opts.out_dir.join("views"))?;
                }
            }
            None => {
                let path = opts.out_dir.join(INTERRUPTED_NAME);
                save_state(&path, trainer, &st)?;
                write_log(&st, &opts.out_dir)?;
                return Ok(TrainOutcome::Interrupted { checkpoint: path });
            }
        }
    }
    write_log(&st, &opts.out_dir)?;
    let report = trainer.report(&st)?;
    artifacts::write_report(&opts.out_dir.join("report.json"), &report)?;
    Ok(TrainOutcome::Finished(report))
}

fn write_log(st: &RunState, dir: &Path) -> Result<(), SessionError> {
    let f = fs::File::create(dir.join("train_log.csv"))?;
    artifacts::write_train_log(std::io::BufWriter::new(f), &st.log)?;
    Ok(())
}

fn dump_views(trainer: &Trainer, st: &RunState, task: usize, dir: &Path) -> Result<(), SessionError> {
    fs::create_dir_all(dir)?;
    let skill = trainer.tasks()[task][0];
    let ep = &trainer.data.train[skill][0];
    let (_, _, image) = &ep.aux[0];
    let observed: Vec<[f64; 3]> = (0..image.height)
        .flat_map(|r| (0..image.width).map(move |c| (r, c)))
        .map(|(r, c)| image.rgb(r, c))
        .collect();
    let rendered = trainer.render_view(st, ep, 0)?;
    for (name, px) in [("observed", observed), ("rendered", rendered)] {
        let f = fs::File::create(dir.join(format!("task{}-skill{skill}-{name}.ppm", task + 1)))?;
        artifacts::write_ppm(std::io::BufWriter::new(f), image.width, image.height, &px)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillScore {
    pub skill: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub suite_fingerprint: String,
    /// Last task whose skills are scored.
    pub through_task: usize,
    pub scores: Vec<SkillScore>,
    pub mean: f64,
}

/// Scores a checkpoint on the test episodes of a manifest suite, covering
/// every skill introduced up to the checkpoint's last finished task.
pub fn evaluate_checkpoint(checkpoint: &Path, manifest: &SuiteManifest) -> Result<EvalSummary, SessionError> {
    let (meta, c) = read_state(checkpoint)?;
    if manifest.seed != meta.config.seed || manifest.config != meta.config.suite {
        return Err(SessionError::SuiteMismatch {
            manifest: manifest.seed,
            checkpoint: meta.config.seed,
        });
    }
    let suite = manifest.materialize()?;
    let data = Dataset::build(suite, meta.config.perceiver.patch, meta.config.field.feature_dim)?;
    let trainer = Trainer::new(meta.config.clone(), Arc::new(data))?;
    let st = RunState::from_entries(&trainer, &c.entries)?;
    let through = st.task.saturating_sub(1).min(trainer.tasks().len() - 1);
    let row = trainer.evaluate(&st, through)?;
    let scores: Vec<SkillScore> = row
        .iter()
        .enumerate()
        .filter_map(|(skill, s)| s.map(|score| SkillScore { skill, score }))
        .collect();
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len().max(1) as f64;
    Ok(EvalSummary {
        method: meta.method,
        suite_fingerprint: manifest.fingerprint.clone(),
        through_task: through,
        scores,
        mean,
    })
}
