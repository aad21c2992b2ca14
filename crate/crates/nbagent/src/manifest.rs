//! Shareable JSON description of a generated suite.
//!
//! A manifest records the generator inputs together with what they produced.
//! Loading regenerates the suite and refuses it if anything differs.

use std::path::Path;

use nbagent_core::synthbench::{generate_suite, vocab::NOUNS, Split, Suite, SuiteConfig, SynthError};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("manifest format {found}, expected {expected}")]
    Format { found: u32, expected: u32 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("regenerated suite differs from the manifest: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub skill_id: usize,
    pub task: usize,
    pub verb: String,
    pub primary: String,
    pub secondary: String,
    pub variations: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub skill_id: usize,
    pub split: Split,
    pub index: usize,
    pub variation: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub format: u32,
    pub seed: u64,
    pub fingerprint: String,
    pub config: SuiteConfig,
    pub tasks: Vec<Vec<usize>>,
    pub skills: Vec<SkillEntry>,
    pub episodes: Vec<EpisodeEntry>,
}

impl SuiteManifest {
    pub fn describe(suite: &Suite) -> Self {
        let tasks = suite.tasks();
        let skills = suite
            .skills
            .iter()
            .map(|s| SkillEntry {
                skill_id: s.skill_id,
                task: suite.task_of(s.skill_id),
                verb: s.verb.clone(),
                primary: NOUNS[s.primary].to_string(),
                secondary: NOUNS[s.secondary].to_string(),
                variations: (0..s.variations).map(|v| s.instruction(v)).collect(),
            })
            .collect();
        let episodes = suite
            .train
            .iter()
            .chain(&suite.test)
            .flatten()
            .map(|e| EpisodeEntry {
                skill_id: e.skill_id,
                split: e.split,
                index: e.index,
                variation: e.variation,
                seed: e.seed,
            })
            .collect();
        Self {
            format: MANIFEST_FORMAT,
            seed: suite.seed,
            fingerprint: format!("{:016x}", suite.fingerprint()),
            config: suite.config.clone(),
            tasks,
            skills,
            episodes,
        }
    }

    /// Regenerates the suite and checks it against every recorded field.
    pub fn materialize(&self) -> Result<Suite, ManifestError> {
        if self.format != MANIFEST_FORMAT {
            return Err(ManifestError::Format {
                found: self.format,
                expected: MANIFEST_FORMAT,
            });
        }
        let suite = generate_suite(&self.config, self.seed)?;
        let again = Self::describe(&suite);
        if again.fingerprint != self.fingerprint {
            return Err(ManifestError::Mismatch(format!(
                "fingerprint {} vs recorded {}",
                again.fingerprint, self.fingerprint
            )));
        }
        if again.skills != self.skills {
            return Err(ManifestError::Mismatch("skill list".into()));
        }
        if again.episodes != self.episodes {
            return Err(ManifestError::Mismatch("episode list".into()));
        }
        if again.tasks != self.tasks {
            return Err(ManifestError::Mismatch("task split".into()));
        }
        Ok(suite)
    }

    pub fn to_json(&self) -> Result<String, ManifestError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
