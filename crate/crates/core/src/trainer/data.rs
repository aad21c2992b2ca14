use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::geometry::{Aabb, Camera};
use crate::perceiver::{voxelize, ActionCodec, ActionTarget, PolicyInput, VoxelInput};
use crate::synthbench::{
    extract_keyframes, render_observation, Episode, RgbdImage, SemanticOracle, Split, Suite,
    TextEncoder, TextEncoding,
};

use super::TrainError;

/// Everything training and evaluation need from one episode, computed once.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub skill: usize,
    pub split: Split,
    pub index: usize,
    pub key: u64,
    pub instruction: Vec<String>,
    pub text: TextEncoding,
    pub voxels: Arc<VoxelInput>,
    /// `(camera index, camera, rendered view)` for every auxiliary camera.
    pub aux: Vec<(usize, Camera, Arc<RgbdImage>)>,
    /// `(state bits, next-keyframe target)` per step.
    pub keyframes: Vec<([usize; 2], ActionTarget)>,
}

impl EpisodeData {
    pub fn input(&self, keyframe: usize) -> Result<PolicyInput, TrainError> {
        Ok(PolicyInput::new(
            self.voxels.clone(),
            &self.text,
            self.keyframes[keyframe].0,
        )?)
    }
}

/// One keyframe: skill, episode position within that skill's list, step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRef {
    pub skill: usize,
    pub episode: usize,
    pub keyframe: usize,
}

#[derive(Debug)]
pub struct Dataset {
    pub suite: Suite,
    pub codec: ActionCodec,
    pub bounds: Aabb,
    pub oracle: SemanticOracle,
    /// Indexed by skill, then episode.
    pub train: Vec<Vec<EpisodeData>>,
    pub test: Vec<Vec<EpisodeData>>,
}

fn episode_data(
    ep: &Episode,
    codec: &ActionCodec,
    encoder: &TextEncoder,
    patch: usize,
    task: usize,
) -> Result<EpisodeData, TrainError> {
    let frames = extract_keyframes(ep, codec, task)?;
    let front = &ep.scene.cameras[0];
    let label = format!("skill {} episode {}", ep.skill_id, ep.index);
    let grid = voxelize(&frames[0].observation, front, &ep.scene.bounds, codec.grid, &label)?;
    let voxels = Arc::new(VoxelInput::new(&grid, patch)?);
    let mut aux = Vec::with_capacity(ep.scene.cameras.len() - 1);
    for (i, cam) in ep.scene.cameras.iter().enumerate().skip(1) {
        aux.push((i, *cam, Arc::new(render_observation(&ep.scene, i)?)));
    }
    Ok(EpisodeData {
        skill: ep.skill_id,
        split: ep.split,
        index: ep.index,
        key: ep.key(),
        instruction: ep.instruction.clone(),
        text: encoder.encode(&ep.instruction)?,
        voxels,
        aux,
        keyframes: frames.iter().map(|f| (f.state, f.target)).collect(),
    })
}

impl Dataset {
    pub fn build(suite: Suite, patch: usize, feature_dim: usize) -> Result<Self, TrainError> {
        let codec = suite.codec();
        let encoder = TextEncoder::frozen(suite.config.text_dim);
        let split_data = |split: Split| -> Result<Vec<Vec<EpisodeData>>, TrainError> {
            suite
                .episodes(split)
                .iter()
                .map(|eps| {
                    eps.iter()
                        .map(|ep| episode_data(ep, &codec, &encoder, patch, suite.task_of(ep.skill_id)))
                        .collect()
                })
                .collect()
        };
        let train = split_data(Split::Train)?;
        let test = split_data(Split::Test)?;
        Ok(Self {
            bounds: suite.config.bounds(),
            oracle: SemanticOracle::frozen(feature_dim, encoder),
            codec,
            suite,
            train,
            test,
        })
    }

    pub fn tasks(&self) -> Vec<Vec<usize>> {
        self.suite.tasks()
    }

    pub fn episode(&self, r: SampleRef) -> &EpisodeData {
        &self.train[r.skill][r.episode]
    }

    /// Every keyframe of the training episodes of `skills`.
    pub fn keyframes_of(&self, skills: &[usize]) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for &s in skills {
            for (e, ep) in self.train[s].iter().enumerate() {
                for k in 0..ep.keyframes.len() {
                    out.push(SampleRef {
                        skill: s,
                        episode: e,
                        keyframe: k,
                    });
                }
            }
        }
        out
    }
}
