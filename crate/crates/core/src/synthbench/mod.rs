//! Procedural skill stream: scenes, scripted demonstrations, keyframes,
//! instructions, and the frozen text encoder and semantic oracle.

mod oracle;
mod scene;
mod suite;
pub mod text;
pub mod vocab;

pub use oracle::{alpha, SemanticOracle, SemanticTarget, NOISE_STEPS};
pub use scene::{
    back_project, default_cameras, render_observation, RgbdImage, Scene, SceneObject, FAR_PLANE,
};
pub use suite::{
    extract_keyframes, generate_suite, separability, Anchor, Episode, KeyframeSample, ScriptStep,
    SkillSpec, Split, Suite, SuiteConfig, SEPARABILITY_MARGIN,
};
pub use text::{TextEncoder, TextEncoding};

use alloc::string::String;

use crate::perceiver::PerceiverError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid suite config: {0}")]
    Config(String),
    #[error("no vocabulary met the separability margin after {attempts} attempts")]
    Separability { attempts: usize },
    #[error("camera index {0} out of range")]
    CameraIndex(usize),
    #[error("noise step {0} outside the schedule")]
    ScheduleStep(usize),
    #[error("instruction has no tokens")]
    EmptyInstruction,
    #[error(transparent)]
    Action(#[from] PerceiverError),
}

/// SplitMix64 fold over `parts`; used to derive independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}
