use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{default_cameras, render_observation, RgbdImage, Scene, SceneObject};
use super::text::{cosine, TextEncoder};
use super::vocab::{class_color, ATTRIBUTES, NOUNS, VERBS};
use super::{mix_seed, SynthError};
use crate::geometry::{Aabb, Vec3};
use crate::perceiver::action::{ActionCodec, ActionTarget, Pose, ROTATION_BINS, ROTATION_RESOLUTION_DEG};

const TAG_VOCAB: u64 = 0x766f_6361;
const TAG_SCRIPT: u64 = 0x7363_7270;
const TAG_EPISODE: u64 = 0x6570_6973;
const MAX_VOCAB_ATTEMPTS: usize = 32;
/// Routing threshold the vocabulary must clear on both sides.
pub const SEPARABILITY_MARGIN: f64 = 0.8;
const HOME: Vec3 = [0.5, 0.5, 0.6];
/// Primary object side length per variation.
const PRIMARY_SIZES: [f64; 5] = [0.06, 0.07, 0.08, 0.065, 0.075];
const SECONDARY_SIZE: f64 = 0.07;
const LIFT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub skills: usize,
    /// Skills learned in the first task.
    pub base_skills: usize,
    /// Skills added by each later task.
    pub increment: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub variations: usize,
    pub script_len: usize,
    pub distractors: usize,
    pub grid: usize,
    pub image_size: usize,
    pub aux_cameras: usize,
    pub text_dim: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            skills: 6,
            base_skills: 4,
            increment: 1,
            train_episodes: 8,
            test_episodes: 8,
            variations: 3,
            script_len: 3,
            distractors: 2,
            grid: 20,
            image_size: 32,
            aux_cameras: 3,
            text_dim: 64,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::Config(String::from(msg)));
        if self.skills == 0 {
            return bad("suite needs at least one skill");
        }
        if self.train_episodes == 0 || self.test_episodes == 0 {
            return bad("train and test episode counts must be positive");
        }
        if self.base_skills == 0 || self.base_skills > self.skills {
            return bad("base_skills must be in 1..=skills");
        }
        if self.skills > self.base_skills && self.increment == 0 {
            return bad("increment must be positive when skills exceed base_skills");
        }
        if self.skills > VERBS.len() || 2 * self.skills > NOUNS.len() {
            return bad("not enough verbs or nouns for this many skills");
        }
        if self.variations == 0 || self.variations > ATTRIBUTES.len() {
            return bad("variations must be in 1..=5");
        }
        if !(2..=5).contains(&self.script_len) {
            return bad("script_len must be in 2..=5");
        }
        if self.grid < 10 || self.image_size < 4 || self.aux_cameras == 0 || self.aux_cameras > 3 {
            return bad("grid >= 10, image_size >= 4 and 1..=3 auxiliary cameras required");
        }
        if self.distractors + 2 > NOUNS.len() - 1 || self.distractors > 6 {
            return bad("too many distractors");
        }
        Ok(())
    }

    /// Skill ids per task, in training order.
    pub fn tasks(&self) -> Vec<Vec<usize>> {
        let mut tasks = Vec::new();
        tasks.push((0..self.base_skills).collect::<Vec<_>>());
        let mut next = self.base_skills;
        while next < self.skills {
            let end = (next + self.increment).min(self.skills);
            tasks.push((next..end).collect());
            next = end;
        }
        tasks
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new([0.0; 3], [1.0; 3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    Home,
    Primary,
    Secondary,
    AboveSecondary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub anchor: Anchor,
    pub euler_deg: [f64; 3],
    pub gripper_open: bool,
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub skill_id: usize,
    pub verb: String,
    pub primary: usize,
    pub secondary: usize,
    pub variations: usize,
    pub script: Vec<ScriptStep>,
}

impl SkillSpec {
    pub fn instruction(&self, variation: usize) -> Vec<String> {
        [
            self.verb.as_str(),
            "the",
            ATTRIBUTES[variation % ATTRIBUTES.len()],
            NOUNS[self.primary],
            "near",
            "the",
            NOUNS[self.secondary],
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub skill_id: usize,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub variation: usize,
    pub instruction: Vec<String>,
    pub scene: Scene,
    pub keyframes: Vec<Pose>,
}

impl Episode {
    /// Key for per-episode noise streams.
    pub fn key(&self) -> u64 {
        self.seed
    }
}

/// One training unit: the observation at keyframe `keyframe` with the next
/// keyframe's action as target.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeSample {
    pub observation: Arc<RgbdImage>,
    pub skill_id: usize,
    pub split: Split,
    pub episode: usize,
    pub keyframe: usize,
    pub instruction: Vec<String>,
    /// Gripper and collision bits at the current keyframe.
    pub state: [usize; 2],
    pub target: ActionTarget,
    pub task: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub config: SuiteConfig,
    pub seed: u64,
    /// Vocabulary draws needed to satisfy the separability margin.
    pub vocab_attempts: usize,
    pub skills: Vec<SkillSpec>,
    pub train: Vec<Vec<Episode>>,
    pub test: Vec<Vec<Episode>>,
}

impl Suite {
    pub fn tasks(&self) -> Vec<Vec<usize>> {
        self.config.tasks()
    }

    /// 0-based task that introduces `skill`.
    pub fn task_of(&self, skill: usize) -> usize {
        self.tasks()
            .iter()
            .position(|t| t.contains(&skill))
            .expect("skill belongs to a task")
    }

    pub fn episodes(&self, split: Split) -> &[Vec<Episode>] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn codec(&self) -> ActionCodec {
        ActionCodec::new(self.config.grid, self.config.bounds())
    }

    /// Order-independent digest of the suite contents.
    pub fn fingerprint(&self) -> u64 {
        let mut parts = alloc::vec![self.seed, self.vocab_attempts as u64];
        for s in &self.skills {
            parts.extend([s.skill_id as u64, s.primary as u64, s.secondary as u64]);
        }
        for ep in self.train.iter().chain(&self.test).flatten() {
            parts.push(ep.seed);
        }
        mix_seed(&parts)
    }
}

/// Within-skill minimum and cross-skill maximum sentence cosine.
pub fn separability(skills: &[SkillSpec], encoder: &TextEncoder) -> Result<(f64, f64), SynthError> {
    let mut emb: Vec<Vec<Vec<f64>>> = Vec::with_capacity(skills.len());
    for s in skills {
        let mut per = Vec::with_capacity(s.variations);
        for v in 0..s.variations {
            per.push(encoder.encode(&s.instruction(v))?.sentence);
        }
        emb.push(per);
    }
    let mut within = 1.0f64;
    let mut across = -1.0f64;
    for i in 0..emb.len() {
        for a in 0..emb[i].len() {
            for b in 0..a {
                within = within.min(cosine(&emb[i][a], &emb[i][b]));
            }
            for j in 0..i {
                for y in &emb[j] {
                    across = across.max(cosine(&emb[i][a], y));
                }
            }
        }
    }
    Ok((within, across))
}

fn draw_skills(config: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut verbs: Vec<usize> = (0..VERBS.len()).collect();
    let mut nouns: Vec<usize> = (0..NOUNS.len()).collect();
    verbs.shuffle(rng);
    nouns.shuffle(rng);
    (0..config.skills)
        .map(|s| (verbs[s], nouns[2 * s], nouns[2 * s + 1]))
        .collect()
}

fn draw_script(config: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<ScriptStep> {
    const ANCHORS: [Anchor; 5] = [
        Anchor::Home,
        Anchor::Primary,
        Anchor::Secondary,
        Anchor::AboveSecondary,
        Anchor::Home,
    ];
    // Every non-final keyframe gets a distinct (gripper, collision) state so
    // the state token tells the policy which step it is at.
    let mut states: Vec<(bool, bool)> = alloc::vec![(false, false), (false, true), (true, true)];
    states.shuffle(rng);
    let mut out = Vec::with_capacity(config.script_len);
    for (k, &anchor) in ANCHORS.iter().take(config.script_len).enumerate() {
        let (gripper_open, collision) = if k == 0 {
            (true, false)
        } else if k + 1 < config.script_len {
            states[k - 1]
        } else {
            (rng.gen(), rng.gen())
        };
        let euler_deg = core::array::from_fn(|_| {
            (rng.gen_range(0..ROTATION_BINS) as f64 + 0.5) * ROTATION_RESOLUTION_DEG
        });
        out.push(ScriptStep {
            anchor,
            euler_deg,
            gripper_open,
            collision,
        });
    }
    out
}

fn cell_center(config: &SuiteConfig, cell: usize) -> f64 {
    (cell as f64 + 0.5) / config.grid as f64
}

fn make_episode(
    config: &SuiteConfig,
    seed: u64,
    skill: &SkillSpec,
    split: Split,
    index: usize,
) -> Episode {
    let ep_seed = mix_seed(&[seed, TAG_EPISODE, skill.skill_id as u64, split as u64, index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
    let variation = index % skill.variations;
    let bounds = config.bounds();
    // Object footprints snap to cell centers in the middle half of the table.
    let lo = config.grid / 4;
    let hi = config.grid - config.grid / 4;
    let mut classes = alloc::vec![skill.primary, skill.secondary];
    let mut pool: Vec<usize> = (0..NOUNS.len())
        .filter(|c| *c != skill.primary && *c != skill.secondary)
        .collect();
    pool.shuffle(&mut rng);
    classes.extend(pool.into_iter().take(config.distractors));
    let mut cells: Vec<(usize, usize)> = Vec::new();
    while cells.len() < classes.len() {
        let c = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        let clear = cells
            .iter()
            .all(|&(x, y)| x.abs_diff(c.0).max(y.abs_diff(c.1)) >= 3);
        if clear {
            cells.push(c);
        }
    }
    let objects: Vec<SceneObject> = classes
        .iter()
        .zip(&cells)
        .enumerate()
        .map(|(k, (&class, &(cx, cy)))| {
            let s = if k == 0 {
                PRIMARY_SIZES[variation % PRIMARY_SIZES.len()]
            } else {
                SECONDARY_SIZE
            };
            SceneObject {
                position: [cell_center(config, cx), cell_center(config, cy), 0.5 * s],
                extent: [s; 3],
                color: class_color(class),
                class,
            }
        })
        .collect();
    let keyframes = skill
        .script
        .iter()
        .map(|step| {
            let position = match step.anchor {
                Anchor::Home => HOME,
                Anchor::Primary => objects[0].grasp_point(),
                Anchor::Secondary => objects[1].grasp_point(),
                Anchor::AboveSecondary => {
                    let p = objects[1].grasp_point();
                    [p[0], p[1], p[2] + LIFT]
                }
            };
            Pose {
                position,
                euler_deg: step.euler_deg,
                gripper_open: step.gripper_open,
                collision: step.collision,
            }
        })
        .collect();
    Episode {
        skill_id: skill.skill_id,
        split,
        index,
        seed: ep_seed,
        variation,
        instruction: skill.instruction(variation),
        scene: Scene {
            bounds,
            objects,
            cameras: default_cameras(&bounds, config.image_size, config.aux_cameras),
        },
        keyframes,
    }
}

/// Builds the skill stream. Vocabulary draws are repeated until every skill's
/// variations stay above the separability margin and every pair of skills
/// stays below it.
pub fn generate_suite(config: &SuiteConfig, seed: u64) -> Result<Suite, SynthError> {
    config.validate()?;
    let encoder = TextEncoder::frozen(config.text_dim);
    let mut chosen = None;
    for attempt in 0..MAX_VOCAB_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, TAG_VOCAB, attempt as u64]));
        let skills: Vec<SkillSpec> = draw_skills(config, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(id, (verb, primary, secondary))| {
                let mut srng =
                    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, TAG_SCRIPT, attempt as u64, id as u64]));
                SkillSpec {
                    skill_id: id,
                    verb: String::from(VERBS[verb]),
                    primary,
                    secondary,
                    variations: config.variations,
                    script: draw_script(config, &mut srng),
                }
            })
            .collect();
        let (within, across) = separability(&skills, &encoder)?;
        if within > SEPARABILITY_MARGIN && across < SEPARABILITY_MARGIN {
            chosen = Some((attempt + 1, skills));
            break;
        }
    }
    let (vocab_attempts, skills) = chosen.ok_or(SynthError::Separability {
        attempts: MAX_VOCAB_ATTEMPTS,
    })?;
    let build = |split: Split, count: usize, offset: usize| -> Vec<Vec<Episode>> {
        skills
            .iter()
            .map(|s| {
                (offset..offset + count)
                    .map(|i| make_episode(config, seed, s, split, i))
                    .collect()
            })
            .collect()
    };
    // Test indices continue after the training ones so the two sets never share a seed.
    let train = build(Split::Train, config.train_episodes, 0);
    let test = build(Split::Test, config.test_episodes, config.train_episodes);
    Ok(Suite {
        config: config.clone(),
        seed,
        vocab_attempts,
        skills,
        train,
        test,
    })
}

/// One sample per keyframe that has a successor.
pub fn extract_keyframes(
    episode: &Episode,
    codec: &ActionCodec,
    task: usize,
) -> Result<Vec<KeyframeSample>, SynthError> {
    let observation = Arc::new(render_observation(&episode.scene, 0)?);
    let mut out = Vec::with_capacity(episode.keyframes.len().saturating_sub(1));
    for (k, pair) in episode.keyframes.windows(2).enumerate() {
        let (now, next) = (&pair[0], &pair[1]);
        out.push(KeyframeSample {
            observation: observation.clone(),
            skill_id: episode.skill_id,
            split: episode.split,
            episode: episode.index,
            keyframe: k,
            instruction: episode.instruction.clone(),
            state: [usize::from(now.gripper_open), usize::from(now.collision)],
            target: codec.encode(next)?,
            task,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig {
            train_episodes: 3,
            test_episodes: 2,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SuiteConfig {
            skills: 6,
            train_episodes: 8,
            ..SuiteConfig::default()
        };
        assert_eq!(generate_suite(&cfg, 7).unwrap(), generate_suite(&cfg, 7).unwrap());
        assert_ne!(
            generate_suite(&cfg, 7).unwrap().fingerprint(),
            generate_suite(&cfg, 8).unwrap().fingerprint()
        );
    }

    #[test]
    fn config_errors() {
        for cfg in [
            SuiteConfig { skills: 0, ..small() },
            SuiteConfig { train_episodes: 0, ..small() },
            SuiteConfig { script_len: 1, ..small() },
        ] {
            assert!(matches!(generate_suite(&cfg, 0), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn task_split() {
        assert_eq!(small().tasks(), alloc::vec![alloc::vec![0, 1, 2, 3], alloc::vec![4], alloc::vec![5]]);
    }

    #[test]
    fn train_and_test_disjoint() {
        let suite = generate_suite(&small(), 3).unwrap();
        for s in 0..suite.skills.len() {
            for a in &suite.train[s] {
                for b in &suite.test[s] {
                    assert_ne!(a.seed, b.seed);
                    assert_ne!(a.scene, b.scene);
                }
            }
        }
    }

    #[test]
    fn separability_margin_holds() {
        let suite = generate_suite(&small(), 11).unwrap();
        let (within, across) = separability(&suite.skills, &TextEncoder::frozen(64)).unwrap();
        assert!(within > SEPARABILITY_MARGIN && across < SEPARABILITY_MARGIN);
        for (i, a) in suite.skills.iter().enumerate() {
            for b in &suite.skills[..i] {
                assert_ne!(a.verb, b.verb);
            }
        }
    }

    #[test]
    fn keyframes_target_next_step() {
        let suite = generate_suite(&small(), 1).unwrap();
        let ep = &suite.train[2][0];
        let codec = suite.codec();
        let samples = extract_keyframes(ep, &codec, 0).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].target, codec.encode(&ep.keyframes[1]).unwrap());
        assert!(samples.iter().all(|s| s.instruction == ep.instruction));
        assert_eq!(samples[0].state, [1, 0]);
        assert_ne!(samples[0].state, samples[1].state);
    }

    #[test]
    fn objects_inside_workspace() {
        let suite = generate_suite(&small(), 5).unwrap();
        for ep in suite.train.iter().chain(&suite.test).flatten() {
            assert!(!ep.scene.objects.is_empty());
            for o in &ep.scene.objects {
                assert!(ep.scene.bounds.contains_box(&o.aabb()));
            }
        }
    }
}
