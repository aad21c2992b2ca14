use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{Dataset, EpisodeData, SampleRef};
use super::replay::{sample_batch, update_memory, ReplayBuffer};
use super::{Method, RunConfig, TrainError};
use crate::distill::{combine, loss_ce, loss_srd, loss_total, LossBreakdown, TeacherSnapshot};
use crate::evalkit::{evaluate_skill, EvalError, Policy, RunReport, ScoreMatrix};
use crate::numerics::{Binder, Graph, OptimizerState, ParamStore, Tensor, UpdateRule};
use crate::perceiver::{ActionLogits, AdapterSet, Perceiver, Routing};
use crate::sep::SemanticBank;
use crate::ssr::{loss_color, loss_semantic, loss_ssr, render, Depths, FieldModel, RayBatch};
use crate::synthbench::{generate_suite, mix_seed, NOISE_STEPS};

pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_INIT: u64 = 0x1417;
const TAG_FIELD: u64 = 0xf1e1d;
const TAG_ADAPTER: u64 = 0xada9;
const TAG_STEP: u64 = 0x57e9;
const TAG_MEMORY: u64 = 0x3e3;

/// One training-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub task: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSummary {
    pub task: usize,
    pub iterations: usize,
    pub scores: Vec<Option<f64>>,
}

/// Complete mutable state of a run; together with the config it determines
/// every later step.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    /// Task currently being trained (equals the task count once finished).
    pub task: usize,
    /// Iterations already taken within `task`.
    pub iteration: usize,
    pub base: ParamStore,
    pub adapters: AdapterSet,
    pub field: ParamStore,
    pub bank: SemanticBank,
    pub optimizer: OptimizerState,
    pub memory: ReplayBuffer,
    pub teacher: Option<TeacherSnapshot>,
    pub log: Vec<LogRow>,
    pub scores: ScoreMatrix,
}

pub struct Trainer {
    pub config: RunConfig,
    pub data: Arc<Dataset>,
    pub perceiver: Perceiver,
    pub field_model: FieldModel,
    tasks: Vec<Vec<usize>>,
}

fn adapter_rng(seed: u64, h: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, TAG_ADAPTER, h as u64]))
}

/// Reads the frozen policy from a run state.
pub struct StatePolicy<'a> {
    pub trainer: &'a Trainer,
    pub state: &'a RunState,
}

impl StatePolicy<'_> {
    /// Skill code for an instruction embedding without touching the bank. An
    /// instruction that matches no row falls back to the nearest one.
    pub fn skill_for(&self, sentence: &[f64]) -> Result<usize, TrainError> {
        if self.trainer.config.switches.no_sep {
            return Ok(0);
        }
        let d = self.state.bank.lookup(sentence)?;
        if !d.is_new {
            return Ok(d.skill);
        }
        Ok(self.state.bank.nearest(sentence)?.0)
    }

    pub fn logits(&self, ep: &EpisodeData, keyframe: usize) -> Result<ActionLogits, TrainError> {
        let h = self.skill_for(&ep.text.sentence)?;
        let input = ep.input(keyframe)?;
        Ok(self.trainer.perceiver.predict(
            &self.state.base,
            &self.state.adapters.params,
            &input,
            Routing {
                skill: h,
                lora: true,
            },
        )?)
    }
}

impl Policy for StatePolicy<'_> {
    fn act(&self, episode: &EpisodeData, keyframe: usize) -> Result<ActionLogits, EvalError> {
        self.logits(episode, keyframe)
            .map_err(|e| EvalError::Policy(format!("{e}")))
    }
}

struct SsrPlan {
    rays: RayBatch,
    depths: Depths,
    teacher_color: Option<Tensor>,
}

impl Trainer {
    pub fn new(config: RunConfig, data: Arc<Dataset>) -> Result<Self, TrainError> {
        config.validate()?;
        let perceiver = Perceiver::new(config.perceiver.clone())?;
        let field_model = FieldModel::new(config.field.clone());
        let tasks = data.tasks();
        Ok(Self {
            config,
            data,
            perceiver,
            field_model,
            tasks,
        })
    }

    /// Generates the suite for `config.seed` and builds the dataset cache.
    pub fn from_config(config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let data = Self::dataset(&config)?;
        Self::new(config, Arc::new(data))
    }

    pub fn dataset(config: &RunConfig) -> Result<Dataset, TrainError> {
        let suite = generate_suite(&config.suite, config.seed)?;
        Dataset::build(suite, config.perceiver.patch, config.field.feature_dim)
    }

    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.tasks
    }

    pub fn method_name(&self) -> &'static str {
        Method::ALL
            .into_iter()
            .find(|m| m.switches() == self.config.switches)
            .map(Method::name)
            .unwrap_or("custom")
    }

    pub fn init_state(&self) -> Result<RunState, TrainError> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, TAG_INIT]));
        let base = self.perceiver.init_params(&mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, TAG_FIELD]));
        let field = self.field_model.init_params(&mut rng);
        let mut adapters = AdapterSet::new();
        if cfg.switches.no_sep {
            adapters.allocate(0, &cfg.perceiver, &mut adapter_rng(cfg.seed, 0))?;
        }
        Ok(RunState {
            task: 0,
            iteration: 0,
            base,
            adapters,
            field,
            bank: SemanticBank::new(cfg.suite.text_dim, cfg.bank_capacity, cfg.delta)?,
            optimizer: OptimizerState::new(UpdateRule::adam(), cfg.lr),
            memory: ReplayBuffer::new(cfg.memory),
            teacher: None,
            log: Vec::new(),
            scores: Vec::new(),
        })
    }

    fn memory_pool(&self, memory: &ReplayBuffer) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for (&skill, eps) in &memory.episodes {
            for &e in eps {
                for k in 0..self.data.train[skill][e].keyframes.len() {
                    out.push(SampleRef {
                        skill,
                        episode: e,
                        keyframe: k,
                    });
                }
            }
        }
        out
    }

    fn route(&self, st: &mut RunState, sentence: &[f64]) -> Result<usize, TrainError> {
        if self.config.switches.no_sep {
            return Ok(0);
        }
        let d = st.bank.route(sentence)?;
        if d.is_new {
            st.adapters
                .allocate(d.skill, &self.config.perceiver, &mut adapter_rng(self.config.seed, d.skill))?;
        }
        Ok(d.skill)
    }

    fn plan_ssr(
        &self,
        ep: &EpisodeData,
        teacher: Option<(&TeacherSnapshot, &Tensor)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<SsrPlan, TrainError> {
        let cfg = &self.config;
        let (cam_index, cam, image) = &ep.aux[rng.gen_range(0..ep.aux.len())];
        let t = rng.gen_range(0..NOISE_STEPS);
        let target = self
            .data
            .oracle
            .semantic_target(image, &ep.instruction, t, ep.key, *cam_index)?;
        let rays = RayBatch::sample(
            cam,
            image,
            Some(&target.features),
            cfg.field.rays,
            &self.data.bounds,
            rng,
        )?;
        let depths = Depths::stratified(&rays, cfg.field.samples, Some(rng))?;
        let teacher_color = match teacher {
            Some((snap, vox)) => {
                let mut g = Graph::new();
                let mut b = Binder::frozen(vec![&snap.field]);
                let v = g.constant(vox.clone());
                let r = render(
                    &mut g,
                    &mut b,
                    &self.field_model,
                    v,
                    cfg.perceiver.grid,
                    &self.data.bounds,
                    &rays,
                    &depths,
                    false,
                )?;
                Some(g.value(r.color).clone())
            }
            None => None,
        };
        Ok(SsrPlan {
            rays,
            depths,
            teacher_color,
        })
    }

    /// One optimization step of the current task.
    pub fn step(&self, st: &mut RunState) -> Result<LogRow, TrainError> {
        let cfg = &self.config;
        let sw = cfg.switches;
        let m = st.task;
        if m >= self.tasks.len() {
            return Err(TrainError::Finished);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            cfg.seed,
            TAG_STEP,
            m as u64,
            st.iteration as u64,
        ]));
        let current = self.data.keyframes_of(&self.tasks[m]);
        let memory = self.memory_pool(&st.memory);
        let batch = sample_batch(&current, &memory, cfg.batch, cfg.mix_ratio, &mut rng)?;
        let eps: Vec<&EpisodeData> = batch.samples.iter().map(|s| self.data.episode(*s)).collect();

        let mut codes = Vec::with_capacity(eps.len());
        for ep in &eps {
            codes.push(self.route(st, &ep.text.sentence)?);
        }
        let mask: Vec<bool> = batch
            .replay
            .iter()
            .zip(&codes)
            .map(|(&r, &h)| r && st.teacher.as_ref().is_some_and(|t| t.adapters.contains(h)))
            .collect();
        let masked = mask.iter().filter(|&&x| x).count();
        let use_srd = !sw.no_srd;
        let use_ssr = !sw.no_ssr;
        let use_pgt = use_ssr && !sw.no_pseudo_gt;

        let mut teacher_logits: Vec<Option<ActionLogits>> = vec![None; eps.len()];
        let mut teacher_vox: Vec<Option<Tensor>> = vec![None; eps.len()];
        if let (Some(t), true) = (&st.teacher, use_srd || use_pgt) {
            for (b, ep) in eps.iter().enumerate() {
                if !mask[b] {
                    continue;
                }
                let mut g = Graph::new();
                let mut binder = Binder::frozen(vec![&t.base, &t.adapters.params]);
                let input = ep.input(batch.samples[b].keyframe)?;
                let routing = Routing {
                    skill: codes[b],
                    lora: true,
                };
                let vars = self.perceiver.forward(&mut g, &mut binder, &input, routing)?;
                teacher_logits[b] = Some(vars.heads.logits(&g));
                teacher_vox[b] = Some(g.value(vars.voxel_features).clone());
            }
        }

        let mut plans = Vec::with_capacity(eps.len());
        if use_ssr {
            for (b, ep) in eps.iter().enumerate() {
                let teacher = match (&st.teacher, &teacher_vox[b]) {
                    (Some(t), Some(v)) if use_pgt => Some((t, v)),
                    _ => None,
                };
                plans.push(self.plan_ssr(ep, teacher, &mut rng)?);
            }
        }

        let mut g = Graph::new();
        let targets: Vec<_> = batch
            .samples
            .iter()
            .zip(&eps)
            .map(|(s, ep)| ep.keyframes[s.keyframe].1)
            .collect();
        let (ce, ssr, srd, grads) = {
            let mut binder = Binder::trainable(vec![&st.base, &st.adapters.params, &st.field]);
            let mut heads = Vec::with_capacity(eps.len());
            let mut ssr_terms = Vec::new();
            for (b, ep) in eps.iter().enumerate() {
                let input = ep.input(batch.samples[b].keyframe)?;
                let routing = Routing {
                    skill: codes[b],
                    lora: true,
                };
                let vars = self.perceiver.forward(&mut g, &mut binder, &input, routing)?;
                heads.push(vars.heads);
                if let Some(plan) = plans.get(b) {
                    let r = render(
                        &mut g,
                        &mut binder,
                        &self.field_model,
                        vars.voxel_features,
                        cfg.perceiver.grid,
                        &self.data.bounds,
                        &plan.rays,
                        &plan.depths,
                        cfg.stop_grad,
                    )?;
                    let replay_rays = vec![plan.teacher_color.is_some(); plan.rays.len()];
                    let lc = loss_color(
                        &mut g,
                        r.color,
                        &plan.rays.color_tensor(),
                        plan.teacher_color.as_ref(),
                        &replay_rays,
                        cfg.beta,
                    )?;
                    let features = plan.rays.feature_tensor().expect("oracle features attached");
                    let ls = loss_semantic(&mut g, r.semantic, &features)?;
                    ssr_terms.push(loss_ssr(&mut g, lc, ls, cfg.lambda1)?);
                }
            }
            let ce = loss_ce(&mut g, &heads, &targets)?;
            let ssr = match ssr_terms.split_first() {
                None => None,
                Some((&first, rest)) => {
                    let mut acc = first;
                    for &t in rest {
                        acc = g.add(acc, t)?;
                    }
                    Some(g.scale(acc, 1.0 / ssr_terms.len() as f64)?)
                }
            };
            let srd = if use_srd && masked > 0 {
                Some(loss_srd(&mut g, &heads, &teacher_logits, &mask, cfg.tau)?)
            } else {
                None
            };
            let total = combine(&mut g, ce, ssr, srd, cfg.lambda2)?;
            let grads = g.backward(total)?;
            (ce, ssr, srd, grads)
        };
        let value = |v: Option<crate::numerics::Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
        let loss = loss_total(g.value(ce).item(), value(ssr), value(srd), cfg.lambda2, masked)?;
        st.optimizer
            .apply_stores(&mut [&mut st.base, &mut st.adapters.params, &mut st.field], &grads)?;
        let row = LogRow {
            task: m,
            iteration: st.iteration,
            loss,
        };
        st.iteration += 1;
        st.log.push(row);
        Ok(row)
    }

    /// Scores of every skill introduced up to and including `task`.
    pub fn evaluate(&self, st: &RunState, task: usize) -> Result<Vec<Option<f64>>, TrainError> {
        let policy = StatePolicy {
            trainer: self,
            state: st,
        };
        let introduced: Vec<usize> = self.tasks[..=task].iter().flatten().copied().collect();
        let mut row = vec![None; self.config.suite.skills];
        for s in introduced {
            row[s] = Some(evaluate_skill(&policy, &self.data.codec, &self.data.test[s])?);
        }
        Ok(row)
    }

    fn finish_task(&self, st: &mut RunState) -> Result<TaskSummary, TrainError> {
        let m = st.task;
        let skills = &self.tasks[m];
        if !self.config.switches.no_replay {
            let counts: Vec<usize> = skills.iter().map(|&s| self.data.train[s].len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, TAG_MEMORY, m as u64]));
            update_memory(&mut st.memory, skills, &counts, &mut rng)?;
        }
        let scores = self.evaluate(st, m)?;
        st.scores.push(scores.clone());
        if m + 1 < self.tasks.len() {
            st.teacher = Some(TeacherSnapshot::capture(&st.base, &st.adapters, &st.field, m + 1)?);
        }
        let summary = TaskSummary {
            task: m,
            iterations: st.iteration,
            scores,
        };
        st.task += 1;
        st.iteration = 0;
        Ok(summary)
    }

    /// Trains the current task for at most `budget` more iterations. Returns
    /// the summary once the task's iterations are complete.
    pub fn run_task(
        &self,
        st: &mut RunState,
        budget: Option<usize>,
    ) -> Result<Option<TaskSummary>, TrainError> {
        if st.task >= self.tasks.len() {
            return Err(TrainError::Finished);
        }
        let total = self.config.iterations(st.task);
        let mut left = budget.unwrap_or(usize::MAX);
        while st.iteration < total && left > 0 {
            self.step(st)?;
            left -= 1;
        }
        if st.iteration >= total {
            Ok(Some(self.finish_task(st)?))
        } else {
            Ok(None)
        }
    }

    /// Runs `task`, which must be the next one in order.
    pub fn run_task_checked(&self, st: &mut RunState, task: usize) -> Result<TaskSummary, TrainError> {
        if task != st.task {
            return Err(TrainError::TaskOrder {
                requested: task,
                current: st.task,
            });
        }
        Ok(self.run_task(st, None)?.expect("unbounded budget completes the task"))
    }

    pub fn run(&self, st: &mut RunState) -> Result<RunReport, TrainError> {
        while st.task < self.tasks.len() {
            self.run_task(st, None)?;
        }
        self.report(st)
    }

    pub fn report(&self, st: &RunState) -> Result<RunReport, TrainError> {
        Ok(RunReport::new(
            self.method_name(),
            self.config.seed,
            self.config.hash(),
            self.data.suite.fingerprint(),
            self.tasks.clone(),
            st.scores.clone(),
        )?)
    }

    /// Field rendering of auxiliary view `view` of `ep`, row-major RGB with
    /// black where the pixel ray misses the workspace.
    pub fn render_view(&self, st: &RunState, ep: &EpisodeData, view: usize) -> Result<Vec<[f64; 3]>, TrainError> {
        let (_, cam, image) = ep
            .aux
            .get(view)
            .ok_or_else(|| TrainError::Config(format!("episode has no auxiliary view {view}")))?;
        let mut out = vec![[0.0; 3]; image.width * image.height];
        let (rays, pixels) = RayBatch::every_pixel(cam, image, &self.data.bounds);
        if rays.is_empty() {
            return Ok(out);
        }
        let h = self.policy(st).skill_for(&ep.text.sentence)?;
        let h = if st.adapters.contains(h) { h } else { 0 };
        let mut g = Graph::new();
        let mut b = Binder::frozen(vec![&st.base, &st.adapters.params, &st.field]);
        let input = ep.input(0)?;
        let vars = self
            .perceiver
            .forward(&mut g, &mut b, &input, Routing { skill: h, lora: true })?;
        let depths = Depths::stratified::<ChaCha8Rng>(&rays, self.config.field.samples, None)?;
        let r = render(
            &mut g,
            &mut b,
            &self.field_model,
            vars.voxel_features,
            self.config.perceiver.grid,
            &self.data.bounds,
            &rays,
            &depths,
            true,
        )?;
        let color = g.value(r.color);
        for (i, &(row, col)) in pixels.iter().enumerate() {
            let c = color.row(i);
            out[row * image.width + col] = [c[0], c[1], c[2]];
        }
        Ok(out)
    }

    pub fn policy<'a>(&'a self, st: &'a RunState) -> StatePolicy<'a> {
        StatePolicy {
            trainer: self,
            state: st,
        }
    }
}

fn split_u64(x: u64) -> [f64; 2] {
    [(x >> 32) as f64, (x & 0xffff_ffff) as f64]
}

fn join_u64(hi: f64, lo: f64) -> u64 {
    ((hi as u64) << 32) | (lo as u64)
}

fn vec_tensor(v: Vec<f64>) -> Tensor {
    Tensor::new(vec![v.len()], v).expect("finite checkpoint values")
}

fn put_store(out: &mut Vec<(String, Tensor)>, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        out.push((format!("{prefix}/{name}"), t.clone()));
    }
}

fn take_store(entries: &BTreeMap<String, Tensor>, prefix: &str) -> ParamStore {
    let mut s = ParamStore::new();
    let p = format!("{prefix}/");
    for (name, t) in entries.range(p.clone()..) {
        let Some(rest) = name.strip_prefix(&p) else { break };
        s.insert(rest, t.clone());
    }
    s
}

impl RunState {
    /// Named tensors describing the whole state.
    pub fn to_entries(&self, config_hash: u64) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut meta = Vec::new();
        meta.extend(split_u64(config_hash));
        meta.extend([self.task as f64, self.iteration as f64, self.adapters.allocated() as f64]);
        meta.extend(split_u64(self.optimizer.step_count()));
        match &self.teacher {
            Some(t) => meta.extend([1.0, t.task as f64, t.adapters.allocated() as f64]),
            None => meta.extend([0.0, 0.0, 0.0]),
        }
        out.push(("meta".into(), vec_tensor(meta)));
        put_store(&mut out, "base", &self.base);
        put_store(&mut out, "adapters", &self.adapters.params);
        put_store(&mut out, "field", &self.field);
        out.push(("bank".into(), self.bank.to_tensor()));
        for (name, first, second, steps) in self.optimizer.export_moments() {
            out.push((format!("optim/{name}/m"), vec_tensor(first)));
            out.push((format!("optim/{name}/v"), vec_tensor(second)));
            out.push((format!("optim/{name}/t"), vec_tensor(split_u64(steps).to_vec())));
        }
        for (skill, eps) in &self.memory.episodes {
            let v = eps.iter().map(|&e| e as f64).collect();
            out.push((format!("memory/{skill}"), vec_tensor(v)));
        }
        if let Some(t) = &self.teacher {
            put_store(&mut out, "teacher/base", &t.base);
            put_store(&mut out, "teacher/adapters", &t.adapters.params);
            put_store(&mut out, "teacher/field", &t.field);
        }
        if !self.log.is_empty() {
            let mut data = Vec::with_capacity(self.log.len() * 7);
            for r in &self.log {
                let l = r.loss;
                data.extend([r.task as f64, r.iteration as f64, l.ce, l.ssr, l.srd, l.total, l.masked as f64]);
            }
            out.push(("log".into(), Tensor::new(vec![self.log.len(), 7], data).expect("finite log")));
        }
        if let Some(first) = self.scores.first() {
            let data = self
                .scores
                .iter()
                .flat_map(|r| r.iter().map(|s| s.unwrap_or(-1.0)))
                .collect();
            out.push((
                "scores".into(),
                Tensor::new(vec![self.scores.len(), first.len()], data).expect("finite scores"),
            ));
        }
        out
    }

    pub fn from_entries(trainer: &Trainer, entries: &BTreeMap<String, Tensor>) -> Result<Self, TrainError> {
        let cfg = &trainer.config;
        let get = |name: &str| entries.get(name).ok_or_else(|| TrainError::Entry(name.into()));
        let meta = get("meta")?.data();
        if meta.len() != 10 {
            return Err(TrainError::Entry("meta".into()));
        }
        let found = join_u64(meta[0], meta[1]);
        if found != cfg.hash() {
            return Err(TrainError::ConfigMismatch {
                expected: cfg.hash(),
                found,
            });
        }
        let adapters = AdapterSet::from_params(take_store(entries, "adapters"), meta[4] as usize)?;
        let mut optimizer = OptimizerState::new(UpdateRule::adam(), cfg.lr);
        let mut moments = Vec::new();
        for (name, t) in entries.range(String::from("optim/")..) {
            let Some(rest) = name.strip_prefix("optim/") else { break };
            let Some(param) = rest.strip_suffix("/m") else { continue };
            let v = get(&format!("optim/{param}/v"))?;
            let steps = get(&format!("optim/{param}/t"))?.data();
            moments.push((
                String::from(param),
                t.data().to_vec(),
                v.data().to_vec(),
                join_u64(steps[0], steps[1]),
            ));
        }
        optimizer.import_moments(join_u64(meta[5], meta[6]), moments);
        let mut memory = ReplayBuffer::new(cfg.memory);
        for (name, t) in entries.range(String::from("memory/")..) {
            let Some(rest) = name.strip_prefix("memory/") else { break };
            let skill = rest.parse().map_err(|_| TrainError::Entry(name.clone()))?;
            memory.episodes.insert(skill, t.data().iter().map(|&x| x as usize).collect());
        }
        let teacher = if meta[7] == 1.0 {
            let ad = AdapterSet::from_params(take_store(entries, "teacher/adapters"), meta[9] as usize)?;
            Some(TeacherSnapshot::capture(
                &take_store(entries, "teacher/base"),
                &ad,
                &take_store(entries, "teacher/field"),
                meta[8] as usize,
            )?)
        } else {
            None
        };
        let log = match entries.get("log") {
            None => Vec::new(),
            Some(t) => t
                .data()
                .chunks(7)
                .map(|r| LogRow {
                    task: r[0] as usize,
                    iteration: r[1] as usize,
                    loss: LossBreakdown {
                        ce: r[2],
                        ssr: r[3],
                        srd: r[4],
                        total: r[5],
                        masked: r[6] as usize,
                    },
                })
                .collect(),
        };
        let scores = match entries.get("scores") {
            None => Vec::new(),
            Some(t) => {
                let (_, cols) = t.rows_cols();
                t.data()
                    .chunks(cols)
                    .map(|r| r.iter().map(|&x| (x >= 0.0).then_some(x)).collect())
                    .collect()
            }
        };
        Ok(Self {
            task: meta[2] as usize,
            iteration: meta[3] as usize,
            base: take_store(entries, "base"),
            adapters,
            field: take_store(entries, "field"),
            bank: SemanticBank::from_tensor(get("bank")?, cfg.delta)?,
            optimizer,
            memory,
            teacher,
            log,
            scores,
        })
    }
}
