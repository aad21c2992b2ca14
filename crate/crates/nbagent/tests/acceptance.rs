//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the report is always printed. Pass criterion
//! numbers as arguments to run a subset: `cargo test --test acceptance -- 3 5`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nbagent::bench::{run_bench, RunDone};
use nbagent::config;
use nbagent::core::distill::{combine, loss_ce, loss_srd, DEFAULT_TEMPERATURE};
use nbagent::core::evalkit::{metric_avg, metric_forget};
use nbagent::core::geometry::{normalize, Aabb};
use nbagent::core::numerics::{
    check_gradients, Binder, GradCheckOptions, Graph, OptimizerState, ParamStore, Tensor, UpdateRule,
};
use nbagent::core::perceiver::{
    ActionLogits, ActionTarget, AdapterSet, HeadVars, Perceiver, PerceiverConfig, PolicyInput, Routing, VoxelGrid,
    VoxelInput, CHANNELS, ROTATION_BINS,
};
use nbagent::core::sep::{SemanticBank, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
use nbagent::core::ssr::{
    loss_color, loss_semantic, loss_ssr, quadrature, render, Depths, FieldConfig, FieldModel, RayBatch,
};
use nbagent::core::synthbench::{generate_suite, render_observation, SuiteConfig, TextEncoder};
use nbagent::core::trainer::{Method, RunConfig, Trainer};
use nbagent::session::{self, TrainOptions, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_SEEDS: u64 = 20;
const GRADCHECK_EPSILON: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-3;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const LORA_BUDGET: Duration = Duration::from_secs(30);
const ROUTING_SEEDS: u64 = 10;
const EMA_TOLERANCE: f64 = 1e-12;
const RENDER_SEQUENCES: usize = 1000;
const RENDER_TOLERANCE: f64 = 1e-12;
const SHIFT_TOLERANCE: f64 = 1e-9;
const KL_EXAMPLE: f64 = 0.05663;
const KL_TOLERANCE: f64 = 1e-5;
const METRIC_TOLERANCE: f64 = 1e-12;
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
const BENCH_BUDGET: Duration = Duration::from_secs(15 * 60);
const SSR_STEPS: usize = 200;
const SSR_DROP: f64 = 0.5;
const CE_STEPS: usize = 50;
const CE_LR: f64 = 1e-3;

type Check = Result<String, String>;

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn config_file(name: &str) -> RunConfig {
    let path = repo_path(&format!("configs/{name}"));
    let text = std::fs::read_to_string(&path).expect("config file present");
    config::resolve(Some((&path, &text)), vec![]).expect("config parses")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn small_perceiver() -> PerceiverConfig {
    PerceiverConfig {
        grid: 10,
        patch: 5,
        voxel_dim: 4,
        dim: 8,
        latents: 4,
        rank: 2,
        self_blocks: 1,
        text_dim: 8,
        trans_dim: 4,
    }
}

fn unit() -> Aabb {
    Aabb::new([0.0; 3], [1.0; 3])
}

fn random_input(cfg: &PerceiverConfig, rng: &mut ChaCha8Rng) -> PolicyInput {
    let cells = cfg.cells();
    let mut data = vec![0.0; cells * CHANNELS];
    for c in 0..cells {
        if rng.gen_bool(0.2) {
            data[c * CHANNELS] = 1.0;
            for k in 1..CHANNELS {
                data[c * CHANNELS + k] = rng.gen_range(0.0..1.0);
            }
        }
    }
    let grid = VoxelGrid {
        grid: cfg.grid,
        bounds: unit(),
        data,
    };
    let voxels = Arc::new(VoxelInput::new(&grid, cfg.patch).unwrap());
    let text = TextEncoder::frozen(cfg.text_dim).encode(&["open", "the", "grill"]).unwrap();
    PolicyInput::new(voxels, &text, [rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap()
}

fn random_target(grid: usize, rng: &mut ChaCha8Rng) -> ActionTarget {
    ActionTarget {
        translation: [rng.gen_range(0..grid), rng.gen_range(0..grid), rng.gen_range(0..grid)],
        rotation: [0; 3].map(|_| rng.gen_range(0..ROTATION_BINS)),
        gripper: rng.gen_range(0..2),
        collision: rng.gen_range(0..2),
    }
}

fn random_logits(cells: usize, bins: usize, scale: f64, rng: &mut ChaCha8Rng) -> ActionLogits {
    let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
    let g = v(2);
    let c = v(2);
    ActionLogits {
        translation: v(cells),
        rotation: [v(bins), v(bins), v(bins)],
        gripper: [g[0], g[1]],
        collision: [c[0], c[1]],
    }
}

fn logits_as_heads(g: &mut Graph, l: &ActionLogits) -> HeadVars {
    let mut row = |x: &[f64]| g.constant(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap());
    HeadVars {
        translation: row(&l.translation),
        rotation: [row(&l.rotation[0]), row(&l.rotation[1]), row(&l.rotation[2])],
        gripper: row(&l.gripper),
        collision: row(&l.collision),
    }
}

fn random_rays(n: usize, fdim: usize, rng: &mut ChaCha8Rng) -> RayBatch {
    let mut b = RayBatch {
        features: Some(Vec::new()),
        ..RayBatch::default()
    };
    for _ in 0..n {
        let o = [rng.gen_range(0.2..0.8), -0.5, rng.gen_range(0.2..0.8)];
        let d = normalize([rng.gen_range(-0.2..0.2), 1.0, rng.gen_range(-0.2..0.2)]);
        let hit = unit().intersect(o, d).unwrap();
        b.origins.push(o);
        b.dirs.push(d);
        b.near.push(hit.t_enter);
        b.far.push(hit.t_exit);
        b.colors.push([rng.gen(), rng.gen(), rng.gen()]);
        for _ in 0..fdim {
            b.features.as_mut().unwrap().push(rng.gen_range(-1.0..1.0));
        }
    }
    b
}

fn logit_bits(l: &ActionLogits) -> Vec<u64> {
    l.translation
        .iter()
        .chain(l.rotation.iter().flatten())
        .chain(&l.gripper)
        .chain(&l.collision)
        .map(|x| x.to_bits())
        .collect()
}

fn jitter(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    for (_, t) in store.iter_mut() {
        let noise = Tensor::randn(t.shape(), std, rng);
        let moved: Vec<f64> = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        t.assign(&moved).unwrap();
    }
}

/// Policy, semantic field and every loss in one graph, checked against
/// central differences.
fn gradcheck() -> Check {
    let started = Instant::now();
    let cfg = small_perceiver();
    let field_cfg = FieldConfig {
        hidden: 6,
        feature_dim: 2,
        voxel_dim: cfg.voxel_dim,
        samples: 4,
        rays: 3,
    };
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    let mut blocks = std::collections::BTreeSet::new();
    for seed in 0..GRADCHECK_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Perceiver::new(cfg.clone()).unwrap();
        let mut base = p.init_params(&mut rng);
        let mut adapters = AdapterSet::new();
        adapters.allocate(0, &cfg, &mut rng).unwrap();
        let model = FieldModel::new(field_cfg.clone());
        let mut field = model.init_params(&mut rng);
        // Move every weight off its initialization so zero factors and zero
        // biases do not hide gradient paths.
        jitter(&mut base, 0.1, &mut rng);
        jitter(&mut adapters.params, 0.1, &mut rng);
        jitter(&mut field, 0.3, &mut rng);
        let input = random_input(&cfg, &mut rng);
        let target = random_target(cfg.grid, &mut rng);
        let teacher = random_logits(cfg.cells(), ROTATION_BINS, 1.0, &mut rng);
        let rays = random_rays(field_cfg.rays, field_cfg.feature_dim, &mut rng);
        let depths = Depths::stratified(&rays, field_cfg.samples, Some(&mut rng)).unwrap();
        let teacher_color = Tensor::uniform(&[rays.len(), 3], 0.0, 1.0, &mut rng);

        let mut g = Graph::new();
        let mut b = Binder::trainable(vec![&base, &adapters.params, &field]);
        let vars = p.forward(&mut g, &mut b, &input, Routing { skill: 0, lora: true }).unwrap();
        let r = render(&mut g, &mut b, &model, vars.voxel_features, cfg.grid, &unit(), &rays, &depths, false).unwrap();
        let lc = loss_color(&mut g, r.color, &rays.color_tensor(), Some(&teacher_color), &[true, false, true], 0.7)
            .unwrap();
        let ls = loss_semantic(&mut g, r.semantic, &rays.feature_tensor().unwrap()).unwrap();
        let ssr = loss_ssr(&mut g, lc, ls, 0.1).unwrap();
        let ce = loss_ce(&mut g, &[vars.heads], &[target]).unwrap();
        let srd = loss_srd(&mut g, &[vars.heads], &[Some(teacher)], &[true], DEFAULT_TEMPERATURE).unwrap();
        let total = combine(&mut g, ce, Some(ssr), Some(srd), 0.2).unwrap();
        let report = check_gradients(
            &g,
            total,
            &GradCheckOptions {
                epsilon: GRADCHECK_EPSILON,
                tolerance: GRADCHECK_TOLERANCE,
                max_entries: Some(3),
                seed,
            },
        )
        .map_err(|e| e.to_string())?;
        for (name, c) in &report.params {
            entries += c.checked;
            blocks.insert(name.split('.').next().unwrap_or(name).to_string());
            ensure(c.failures.is_empty(), || {
                format!("seed {seed}: {name} rel err {:.2e} {:?}", c.max_rel_err, c.failures)
            })?;
        }
        worst = worst.max(report.max_rel_err());
    }
    let elapsed = started.elapsed();
    ensure(elapsed < GRADCHECK_BUDGET, || format!("took {elapsed:.0?}"))?;
    let blocks: Vec<String> = blocks.into_iter().collect();
    Ok(format!(
        "{GRADCHECK_SEEDS} seeds, {entries} entries over {}, max rel err {worst:.2e}, {elapsed:.1?}",
        blocks.join("/")
    ))
}

fn lora() -> Check {
    let started = Instant::now();
    let cfg = PerceiverConfig::default();
    let p = Perceiver::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base = p.init_params(&mut rng);
    let mut adapters = AdapterSet::new();
    for h in 0..3 {
        adapters.allocate(h, &cfg, &mut rng).unwrap();
    }
    let input = random_input(&cfg, &mut rng);
    let predict = |ad: &AdapterSet, skill, lora| {
        logit_bits(&p.predict(&base, &ad.params, &input, Routing { skill, lora }).unwrap())
    };
    for h in 0..3 {
        ensure(predict(&adapters, h, true) == predict(&adapters, h, false), || {
            format!("fresh slot {h} differs from the base path")
        })?;
    }
    let mut trained = adapters.clone();
    for name in trained.slot_names(1) {
        let shape = trained.params.get(&name).unwrap().shape().to_vec();
        trained.params.insert(name, Tensor::randn(&shape, 0.5, &mut rng));
    }
    for h in [0, 2] {
        ensure(predict(&trained, h, true) == predict(&adapters, h, true), || {
            format!("updating slot 1 moved slot {h}")
        })?;
    }
    ensure(predict(&trained, 1, true) != predict(&adapters, 1, true), || {
        "updated slot 1 gives the same output".into()
    })?;
    let elapsed = started.elapsed();
    ensure(elapsed < LORA_BUDGET, || format!("took {elapsed:.0?}"))?;
    Ok(format!("identity on 3 fresh slots, slots 0 and 2 bit-exact after moving slot 1, {elapsed:.1?}"))
}

fn routing() -> Check {
    let mut decisions = 0usize;
    for seed in 0..ROUTING_SEEDS {
        let suite = generate_suite(&SuiteConfig::default(), seed).map_err(|e| e.to_string())?;
        let enc = TextEncoder::frozen(suite.config.text_dim);
        let mut bank = SemanticBank::new(suite.config.text_dim, DEFAULT_CAPACITY, DEFAULT_THRESHOLD).unwrap();
        let mut code_of: BTreeMap<usize, usize> = BTreeMap::new();
        for task in suite.tasks() {
            for &skill in &task {
                for ep in &suite.train[skill] {
                    let d = bank.route(&enc.encode(&ep.instruction).unwrap().sentence).unwrap();
                    let code = *code_of.entry(skill).or_insert(d.skill);
                    ensure(code == d.skill, || format!("seed {seed}: skill {skill} split over codes"))?;
                    decisions += 1;
                }
            }
        }
        let mut codes: Vec<usize> = code_of.values().copied().collect();
        codes.sort_unstable();
        codes.dedup();
        ensure(codes.len() == suite.skills.len(), || format!("seed {seed}: skills share a code"))?;
        for (skill, eps) in suite.test.iter().enumerate() {
            for ep in eps {
                let d = bank.lookup(&enc.encode(&ep.instruction).unwrap().sentence).unwrap();
                ensure(!d.is_new && d.skill == code_of[&skill], || {
                    format!("seed {seed}: test episode of skill {skill} routed to {}", d.skill)
                })?;
                decisions += 1;
            }
        }
    }

    let mut bank = SemanticBank::new(3, 4, DEFAULT_THRESHOLD).unwrap();
    bank.route(&[1.0, 0.0, 0.0]).unwrap();
    let y = (1.0f64 - 0.81).sqrt();
    let d = bank.route(&[0.9, y, 0.0]).unwrap();
    ensure(d.skill == 0 && !d.is_new, || "0.9 cosine did not match row 0".into())?;
    let row = bank.row(0);
    ensure(
        (row[0] - 0.91).abs() < EMA_TOLERANCE && (row[1] - 0.9 * y).abs() < EMA_TOLERANCE && row[2] == 0.0,
        || format!("EMA row {row:?}"),
    )?;
    let mut bank = SemanticBank::new(3, 4, DEFAULT_THRESHOLD).unwrap();
    bank.route(&[1.0, 0.0, 0.0]).unwrap();
    let d = bank.route(&[0.6, 0.8, 0.0]).unwrap();
    ensure(d.is_new && d.skill == 1 && bank.row(1) == [0.6, 0.8, 0.0], || {
        format!("0.6 cosine gave {d:?}")
    })?;
    Ok(format!("{decisions}/{decisions} decisions agree over seeds 0-{}; EMA examples exact", ROUTING_SEEDS - 1))
}

fn renderer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for i in 0..RENDER_SEQUENCES {
        let n = rng.gen_range(1..40);
        let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let (w, t) = quadrature(&sigma, &delta).map_err(|e| e.to_string())?;
        // Product-form oracle.
        let mut trans = 1.0f64;
        for k in 0..n {
            let keep = (-sigma[k] * delta[k]).exp();
            worst = worst.max((t[k] - trans).abs()).max((w[k] - trans * (1.0 - keep)).abs());
            trans *= keep;
        }
        let total: f64 = w.iter().sum();
        ensure(w.iter().all(|x| (0.0..=1.0).contains(x)) && total <= 1.0 + RENDER_TOLERANCE, || {
            format!("sequence {i}: weights {w:?}")
        })?;
        ensure(t.windows(2).all(|p| p[1] <= p[0]), || format!("sequence {i}: transmittance rises"))?;
    }
    ensure(worst < RENDER_TOLERANCE, || format!("oracle gap {worst:.2e}"))?;

    let ln2 = std::f64::consts::LN_2;
    let (w, _) = quadrature(&[ln2, ln2], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure((w[0] - 0.5).abs() < RENDER_TOLERANCE && (w[1] - 0.25).abs() < RENDER_TOLERANCE, || {
        format!("ln2 weights {w:?}")
    })?;

    let model = FieldModel::new(FieldConfig {
        hidden: 6,
        feature_dim: 2,
        voxel_dim: 3,
        samples: 4,
        rays: 3,
    });
    let params = model.init_params(&mut rng);
    let rays = random_rays(3, 2, &mut rng);
    let depths = Depths::stratified::<ChaCha8Rng>(&rays, 4, None).unwrap();
    let mut g = Graph::new();
    let mut b = Binder::frozen(vec![&params]);
    let vox = g.constant(Tensor::randn(&[64, 3], 1.0, &mut rng));
    let r = render(&mut g, &mut b, &model, vox, 4, &unit(), &rays, &depths, false).map_err(|e| e.to_string())?;
    let color = g.integrate(r.weights, r.point_color).unwrap();
    let semantic = g.integrate(r.weights, r.point_semantic).unwrap();
    ensure(g.value(color).bit_eq(g.value(r.color)) && g.value(semantic).bit_eq(g.value(r.semantic)), || {
        "color and semantic renders use different weights".into()
    })?;
    Ok(format!(
        "{RENDER_SEQUENCES} sequences within {worst:.1e} of the product oracle; ln2 pair ({}, {}); shared weights",
        w[0], w[1]
    ))
}

fn srd_value(student: &ActionLogits, teacher: &ActionLogits, mask: &[bool], tau: f64) -> Result<f64, String> {
    let mut g = Graph::new();
    let h = logits_as_heads(&mut g, student);
    let heads = vec![h; mask.len()];
    let teach = vec![Some(teacher.clone()); mask.len()];
    let l = loss_srd(&mut g, &heads, &teach, mask, tau).map_err(|e| e.to_string())?;
    Ok(g.value(l).item())
}

fn srd() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = random_logits(8, 8, 2.0, &mut rng);
    let t = random_logits(8, 8, 2.0, &mut rng);
    let same = srd_value(&s, &s, &[true, true], DEFAULT_TEMPERATURE)?;
    ensure(same.abs() < SHIFT_TOLERANCE, || format!("identical logits give {same}"))?;
    let current = srd_value(&s, &t, &[false, false, false], DEFAULT_TEMPERATURE)?;
    ensure(current == 0.0, || format!("all-current batch gives {current}"))?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = random_logits(8, 8, 3.0, &mut rng);
        let t = random_logits(8, 8, 3.0, &mut rng);
        let shift = rng.gen_range(-40.0..40.0);
        let tau = rng.gen_range(0.5..5.0);
        let moved = |l: &ActionLogits| ActionLogits {
            translation: l.translation.iter().map(|x| x + shift).collect(),
            rotation: l.rotation.clone().map(|r| r.iter().map(|x| x - shift).collect()),
            gripper: l.gripper.map(|x| x + 0.5 * shift),
            collision: l.collision.map(|x| x + shift),
        };
        let a = srd_value(&s, &t, &[true], tau)?;
        let b = srd_value(&moved(&s), &moved(&t), &[true], tau)?;
        worst = worst.max((a - b).abs());
    }
    ensure(worst < SHIFT_TOLERANCE, || format!("shift changes the loss by {worst:.2e}"))?;

    // Student uniform over two classes, teacher logits (ln 2, 0) at unit temperature.
    let mut g = Graph::new();
    let student = g.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let lq = g.log_softmax(student).unwrap();
    let p = [2.0 / 3.0, 1.0 / 3.0];
    let kl: f64 = p
        .iter()
        .enumerate()
        .map(|(i, pi): (usize, &f64)| pi * (pi.ln() - g.value(lq).data()[i]))
        .sum();
    ensure((kl - KL_EXAMPLE).abs() < KL_TOLERANCE, || format!("2-class KL {kl}"))?;
    let default_tau = RunConfig::default().tau;
    ensure(DEFAULT_TEMPERATURE == 3.0 && default_tau == 3.0, || format!("default tau {default_tau}"))?;
    Ok(format!("zero cases exact, shift gap {worst:.1e}, 2-class KL {kl:.6}, tau {default_tau}"))
}

fn metrics() -> Check {
    let forget = vec![
        vec![Some(60.0), None],
        vec![Some(50.0), Some(30.0)],
        vec![Some(40.0), Some(35.0)],
    ];
    let (f, _) = metric_forget(&forget).map_err(|e| e.to_string())?;
    let avg = metric_avg(&vec![vec![Some(40.0)], vec![Some(50.0)], vec![Some(45.0)]]).map_err(|e| e.to_string())?;
    ensure((f - 7.5).abs() < METRIC_TOLERANCE && (avg - 45.0).abs() < METRIC_TOLERANCE, || {
        format!("forget {f}, avg {avg}")
    })?;
    Ok(format!("forget {f}, avg {avg}"))
}

struct BenchResult {
    summary: String,
    gates: Vec<(String, bool, String)>,
}

fn bench() -> Result<BenchResult, String> {
    let started = Instant::now();
    let cfg = config_file("bench.toml");
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let progress = |d: &RunDone| {
        eprintln!(
            "  bench {:>6} seed {}: all {:5.1} forget {:>6} ({:.0?})",
            d.method,
            d.seed,
            d.report.all,
            d.report.forget.map_or("n/a".into(), |f| format!("{f:.1}")),
            d.elapsed
        );
    };
    let outcome = run_bench(&cfg, &BENCH_SEEDS, &Method::ALL, threads, &progress).map_err(|e| e.to_string())?;
    outcome.write(&scratch("bench")).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let mut gates: Vec<(String, bool, String)> = outcome
        .gates
        .iter()
        .map(|g| {
            let rel = match g.relation {
                nbagent::bench::Relation::Less => "<",
                nbagent::bench::Relation::AtLeast => ">=",
            };
            (
                g.metric.clone(),
                g.pass,
                format!(
                    "{m}({}) {:.2} {rel} {m}({}) {:.2}",
                    g.left,
                    g.left_value,
                    g.right,
                    g.right_value,
                    m = g.metric
                ),
            )
        })
        .collect();
    gates.push((
        "budget".into(),
        elapsed < BENCH_BUDGET,
        format!("{} runs in {elapsed:.0?}", BENCH_SEEDS.len() * Method::ALL.len()),
    ));
    Ok(BenchResult {
        summary: format!("{elapsed:.0?}"),
        gates,
    })
}

fn bench_criterion(result: &Result<BenchResult, String>, names: &[&str]) -> Check {
    let r = result.as_ref().map_err(Clone::clone)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, pass, detail) in &r.gates {
        if names.contains(&name.as_str()) {
            ok &= *pass;
            parts.push(detail.clone());
        }
    }
    let text = format!("{} [bench {}]", parts.join("; "), r.summary);
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn ssr_and_ce() -> Check {
    // Field alone on one fixed scene of the seed-0 suite.
    let suite = generate_suite(&SuiteConfig::default(), 0).map_err(|e| e.to_string())?;
    let ep = &suite.train[0][0];
    let bounds = ep.scene.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = FieldModel::new(FieldConfig::default());
    let mut params = model.init_params(&mut rng);
    let mut rays = RayBatch::default();
    for cam in 1..ep.scene.cameras.len() {
        let img = render_observation(&ep.scene, cam).unwrap();
        let b = RayBatch::sample(&ep.scene.cameras[cam], &img, None, 32, &bounds, &mut rng).unwrap();
        rays.extend(&b);
    }
    let depths = Depths::stratified::<ChaCha8Rng>(&rays, 24, None).unwrap();
    let vox = Tensor::randn(&[20 * 20 * 20, 16], 0.5, &mut rng);
    let y = rays.color_tensor();
    let mask = vec![false; rays.len()];
    let mut opt = OptimizerState::new(UpdateRule::adam(), 1e-3);
    let mut losses = Vec::with_capacity(SSR_STEPS);
    for _ in 0..SSR_STEPS {
        let mut g = Graph::new();
        let mut b = Binder::trainable(vec![&params]);
        let v = g.constant(vox.clone());
        let r = render(&mut g, &mut b, &model, v, 20, &bounds, &rays, &depths, false).unwrap();
        let l = loss_color(&mut g, r.color, &y, None, &mask, 1.0).unwrap();
        losses.push(g.value(l).item());
        let grads = g.backward(l).unwrap();
        opt.apply(&mut params, &grads).unwrap();
    }
    let (first, last) = (losses[0], losses[SSR_STEPS - 1]);
    ensure(last <= (1.0 - SSR_DROP) * first, || format!("color loss {first:.4} -> {last:.4}"))?;

    // Full-batch SGD on one fixed batch of policy inputs.
    let cfg = small_perceiver();
    let p = Perceiver::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut base = p.init_params(&mut rng);
    let mut adapters = AdapterSet::new();
    adapters.allocate(0, &cfg, &mut rng).unwrap();
    let batch: Vec<(PolicyInput, ActionTarget)> = (0..4)
        .map(|_| (random_input(&cfg, &mut rng), random_target(cfg.grid, &mut rng)))
        .collect();
    let mut sgd = OptimizerState::new(UpdateRule::Sgd, CE_LR);
    let mut ce = Vec::with_capacity(CE_STEPS);
    for _ in 0..CE_STEPS {
        let mut g = Graph::new();
        let mut b = Binder::trainable(vec![&base, &adapters.params]);
        let mut heads = Vec::new();
        for (input, _) in &batch {
            heads.push(p.forward(&mut g, &mut b, input, Routing { skill: 0, lora: true }).unwrap().heads);
        }
        let targets: Vec<ActionTarget> = batch.iter().map(|(_, t)| *t).collect();
        let l = loss_ce(&mut g, &heads, &targets).unwrap();
        ce.push(g.value(l).item());
        let grads = g.backward(l).unwrap();
        drop(b);
        sgd.apply_stores(&mut [&mut base, &mut adapters.params], &grads).unwrap();
    }
    let rises = ce.windows(2).filter(|w| w[1] > w[0]).count();
    ensure(rises == 0, || format!("CE rose on {rises} of {} steps", CE_STEPS - 1))?;
    Ok(format!(
        "color loss {first:.4} -> {last:.4} ({:.0}% drop); CE {:.4} -> {:.4} monotone over {CE_STEPS} steps",
        100.0 * (1.0 - last / first),
        ce[0],
        ce[CE_STEPS - 1]
    ))
}

fn train_to(cfg: &RunConfig, dir: &Path, resume: Option<PathBuf>, interrupt_after: Option<usize>) -> TrainOutcome {
    session::train(
        cfg.clone(),
        &TrainOptions {
            out_dir: dir.to_path_buf(),
            resume,
            interrupt_after,
            dump_views: false,
        },
    )
    .expect("smoke run trains")
}

fn reproducibility() -> Check {
    let cfg = config_file("smoke.toml");
    let (a, b) = (scratch("repro-a"), scratch("repro-b"));
    train_to(&cfg, &a, None, None);
    train_to(&cfg, &b, None, None);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    ensure(read(a.join("report.json")) == read(b.join("report.json")), || {
        "report.json differs between identical runs".into()
    })?;

    let trainer = Trainer::from_config(cfg.clone()).map_err(|e| e.to_string())?;
    let mut st = trainer.init_state().unwrap();
    trainer.run(&mut st).unwrap();
    let path = a.join("roundtrip.bin");
    session::save_state(&path, &trainer, &st).map_err(|e| e.to_string())?;
    let back = session::load_state(&path, &trainer).map_err(|e| e.to_string())?;
    ensure(back == st, || "loaded state differs".into())?;
    let (before, after) = (trainer.policy(&st), trainer.policy(&back));
    let mut outputs = 0;
    for eps in &trainer.data.test {
        for ep in eps {
            for k in 0..ep.keyframes.len() {
                let x = logit_bits(&before.logits(ep, k).unwrap());
                let y = logit_bits(&after.logits(ep, k).unwrap());
                ensure(x == y, || format!("skill {} keyframe {k} differs after reload", ep.skill))?;
                outputs += 1;
            }
        }
    }

    let c = scratch("resume");
    let steps = cfg.base_iterations + 2;
    let TrainOutcome::Interrupted { checkpoint } = train_to(&cfg, &c, None, Some(steps)) else {
        return Err("run was not interrupted".into());
    };
    train_to(&cfg, &c, Some(checkpoint), None);
    let tasks = trainer.tasks().len();
    for name in ["report.json".to_string(), "train_log.csv".into(), session::checkpoint_name(tasks - 1)] {
        ensure(read(a.join(&name)) == read(c.join(&name)), || format!("{name} differs after resume"))?;
    }
    Ok(format!(
        "report.json identical; {outputs} reloaded forward outputs bit-exact; resume after {steps} steps matches"
    ))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let bench_result = if run(7) || run(8) { Some(bench()) } else { None };
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "gradient check", Box::new(gradcheck)),
        (2, "adapter identity and isolation", Box::new(lora)),
        (3, "instruction routing", Box::new(routing)),
        (4, "volume renderer", Box::new(renderer)),
        (5, "self-distillation loss", Box::new(srd)),
        (6, "continual metrics", Box::new(metrics)),
        (
            7,
            "forgetting and overall score",
            Box::new(|| bench_criterion(bench_result.as_ref().unwrap(), &["forget", "all", "budget"])),
        ),
        (
            8,
            "ablation ordering",
            Box::new(|| bench_criterion(bench_result.as_ref().unwrap(), &["novel", "base"])),
        ),
        (9, "rendering fit and CE descent", Box::new(ssr_and_ce)),
        (10, "reproducibility and checkpoints", Box::new(reproducibility)),
    ];
    let mut failed = 0;
    for (n, title, check) in &criteria {
        if !run(*n) {
            continue;
        }
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:2} {tag}  {title}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
