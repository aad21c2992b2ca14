use nbagent_core::evalkit::{keyframe_success, metric_avg, metric_forget, RunReport, ScoreMatrix};
use nbagent_core::perceiver::ROTATION_BINS;
use nbagent_core::sep::{SemanticBank, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
use nbagent_core::synthbench::{extract_keyframes, generate_suite, SuiteConfig, TextEncoder};
use proptest::prelude::*;

fn small_suite() -> SuiteConfig {
    SuiteConfig {
        train_episodes: 3,
        test_episodes: 2,
        ..SuiteConfig::default()
    }
}

#[test]
fn routing_is_a_bijection_whatever_the_task_order() {
    for seed in 0..3 {
        let suite = generate_suite(&small_suite(), seed).unwrap();
        let enc = TextEncoder::frozen(suite.config.text_dim);
        let mut order: Vec<usize> = (0..suite.skills.len()).collect();
        order.reverse();
        let mut bank = SemanticBank::new(suite.config.text_dim, DEFAULT_CAPACITY, DEFAULT_THRESHOLD).unwrap();
        let mut code = vec![None; suite.skills.len()];
        for &s in &order {
            for ep in &suite.train[s] {
                let d = bank.route(&enc.encode(&ep.instruction).unwrap().sentence).unwrap();
                assert_eq!(*code[s].get_or_insert(d.skill), d.skill, "seed {seed} skill {s}");
            }
        }
        assert_eq!(bank.occupancy(), suite.skills.len());
        // Reversed order assigns codes in reverse.
        for (i, &s) in order.iter().enumerate() {
            assert_eq!(code[s], Some(i));
        }
    }
}

#[test]
fn every_keyframe_target_is_in_range() {
    let suite = generate_suite(&small_suite(), 4).unwrap();
    let codec = suite.codec();
    for eps in suite.train.iter().chain(&suite.test) {
        for ep in eps {
            let task = suite.task_of(ep.skill_id);
            let frames = extract_keyframes(ep, &codec, task).unwrap();
            assert_eq!(frames.len(), ep.keyframes.len() - 1);
            for f in frames {
                codec.validate(&f.target).unwrap();
                assert!(keyframe_success(&f.target, &f.target, ROTATION_BINS));
            }
        }
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = ScoreMatrix> {
    proptest::collection::vec(proptest::collection::vec(0.0f64..=100.0, cols), rows).prop_map(|m| {
        m.into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect()
    })
}

proptest! {
    #[test]
    fn average_lies_within_the_scores(m in matrix(3, 4)) {
        let avg = metric_avg(&m).unwrap();
        let all: Vec<f64> = m.iter().flatten().flatten().copied().collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(avg >= lo - 1e-9 && avg <= hi + 1e-9);
    }

    #[test]
    fn forgetting_bounds(m in matrix(4, 3)) {
        let (f, excluded) = metric_forget(&m).unwrap();
        prop_assert!(excluded.is_empty());
        prop_assert!((-100.0..=100.0).contains(&f));
        // Raising every final score can only lower forgetting.
        let mut better = m.clone();
        for s in better.last_mut().unwrap().iter_mut() {
            *s = Some(100.0);
        }
        prop_assert!(metric_forget(&better).unwrap().0 <= f + 1e-9);
    }

    #[test]
    fn unchanged_scores_forget_nothing(row in proptest::collection::vec(0.0f64..=100.0, 1..6), tasks in 2usize..5) {
        let m: ScoreMatrix = (0..tasks).map(|_| row.iter().copied().map(Some).collect()).collect();
        prop_assert_eq!(metric_forget(&m).unwrap().0, 0.0);
    }

    #[test]
    fn all_is_the_count_weighted_split(m in matrix(2, 5), base in 1usize..5) {
        let tasks = vec![(0..base).collect(), (base..5).collect()];
        let r = RunReport::new("x", 0, 0, 0, tasks, m).unwrap();
        let mix = (base as f64 * r.base + (5 - base) as f64 * r.novel) / 5.0;
        prop_assert!((r.all - mix).abs() < 1e-9);
    }
}
