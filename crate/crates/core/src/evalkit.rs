//! Success-score evaluation, continual-learning metrics and run comparison.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::perceiver::{ActionCodec, ActionLogits, ActionTarget};
use crate::trainer::EpisodeData;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no test episodes")]
    EmptyTestSet,
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("metric needs at least {0} evaluated tasks")]
    TooFewTasks(usize),
    #[error("reports were produced on different suites")]
    SuiteMismatch,
    #[error("no reports for method '{0}'")]
    NoReports(String),
}

/// Anything that maps an episode keyframe to action logits.
pub trait Policy {
    fn act(&self, episode: &EpisodeData, keyframe: usize) -> Result<ActionLogits, EvalError>;
}

impl<F> Policy for F
where
    F: Fn(&EpisodeData, usize) -> Result<ActionLogits, EvalError>,
{
    fn act(&self, episode: &EpisodeData, keyframe: usize) -> Result<ActionLogits, EvalError> {
        self(episode, keyframe)
    }
}

/// Translation within one cell per axis, rotation within one bin per axis
/// (circular), gripper and collision exact.
pub fn keyframe_success(pred: &ActionTarget, truth: &ActionTarget, rotation_bins: usize) -> bool {
    let trans = pred
        .translation
        .iter()
        .zip(&truth.translation)
        .all(|(a, b)| a.abs_diff(*b) <= 1);
    let rot = pred.rotation.iter().zip(&truth.rotation).all(|(a, b)| {
        let d = a.abs_diff(*b) % rotation_bins;
        d.min(rotation_bins - d) <= 1
    });
    trans && rot && pred.gripper == truth.gripper && pred.collision == truth.collision
}

/// Percentage of episodes whose every keyframe is judged a success.
pub fn evaluate_skill<P: Policy + ?Sized>(
    policy: &P,
    codec: &ActionCodec,
    episodes: &[EpisodeData],
) -> Result<f64, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut wins = 0usize;
    for ep in episodes {
        let mut ok = true;
        for (k, (_, truth)) in ep.keyframes.iter().enumerate() {
            let logits = policy.act(ep, k)?;
            let pred = codec.decode(&logits);
            if !keyframe_success(&pred, truth, logits.rotation[0].len()) {
                ok = false;
                break;
            }
        }
        wins += usize::from(ok);
    }
    Ok(100.0 * wins as f64 / episodes.len() as f64)
}

/// Scores matrix: `scores[m][i]` is skill `i` after task `m`, absent before
/// the skill is introduced.
pub type ScoreMatrix = Vec<Vec<Option<f64>>>;

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean over tasks of the mean score of the skills present after each task.
pub fn metric_avg(scores: &ScoreMatrix) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::TooFewTasks(1));
    }
    Ok(mean(scores.iter().map(|row| mean(row.iter().flatten().copied()))))
}

/// Mean over skills present before the final task of the largest drop from
/// an earlier score to the final one. Returns the value and the skills left
/// out because they first appear in the final task.
pub fn metric_forget(scores: &ScoreMatrix) -> Result<(f64, Vec<usize>), EvalError> {
    if scores.len() < 2 {
        return Err(EvalError::TooFewTasks(2));
    }
    let last = scores.len() - 1;
    let mut drops = Vec::new();
    let mut excluded = Vec::new();
    for (i, fin) in scores[last].iter().enumerate() {
        let Some(fin) = fin else { continue };
        let prior: Vec<f64> = scores[..last].iter().filter_map(|r| r.get(i).copied().flatten()).collect();
        if prior.is_empty() {
            excluded.push(i);
            continue;
        }
        let worst = prior.iter().map(|p| p - fin).fold(f64::NEG_INFINITY, f64::max);
        drops.push(worst);
    }
    Ok((mean(drops), excluded))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub suite_hash: String,
    pub tasks: Vec<Vec<usize>>,
    pub scores: ScoreMatrix,
    pub base: f64,
    pub novel: f64,
    pub all: f64,
    pub avg: f64,
    pub forget: Option<f64>,
    /// Skills left out of the forgetting average.
    pub forget_excluded: Vec<usize>,
}

impl RunReport {
    pub fn new(
        method: &str,
        seed: u64,
        config_hash: u64,
        suite_hash: u64,
        tasks: Vec<Vec<usize>>,
        scores: ScoreMatrix,
    ) -> Result<Self, EvalError> {
        let last = scores.last().ok_or(EvalError::TooFewTasks(1))?;
        let base_skills = tasks.first().cloned().unwrap_or_default();
        let fin = |s: &usize| last.get(*s).copied().flatten();
        let base = mean(base_skills.iter().filter_map(fin));
        let novel = mean(tasks.iter().skip(1).flatten().filter_map(fin));
        let all = mean(last.iter().flatten().copied());
        let avg = metric_avg(&scores)?;
        let (forget, forget_excluded) = match metric_forget(&scores) {
            Ok((f, ex)) => (Some(f), ex),
            Err(_) => (None, Vec::new()),
        };
        Ok(Self {
            method: method.into(),
            seed,
            config_hash: alloc::format!("{config_hash:016x}"),
            suite_hash: alloc::format!("{suite_hash:016x}"),
            tasks,
            scores,
            base,
            novel,
            all,
            avg,
            forget,
            forget_excluded,
        })
    }
}

/// Mean and range of one column over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs.iter().copied()),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub seeds: Vec<u64>,
    pub base: Stat,
    pub novel: Stat,
    pub all: Stat,
    pub avg: Stat,
    pub forget: Stat,
}

/// One row per method. Every method must have been run on the same set of
/// suites.
pub fn compare_runs(runs: &BTreeMap<String, Vec<RunReport>>) -> Result<Vec<ComparisonRow>, EvalError> {
    let mut reference: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (method, reports) in runs {
        if reports.is_empty() {
            return Err(EvalError::NoReports(method.clone()));
        }
        let mut suites: Vec<String> = reports.iter().map(|r| r.suite_hash.clone()).collect();
        suites.sort();
        match &reference {
            None => reference = Some(suites),
            Some(r) if *r != suites => return Err(EvalError::SuiteMismatch),
            _ => {}
        }
        let col = |f: &dyn Fn(&RunReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        rows.push(ComparisonRow {
            method: method.clone(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            base: col(&|r| r.base),
            novel: col(&|r| r.novel),
            all: col(&|r| r.all),
            avg: col(&|r| r.avg),
            forget: col(&|r| r.forget.unwrap_or(0.0)),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn m(rows: &[&[Option<f64>]]) -> ScoreMatrix {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn forgetting_example() {
        let s = m(&[&[Some(60.0), None], &[Some(50.0), Some(30.0)], &[Some(40.0), Some(35.0)]]);
        let (f, ex) = metric_forget(&s).unwrap();
        assert!((f - 7.5).abs() < 1e-12);
        assert!(ex.is_empty());
        let s = m(&[&[Some(60.0)], &[Some(50.0)]]);
        assert_eq!(metric_forget(&s).unwrap().0, 10.0);
        let s = m(&[&[Some(60.0), None], &[Some(70.0), Some(10.0)]]);
        let (f, ex) = metric_forget(&s).unwrap();
        assert_eq!((f, ex), (-10.0, vec![1]));
        assert!(metric_forget(&m(&[&[Some(1.0)]])).is_err());
    }

    #[test]
    fn average_example() {
        let s = m(&[&[Some(40.0)], &[Some(50.0)], &[Some(45.0)]]);
        assert_eq!(metric_avg(&s).unwrap(), 45.0);
        let s = m(&[&[Some(30.0), Some(50.0)]]);
        assert_eq!(metric_avg(&s).unwrap(), 40.0);
    }

    #[test]
    fn rotation_tolerance_wraps() {
        let t = ActionTarget {
            translation: [3, 3, 3],
            rotation: [0, 10, 71],
            gripper: 1,
            collision: 0,
        };
        let mut p = t;
        p.rotation = [71, 11, 0];
        p.translation = [4, 2, 3];
        assert!(keyframe_success(&p, &t, 72));
        p.rotation[1] = 12;
        assert!(!keyframe_success(&p, &t, 72));
        let mut q = t;
        q.translation[0] = 5;
        assert!(!keyframe_success(&q, &t, 72));
        q = t;
        q.gripper = 0;
        assert!(!keyframe_success(&q, &t, 72));
    }

    #[test]
    fn report_splits() {
        let s = m(&[
            &[Some(80.0), Some(60.0), None],
            &[Some(70.0), Some(50.0), Some(30.0)],
        ]);
        let r = RunReport::new("x", 0, 1, 2, vec![vec![0, 1], vec![2]], s).unwrap();
        assert_eq!(r.base, 60.0);
        assert_eq!(r.novel, 30.0);
        assert_eq!(r.all, 50.0);
        assert_eq!(r.avg, 60.0);
        assert_eq!(r.forget, Some(10.0));
        assert_eq!(r.forget_excluded, vec![2]);
        // All is the count-weighted combination of Base and Novel.
        assert!((r.all - (2.0 * r.base + r.novel) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_aggregates_and_checks_suites() {
        let mk = |seed: u64, all: f64| {
            let s = m(&[&[Some(all)]]);
            RunReport::new("ours", seed, 0, seed, vec![vec![0]], s).unwrap()
        };
        let mut runs = BTreeMap::new();
        runs.insert("ours".into(), vec![mk(0, 6.0), mk(1, 8.0), mk(2, 10.0)]);
        runs.insert("ft".into(), vec![mk(0, 1.0), mk(1, 1.0), mk(2, 1.0)]);
        let rows = compare_runs(&runs).unwrap();
        let ours = rows.iter().find(|r| r.method == "ours").unwrap();
        assert_eq!(ours.all, Stat { mean: 8.0, min: 6.0, max: 10.0 });
        runs.insert("er".into(), vec![mk(5, 1.0)]);
        assert_eq!(compare_runs(&runs).unwrap_err(), EvalError::SuiteMismatch);
    }
}
