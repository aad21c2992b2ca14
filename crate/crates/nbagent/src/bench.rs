//! Multi-seed, multi-method comparison runs and their ordering gates.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nbagent_core::evalkit::{compare_runs, ComparisonRow, EvalError, RunReport, Stat};
use nbagent_core::trainer::{Method, RunConfig, TrainError, Trainer};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{method} seed {seed}: {source}")]
    Run {
        method: String,
        seed: u64,
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no methods or seeds requested")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = ">=")]
    AtLeast,
}

/// An ordering between the seed-mean of one column for two methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub metric: String,
    pub left: String,
    pub relation: Relation,
    pub right: String,
    pub left_value: f64,
    pub right_value: f64,
    pub pass: bool,
}

const GATES: [(&str, &str, Method, Relation, Method); 4] = [
    ("forgetting below fine-tuning", "forget", Method::Ours, Relation::Less, Method::Ft),
    ("all at least replay", "all", Method::Ours, Relation::AtLeast, Method::Er),
    ("novel at least without routing", "novel", Method::Ours, Relation::AtLeast, Method::NoSep),
    ("base at least without distillation", "base", Method::Ours, Relation::AtLeast, Method::NoSrd),
];

fn column(row: &ComparisonRow, metric: &str) -> Stat {
    match metric {
        "base" => row.base,
        "novel" => row.novel,
        "all" => row.all,
        "avg" => row.avg,
        _ => row.forget,
    }
}

/// Gates whose two methods are both present in `rows`.
pub fn evaluate_gates(rows: &[ComparisonRow]) -> Vec<Gate> {
    let find = |m: Method| rows.iter().find(|r| r.method == m.name());
    GATES
        .iter()
        .filter_map(|&(name, metric, l, rel, r)| {
            let (lr, rr) = (find(l)?, find(r)?);
            let (a, b) = (column(lr, metric).mean, column(rr, metric).mean);
            let pass = match rel {
                Relation::Less => a < b,
                Relation::AtLeast => a >= b,
            };
            Some(Gate {
                name: name.into(),
                metric: metric.into(),
                left: l.name().into(),
                relation: rel,
                right: r.name().into(),
                left_value: a,
                right_value: b,
                pass,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub rows: Vec<ComparisonRow>,
    pub gates: Vec<Gate>,
    pub runs: BTreeMap<String, Vec<RunReport>>,
}

impl BenchOutcome {
    pub fn all_gates_pass(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join("comparison.csv"))?;
        artifacts::write_comparison_csv(std::io::BufWriter::new(f), &self.rows)?;
        std::fs::write(dir.join("comparison.json"), artifacts::to_json_text(self)?)?;
        Ok(())
    }
}

/// One finished run, for progress reporting.
#[derive(Clone, Debug)]
pub struct RunDone {
    pub method: &'static str,
    pub seed: u64,
    pub elapsed: Duration,
    pub report: RunReport,
}

/// Runs every (seed, method) pair on up to `threads` worker threads. The
/// dataset of a seed is built once and shared by its methods. Results do not
/// depend on the thread count.
pub fn run_bench(
    base: &RunConfig,
    seeds: &[u64],
    methods: &[Method],
    threads: usize,
    progress: &(dyn Fn(&RunDone) + Sync),
) -> Result<BenchOutcome, BenchError> {
    if seeds.is_empty() || methods.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut data = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        data.push(Arc::new(Trainer::dataset(&cfg)?));
    }
    let jobs: Vec<(usize, Method)> = (0..seeds.len())
        .flat_map(|s| methods.iter().map(move |&m| (s, m)))
        .collect();
    let results: Mutex<Vec<Option<Result<RunReport, BenchError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(s, m)) = jobs.get(i) else { break };
                let seed = seeds[s];
                let started = Instant::now();
                let mut cfg = base.clone().with_method(m);
                cfg.seed = seed;
                let out = Trainer::new(cfg, data[s].clone())
                    .and_then(|t| {
                        let mut st = t.init_state()?;
                        t.run(&mut st)
                    })
                    .map_err(|source| BenchError::Run {
                        method: m.name().into(),
                        seed,
                        source,
                    });
                if let Ok(report) = &out {
                    progress(&RunDone {
                        method: m.name(),
                        seed,
                        elapsed: started.elapsed(),
                        report: report.clone(),
                    });
                }
                results.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let mut runs: BTreeMap<String, Vec<RunReport>> = BTreeMap::new();
    for (&(_, m), r) in jobs.iter().zip(results.into_inner().expect("no worker panicked")) {
        let report = r.expect("every job ran")?;
        runs.entry(m.name().to_string()).or_default().push(report);
    }
    let rows = compare_runs(&runs)?;
    let gates = evaluate_gates(&rows);
    Ok(BenchOutcome { rows, gates, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, all: f64, forget: f64) -> ComparisonRow {
        let s = |x| Stat { mean: x, min: x, max: x };
        ComparisonRow {
            method: method.into(),
            seeds: vec![0],
            base: s(all),
            novel: s(all),
            all: s(all),
            avg: s(all),
            forget: s(forget),
        }
    }

    #[test]
    fn gates_follow_present_methods() {
        let rows = vec![row("ours", 50.0, 5.0), row("ft", 20.0, 40.0), row("er", 50.0, 10.0)];
        let gates = evaluate_gates(&rows);
        assert_eq!(gates.len(), 2);
        assert!(gates.iter().all(|g| g.pass));
        let rows = vec![row("ours", 50.0, 40.0), row("ft", 20.0, 40.0)];
        let gates = evaluate_gates(&rows);
        assert_eq!(gates.len(), 1);
        assert!(!gates[0].pass);
    }
}
