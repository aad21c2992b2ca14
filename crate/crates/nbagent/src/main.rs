use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nbagent::bench::{run_bench, RunDone};
use nbagent::config::{self, ConfigError};
use nbagent::core::synthbench::generate_suite;
use nbagent::core::trainer::{Method, RunConfig};
use nbagent::manifest::SuiteManifest;
use nbagent::session::{self, TrainOptions, TrainOutcome};

#[derive(Parser)]
#[command(name = "nbagent", version, about = "Never-ending behavior cloning on a synthetic desk benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write checkpoints, the loss log and report.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Preset switches: ours, er, ft, no-sep, no-srd, no-ssr.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps and write checkpoint-interrupted.bin.
        #[arg(long)]
        interrupt_after: Option<usize>,
        /// Write PPM images of an observed and a rendered view after each task.
        #[arg(long)]
        dump_views: bool,
    },
    /// Score a checkpoint on the test episodes of a suite manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        /// Also write the scores as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods over seeds 0..n and write comparison.csv/json.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "ours,er,ft,no-sep,no-srd,no-ssr")]
        methods: Vec<String>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Exit nonzero if any ordering gate fails.
        #[arg(long)]
        gate: bool,
    },
    /// Write the manifest of the suite a config and seed generate.
    Manifest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect a checkpoint.
    Debug {
        #[command(subcommand)]
        what: DebugCommand,
    },
}

#[derive(Subcommand)]
enum DebugCommand {
    /// Print bank occupancy and pairwise cosines of the occupied rows.
    Bank {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => config::load(p)?,
        None => config::resolve(None, config::env_overrides())?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_method(name: &str) -> Result<Method, String> {
    Method::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method '{name}' (known: {})", known.join(", "))
    })
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            method,
            resume,
            interrupt_after,
            dump_views,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(m) = method {
                cfg = cfg.with_method(parse_method(&m)?);
            }
            let opts = TrainOptions {
                out_dir: out.clone(),
                resume,
                interrupt_after,
                dump_views,
            };
            match session::train(cfg, &opts)? {
                TrainOutcome::Finished(r) => {
                    println!(
                        "{} seed {}: base {:.1} novel {:.1} all {:.1} avg {:.1} forget {}",
                        r.method,
                        r.seed,
                        r.base,
                        r.novel,
                        r.all,
                        r.avg,
                        r.forget.map_or("n/a".into(), |f| format!("{f:.1}"))
                    );
                    println!("wrote {}", out.join("report.json").display());
                }
                TrainOutcome::Interrupted { checkpoint } => {
                    println!("interrupted; resume with --resume {}", checkpoint.display());
                }
            }
        }
        Command::Eval { checkpoint, suite, out } => {
            let manifest = SuiteManifest::load(&suite)?;
            let summary = session::evaluate_checkpoint(&checkpoint, &manifest)?;
            for s in &summary.scores {
                println!("skill {}: {:.1}", s.skill, s.score);
            }
            println!("mean {:.1} (tasks through {})", summary.mean, summary.through_task + 1);
            if let Some(p) = out {
                std::fs::write(p, nbagent::artifacts::to_json_text(&summary)?)?;
            }
        }
        Command::Bench {
            config,
            seeds,
            methods,
            out,
            threads,
            gate,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let methods = methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>, _>>()?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let progress = |d: &RunDone| {
                eprintln!(
                    "{:>7} seed {}: all {:5.1} forget {:>6} ({:.1}s)",
                    d.method,
                    d.seed,
                    d.report.all,
                    d.report.forget.map_or("n/a".into(), |f| format!("{f:.1}")),
                    d.elapsed.as_secs_f64()
                );
            };
            let outcome = run_bench(&cfg, &seeds, &methods, threads, &progress)?;
            outcome.write(&out)?;
            for r in &outcome.rows {
                println!(
                    "{:>7}  base {:5.1}  novel {:5.1}  all {:5.1}  avg {:5.1}  forget {:5.1}",
                    r.method, r.base.mean, r.novel.mean, r.all.mean, r.avg.mean, r.forget.mean
                );
            }
            for g in &outcome.gates {
                let rel = match g.relation {
                    nbagent::bench::Relation::Less => "<",
                    nbagent::bench::Relation::AtLeast => ">=",
                };
                println!(
                    "[{}] {}: {}({}) {:.2} {rel} {}({}) {:.2}",
                    if g.pass { "PASS" } else { "FAIL" },
                    g.name,
                    g.metric,
                    g.left,
                    g.left_value,
                    g.metric,
                    g.right,
                    g.right_value
                );
            }
            println!("wrote {}", out.display());
            if gate && !outcome.all_gates_pass() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Manifest { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let suite = generate_suite(&cfg.suite, cfg.seed)?;
            std::fs::write(&out, SuiteManifest::describe(&suite).to_json()?)?;
            println!("wrote {}", out.display());
        }
        Command::Debug {
            what: DebugCommand::Bank { checkpoint },
        } => {
            let (meta, c) = session::read_state(&checkpoint)?;
            let t = c.entries.get("bank").ok_or("checkpoint has no bank entry")?;
            let bank = nbagent::core::sep::SemanticBank::from_tensor(t, meta.config.delta)?;
            println!(
                "occupancy {}/{} (threshold {})",
                bank.occupancy(),
                bank.capacity(),
                bank.threshold()
            );
            let cos = bank.pairwise_cosines();
            for (i, row) in cos.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:7.4}")).collect();
                println!("row {i:2}: {}", cells.join(" "));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
