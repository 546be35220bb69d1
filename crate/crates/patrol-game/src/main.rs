//! Thin command-line front end over the `patrol_game` library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use patrol_game::experiments::{self, report, ScenarioDistribution};
use patrol_game::optim::mix_seed;
use patrol_game::robust_game::{self, ObjectiveMode, SolverConfig};

#[derive(Parser)]
#[command(name = "patrol-game", version, about = "Robust patrol-allocation solver for contested fisheries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Robust,
    Nonrobust,
}

impl From<ModeArg> for ObjectiveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Robust => ObjectiveMode::Robust,
            ModeArg::Nonrobust => ObjectiveMode::NonRobust,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario file; writes the solution and the solve trace.
    Solve {
        /// Scenario TOML file.
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Expensive-sample budget.
        #[arg(long, default_value_t = 300)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Red's tolerance; defaults to the scenario file's value.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Robust/non-robust objective blend (1 = pure robust).
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Robust)]
        mode: ModeArg,
        /// Continue an interrupted run from its trace file.
        #[arg(long)]
        resume: bool,
    },
    /// Reproduce the bundled worked example and compare reference values.
    Example1 {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also re-solve both formulations from scratch.
        #[arg(long)]
        resolve: bool,
        #[arg(long, default_value_t = 300)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
    },
    /// Sample scenarios, solve both formulations, report v/w percentiles.
    Batch {
        /// Distribution TOML; defaults cover the standard study ranges.
        #[arg(long)]
        dist: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 2)]
        parallelism: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild CSVs and charts from a rows CSV or a trace JSONL.
    Report {
        /// `rows.csv` from a batch, or a `.jsonl` solve trace.
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> patrol_game::Result<()> {
    match cli.command {
        Command::Solve {
            scenario,
            out,
            samples,
            seed,
            epsilon,
            lambda,
            restarts,
            mode,
            resume,
        } => {
            let sc = experiments::load_scenario(&scenario)?;
            let cfg = SolverConfig {
                max_samples: samples,
                rng_seed: seed,
                epsilon: epsilon.unwrap_or(sc.epsilon),
                lambda,
                n_restarts: restarts,
                ..Default::default()
            };
            std::fs::create_dir_all(&out)?;
            eprintln!("fitting equilibrium surrogates ({} fisheries)...", sc.k);
            let models = experiments::fit_models(&sc, mix_seed(seed, experiments::MODEL_SEED_SALT))?;
            let trace_path = out.join("trace.jsonl");
            let progress = |done: usize, total: usize| {
                if done % 10 == 0 || done == total {
                    eprintln!("  sample {done}/{total}");
                }
            };
            let (alloc, trace) = if resume {
                eprintln!("resuming from {}...", trace_path.display());
                robust_game::resume_solve_to_file(&sc, &models.equilibrium, &trace_path, Some(&progress))?
            } else {
                robust_game::solve_to_file(
                    &sc,
                    &models.equilibrium,
                    &cfg,
                    mode.into(),
                    &trace_path,
                    Some(&progress),
                )?
            };
            let report = trace.final_report.as_ref().expect("finished run");
            let solution = serde_json::json!({
                "allocation": alloc.values(),
                "objective": report.reported_objective,
                "source": report.reported_source,
            });
            let solution_path = out.join("solution.json");
            std::fs::write(&solution_path, serde_json::to_string_pretty(&solution).unwrap())?;
            println!("allocation: {:?}", alloc.values());
            println!("objective:  {:.2}", report.reported_objective);
            println!("trace:      {}", trace_path.display());
            println!("solution:   {}", solution_path.display());
            Ok(())
        }
        Command::Example1 {
            out,
            resolve,
            samples,
            seed,
            restarts,
        } => {
            let cfg = SolverConfig {
                max_samples: samples,
                rng_seed: seed,
                n_restarts: restarts,
                ..Default::default()
            };
            eprintln!("fitting equilibrium surrogates and evaluating the fixed solutions...");
            let rep = experiments::run_example1(&cfg, resolve)?;
            std::fs::create_dir_all(&out)?;
            let csv_path = out.join("example1.csv");
            report::emit_example1_csv(&rep, &csv_path)?;
            println!("{:<40} {:>18} {:>18}", "quantity", "computed", "reference");
            for (name, computed, reference) in [
                (
                    "robust utility, robust solution",
                    rep.fixed_robust.blue_utility_adversarial,
                    rep.reference.robust_utility_robust_solution,
                ),
                (
                    "robust utility, non-robust solution",
                    rep.fixed_nonrobust.blue_utility_adversarial,
                    rep.reference.robust_utility_nonrobust_solution,
                ),
                (
                    "non-robust utility, robust solution",
                    rep.fixed_robust.blue_utility_optimal,
                    rep.reference.nonrobust_utility_robust_solution,
                ),
                (
                    "non-robust utility, non-robust solution",
                    rep.fixed_nonrobust.blue_utility_optimal,
                    rep.reference.nonrobust_utility_nonrobust_solution,
                ),
            ] {
                println!("{name:<40} {computed:>18.2} {reference:>18.2}");
            }
            println!(
                "{:<40} {:>17.2}% {:>17.2}%",
                "v",
                rep.v * 100.0,
                rep.reference.v * 100.0
            );
            println!("{:<40} {:>17.2}%", "w", rep.w * 100.0);
            if let Some(res) = &rep.resolved {
                println!("\nre-solved metrics: v = {:.2}%, w = {:.2}%", res.metrics.v * 100.0, res.metrics.w * 100.0);
            }
            println!("\nwrote {}", csv_path.display());
            Ok(())
        }
        Command::Batch {
            dist,
            n,
            seed,
            samples,
            epsilon,
            lambda,
            parallelism,
            restarts,
            out,
        } => {
            let mut distribution = match dist {
                Some(path) => experiments::load_distribution(&path)?,
                None => ScenarioDistribution::default(),
            };
            if let Some(e) = epsilon {
                distribution.epsilon = e;
            }
            let cfg = SolverConfig {
                max_samples: samples,
                n_restarts: restarts,
                lambda,
                ..Default::default()
            };
            eprintln!(
                "running {n} scenarios (k = {}, {} samples each, parallelism {parallelism})...",
                distribution.k, samples
            );
            let batch = experiments::run_batch(&distribution, n, &cfg, seed, parallelism)?;
            let files = report::emit_report(&batch, &out)?;
            let ok = batch.rows.iter().filter(|r| r.status == "ok").count();
            println!("{ok}/{n} scenarios succeeded");
            if !batch.percentiles.is_empty() {
                println!("{:>10} {:>10} {:>10}", "percentile", "v (%)", "w (%)");
                for row in &batch.percentiles {
                    println!(
                        "{:>10.0} {:>10.2} {:>10.2}",
                        row.percentile,
                        row.v * 100.0,
                        row.w * 100.0
                    );
                }
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Report { input, out } => {
            let is_trace = input
                .extension()
                .map(|e| e == "jsonl")
                .unwrap_or(false);
            if is_trace {
                let trace = robust_game::trace::load_trace(&input)?;
                let files = report::emit_trace_report(&trace, &out)?;
                println!(
                    "{} samples, {} mode",
                    trace.samples.len(),
                    match trace.mode {
                        ObjectiveMode::Robust => "robust",
                        ObjectiveMode::NonRobust => "non-robust",
                    }
                );
                for f in files {
                    println!("wrote {}", f.display());
                }
            } else {
                let rows = report::load_rows_csv(&input)?;
                let percentiles = experiments::percentile_table(&rows);
                let batch = experiments::BatchReport {
                    rows,
                    timings: Vec::new(),
                    percentiles,
                };
                let files = report::emit_report(&batch, &out)?;
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(())
        }
    }
}
