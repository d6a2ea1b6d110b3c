use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfql::harness::{
    compare_reports, load_reports, run_experiment_with, sweep_seeds, sweep_to_dir, write_comparison_csv,
    write_run_outputs, Comparison, RunOptions,
};
use cfql::policy::Algorithm;
use cfql::rl::QTable;
use cfql::scenario::Scenario;
use cfql::{Error, Result};

#[derive(Parser)]
#[command(name = "cfql", version, about = "CF, Q-learning and CF-QL recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one seed.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_algorithm)]
        algo: Algorithm,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        /// Recommendations per trial (defaults to the scenario's n_recommend).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        save_qtable: Option<PathBuf>,
        /// Start from a saved Q-table instead of an empty one.
        #[arg(long)]
        load_qtable: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run all three algorithms over a number of seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a directory of runs and compare the algorithms.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::File { path: path.clone(), source })
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::File { path: path.clone(), source })
}

fn print_comparison(c: &Comparison) {
    println!("scenario {} over {} seeds", c.scenario, c.seeds.len());
    println!("{:>9}  {:>6} {:>6} {:>6}  {:>8} {:>8}", "trials", "cf", "ql", "cfql", "d(cf)", "d(ql)");
    for iv in &c.intervals {
        println!(
            "{:>4}-{:<4}  {:>6.3} {:>6.3} {:>6.3}  {:>+8.3} {:>+8.3}",
            iv.interval_start,
            iv.interval_end,
            iv.cf.mean,
            iv.ql.mean,
            iv.cfql.mean,
            iv.delta_cfql_cf,
            iv.delta_cfql_ql
        );
    }
    if let Some(cs) = &c.cold_start {
        println!(
            "cold start, trials {}-{}: cfql {:.3} vs ql {:.3}, p = {:.4} -> {}",
            cs.first_trial,
            cs.last_trial,
            cs.cfql_mean,
            cs.ql_mean,
            cs.p_value,
            if cs.holds { "holds" } else { "fails" }
        );
    }
    if let Some(lo) = &c.late_ordering {
        println!(
            "late ordering, trials {}-{}: cfql {:.3} vs cf {:.3}, ql {:.3} -> {}",
            lo.first_trial,
            lo.last_trial,
            lo.cfql_mean,
            lo.cf_mean,
            lo.ql_mean,
            if lo.holds { "holds" } else { "fails" }
        );
    }
    println!("verdict: {}", c.label.as_str());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, algo, trials, seed, n, save_qtable, load_qtable, out } => {
            let scenario = Scenario::from_path(&scenario)?;
            let n_recommend = n.unwrap_or(scenario.n_recommend);
            if n_recommend == 0 || n_recommend > scenario.actions.len() {
                return Err(Error::TooManyRecommendations {
                    requested: n_recommend,
                    available: scenario.actions.len(),
                });
            }
            let initial_table = match &load_qtable {
                Some(p) => Some(QTable::load(open(p)?, &scenario.space, &scenario.actions, scenario.rl)?),
                None => None,
            };
            let opts = RunOptions { trials: Some(trials), n_recommend: Some(n_recommend), initial_table };
            let run = run_experiment_with(&scenario, algo, seed, &opts)?;
            let manifest = write_run_outputs(&out, &scenario, &run, n_recommend)?;
            if let Some(p) = &save_qtable {
                let mut w = create(p)?;
                run.q_table.save(&mut w, &scenario.space, &scenario.actions)?;
                w.flush()?;
            }
            for iv in &run.report.intervals {
                println!("{:>4}-{:<4} {:.3}", iv.interval_start, iv.interval_end, iv.precision);
            }
            println!(
                "{} seed {}: overall precision {:.3} -> {}",
                algo,
                seed,
                run.report.overall,
                out.join(&manifest.precision_csv).display()
            );
        }
        Command::Sweep { scenario, seeds, out } => {
            let scenario = Scenario::from_path(&scenario)?;
            if seeds == 0 {
                return Err(Error::EmptyInput("sweep seeds"));
            }
            let seeds = sweep_seeds(&scenario, seeds);
            let runs = sweep_to_dir(&scenario, &seeds, &out)?;
            println!("{} runs written to {}", runs.len(), out.display());
        }
        Command::Report { input, out } => {
            let reports = load_reports(&input)?;
            let cmp = compare_reports(&reports)?;
            let mut w = create(&out)?;
            write_comparison_csv(&mut w, &cmp)?;
            w.flush()?;
            print_comparison(&cmp);
        }
    }
    Ok(())
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
