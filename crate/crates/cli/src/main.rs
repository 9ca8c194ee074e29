//! Command-line experiment driver: convergence studies across ε-refinement,
//! standalone cell solves, and configuration validation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use homfem_cli::config::{
    parse_grids, validate_config, ProblemKind, StudyConfig, FULL_TABLE_GRIDS,
};
use homfem_cli::study;

#[derive(Parser)]
#[command(
    name = "homfem",
    about = "Periodic homogenization studies for contact and Robin problems on the unit square"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (flat key = value format); defaults to the
    /// reference experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid list, e.g. "16x32,32x32" (overrides the config).
    #[arg(long)]
    grids: Option<String>,
    /// Problem kind: contact | robin (overrides the config).
    #[arg(long)]
    problem: Option<ProblemKind>,
    /// Keep the linear Robin boundary mass on the left-hand side of the
    /// fixed-point solves.
    #[arg(long)]
    semi_implicit: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<StudyConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
                StudyConfig::parse(&text)?
            }
            None => StudyConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(grids) = &self.grids {
            config.grids = parse_grids(grids)?;
        }
        if let Some(problem) = self.problem {
            config.problem = problem;
        }
        if self.semi_implicit {
            config.semi_implicit = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the fine-vs-homogenized convergence study and write
    /// study.csv / summary.txt.
    Study {
        #[command(flatten)]
        common: ConfigArgs,
        /// Use the full-resolution grid rows
        /// (16x128, 32x64, 64x32, 128x16); substantially slower.
        #[arg(long)]
        full_table: bool,
        /// Also write the fine and homogenized nodal fields as CSV.
        #[arg(long)]
        dump_solutions: bool,
    },
    /// Solve only the cell problems over a list of resolutions and
    /// tabulate the homogenized tensor (writes cell.csv and the corrector
    /// caches).
    Cell {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated cell resolutions, e.g. "8,16,32,64".
        #[arg(long, default_value = "8,16,32,64")]
        resolutions: String,
    },
    /// Check the configuration against every solver assumption and list
    /// the violations.
    Validate {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Study {
            common,
            full_table,
            dump_solutions,
        } => {
            let mut config = common.resolve()?;
            if full_table {
                config.grids = FULL_TABLE_GRIDS.to_vec();
            }
            if dump_solutions {
                config.dump_solutions = true;
            }
            let outcome = study::run_study(&config)?;
            for row in &outcome.rows {
                println!(
                    "N={:<4} M={:<4} ERR0={:.5e} ERR1={:.5e} ERR2={:.5e} ({:.1}s)",
                    row.n, row.m, row.err0, row.err1, row.err2, row.wall_seconds
                );
            }
            println!(
                "rates: ERR0 {}  ERR1 {}  ERR2 {}",
                rate(outcome.rates[0]),
                rate(outcome.rates[1]),
                rate(outcome.rates[2])
            );
            println!(
                "wrote {} and {}",
                outcome.csv_path.display(),
                outcome.summary_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Cell {
            common,
            resolutions,
        } => {
            let config = common.resolve()?;
            let list: Vec<usize> = resolutions
                .split(',')
                .map(|s| s.trim().parse().context("resolution list"))
                .collect::<Result<_>>()?;
            let rows = study::run_cell_only(&config, &list)?;
            for row in rows {
                println!(
                    "M={:<4} A = [{:.8} {:.2e}; {:.2e} {:.8}]  increment={}",
                    row.m,
                    row.a_hat[0][0],
                    row.a_hat[0][1],
                    row.a_hat[1][0],
                    row.a_hat[1][1],
                    row.increment.map_or("-".into(), |d| format!("{d:.3e}"))
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { common } => {
            let config = common.resolve()?;
            let violations = validate_config(&config);
            if violations.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn rate(r: Option<f64>) -> String {
    r.map_or("-".into(), |r| format!("{r:.3}"))
}
