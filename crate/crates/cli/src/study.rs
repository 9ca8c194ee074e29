//! Study execution: corrector solves (with on-disk caching), fine and
//! homogenized solves per grid, error metrics, and the CSV / summary
//! outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use homfem::cell::{solve_correctors, CellCoefficient, CorrectorSet};
use homfem::contact::{
    fixed_point_solve_seeded, robin_solve, solve_homogenized, write_solution_csv,
    CoefficientSource, ContactProblemSpec, FixedPointConfig,
};
use homfem::linsolve::SolverConfig;
use homfem::mesh::{build_domain_mesh, BoundaryPartition};
use homfem::metrics::{error_report, estimate_rate, pairwise_rates};

use crate::config::{validate_config, ProblemKind, StudyConfig};

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub n: usize,
    pub m: usize,
    pub err0: f64,
    pub err1: f64,
    pub err2: f64,
    /// Fixed-point iterations (contact) or CG iterations (Robin) of the
    /// fine solve.
    pub fine_iters: usize,
    pub homog_iters: usize,
    pub wall_seconds: f64,
    pub fine_seconds: f64,
    pub homog_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    /// Least-squares rates in ε for (ERR0, ERR1, ERR2), per column when
    /// estimable.
    pub rates: [Option<f64>; 3],
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

fn corrector_cache_path(out_dir: &Path, m: usize) -> PathBuf {
    out_dir.join(format!("correctors_M{m}.txt"))
}

/// Loads the cached corrector set when it matches the requested problem,
/// otherwise solves and rewrites the cache. Returns whether the cache hit.
pub fn load_or_solve_correctors(
    coefficient: &CellCoefficient,
    m: usize,
    cg_tol: f64,
    out_dir: &Path,
) -> Result<(CorrectorSet, bool)> {
    let path = corrector_cache_path(out_dir, m);
    if let Ok(file) = File::open(&path) {
        if let Ok(set) = CorrectorSet::load_text(&mut BufReader::new(file)) {
            if set.resolution == m && set.coefficient == *coefficient {
                return Ok((set, true));
            }
        }
    }
    let cfg = SolverConfig {
        rel_tolerance: cg_tol,
        ..Default::default()
    };
    let set = solve_correctors(coefficient, m, &cfg)
        .map_err(|e| anyhow!("corrector solve at M = {m}: {e}"))?;
    let mut writer =
        BufWriter::new(File::create(&path).with_context(|| format!("create {}", path.display()))?);
    set.save_text(&mut writer)?;
    writer.flush()?;
    Ok((set, false))
}

fn write_csv_header(w: &mut impl Write) -> Result<()> {
    writeln!(w, "N,M,ERR0,ERR1,ERR2,fine_iters,homog_iters,wall_seconds")?;
    Ok(())
}

fn write_csv_row(w: &mut impl Write, row: &StudyRow) -> Result<()> {
    writeln!(
        w,
        "{},{},{:.5e},{:.5e},{:.5e},{},{},{:.3}",
        row.n,
        row.m,
        row.err0,
        row.err1,
        row.err2,
        row.fine_iters,
        row.homog_iters,
        row.wall_seconds
    )?;
    Ok(())
}

fn rate_cell(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{r:.3}"),
        None => "-".to_string(),
    }
}

/// Runs the configured study: one row per (N, M), rate estimates at the
/// end. On a solve failure the rows computed so far remain in the CSV and
/// the error is propagated (nonzero exit status).
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        bail!(
            "configuration is invalid:\n{}",
            violations
                .iter()
                .map(|v| format!("  - {v}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
    }
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("create {}", config.out_dir.display()))?;
    let coefficient = config.coefficient()?;

    let csv_path = config.out_dir.join("study.csv");
    let summary_path = config.out_dir.join("summary.txt");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    write_csv_header(&mut csv)?;

    let fp_cfg = FixedPointConfig {
        tol: config.tol,
        max_iterations: config.max_iter,
        semi_implicit: config.semi_implicit,
        linear: SolverConfig {
            rel_tolerance: config.cg_tol,
            ..Default::default()
        },
    };

    let mut rows: Vec<StudyRow> = Vec::new();
    let run = |rows: &mut Vec<StudyRow>, csv: &mut BufWriter<File>| -> Result<()> {
        for &(n, m) in &config.grids {
            let t_row = Instant::now();
            let (correctors, _cached) =
                load_or_solve_correctors(&coefficient, m, config.cg_tol, &config.out_dir)?;
            let mesh = build_domain_mesh(n, m, BoundaryPartition::contact())
                .map_err(|e| anyhow!("grid {n}x{m}: {e}"))?;

            // The homogenized problem runs first so its solution can seed
            // the first inner solve of the fine problem on the shared grid.
            let t_homog = Instant::now();
            let (u_homog, homog_iters) = match config.problem {
                ProblemKind::Contact => {
                    let sol = solve_homogenized(
                        &mesh,
                        correctors.a_hat,
                        config.f,
                        config.g,
                        config.alpha,
                        &fp_cfg,
                    )
                    .map_err(|e| anyhow!("homogenized solve at {n}x{m}: {e}"))?;
                    (sol.u, sol.report.iterations)
                }
                ProblemKind::Robin => {
                    let source = CoefficientSource::Homogenized(correctors.a_hat);
                    let sol = robin_solve(
                        &mesh,
                        &source,
                        config.alpha,
                        config.f,
                        config.g,
                        &fp_cfg.linear,
                    )
                    .map_err(|e| anyhow!("homogenized Robin solve at {n}x{m}: {e}"))?;
                    (sol.u, sol.cg_iterations)
                }
            };
            let homog_seconds = t_homog.elapsed().as_secs_f64();

            let t_fine = Instant::now();
            let (u_fine, fine_iters) = match config.problem {
                ProblemKind::Contact => {
                    let spec = ContactProblemSpec {
                        f: config.f,
                        g: config.g,
                        alpha: config.alpha,
                        coefficient: CoefficientSource::Fine {
                            coefficient,
                            n_cells: n,
                        },
                    };
                    let sol = fixed_point_solve_seeded(&spec, &mesh, &fp_cfg, Some(&u_homog))
                        .map_err(|e| anyhow!("fine solve at {n}x{m}: {e}"))?;
                    (sol.u, sol.report.iterations)
                }
                ProblemKind::Robin => {
                    let source = CoefficientSource::Fine {
                        coefficient,
                        n_cells: n,
                    };
                    let sol = robin_solve(
                        &mesh,
                        &source,
                        config.alpha,
                        config.f,
                        config.g,
                        &fp_cfg.linear,
                    )
                    .map_err(|e| anyhow!("fine Robin solve at {n}x{m}: {e}"))?;
                    (sol.u, sol.cg_iterations)
                }
            };
            let fine_seconds = t_fine.elapsed().as_secs_f64();

            let errors = error_report(&u_fine, &u_homog, &correctors, &mesh, n)
                .map_err(|e| anyhow!("metrics at {n}x{m}: {e}"))?;

            if config.dump_solutions {
                for (name, field) in [("fine", &u_fine), ("homog", &u_homog)] {
                    let path = config
                        .out_dir
                        .join(format!("solution_{name}_N{n}_M{m}.csv"));
                    let mut w = BufWriter::new(File::create(path)?);
                    write_solution_csv(&mesh, field, &mut w)?;
                }
            }

            let row = StudyRow {
                n,
                m,
                err0: errors.err0,
                err1: errors.err1,
                err2: errors.err2,
                fine_iters,
                homog_iters,
                wall_seconds: t_row.elapsed().as_secs_f64(),
                fine_seconds,
                homog_seconds,
            };
            write_csv_row(csv, &row)?;
            csv.flush()?;
            rows.push(row);
        }
        Ok(())
    };
    let outcome = run(&mut rows, &mut csv);

    let mut rates = [None, None, None];
    if rows.len() >= 2 {
        for (k, pick) in [
            |r: &StudyRow| r.err0,
            |r: &StudyRow| r.err1,
            |r: &StudyRow| r.err2,
        ]
        .iter()
        .enumerate()
        {
            let samples: Vec<(f64, f64)> =
                rows.iter().map(|r| (1.0 / r.n as f64, pick(r))).collect();
            rates[k] = estimate_rate(&samples).ok();
        }
    }
    writeln!(
        csv,
        "rate,lsq,{},{},{},,,",
        rate_cell(rates[0]),
        rate_cell(rates[1]),
        rate_cell(rates[2])
    )?;
    csv.flush()?;

    write_summary(config, &rows, &rates, &summary_path, outcome.as_ref().err())?;
    outcome?;
    Ok(StudyOutcome {
        rows,
        rates,
        csv_path,
        summary_path,
    })
}

fn write_summary(
    config: &StudyConfig,
    rows: &[StudyRow],
    rates: &[Option<f64>; 3],
    path: &Path,
    failure: Option<&anyhow::Error>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "homfem study summary")?;
    writeln!(w, "problem = {}", config.problem)?;
    writeln!(
        w,
        "microstructure = {:?} kappa1={} kappa2={} rho={}",
        config.microstructure, config.kappa1, config.kappa2, config.rho
    )?;
    writeln!(
        w,
        "alpha={} f={} g={} tol={:e} cg_tol={:e} max_iter={} semi_implicit={}",
        config.alpha,
        config.f,
        config.g,
        config.tol,
        config.cg_tol,
        config.max_iter,
        config.semi_implicit
    )?;
    writeln!(w)?;
    writeln!(w, "gate checks: ok (validated before the run)")?;
    writeln!(w)?;
    writeln!(
        w,
        "{:>5} {:>5} {:>12} {:>12} {:>12} {:>11} {:>12} {:>9} {:>9}",
        "N", "M", "ERR0", "ERR1", "ERR2", "fine_iters", "homog_iters", "fine_s", "homog_s"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:>5} {:>5} {:>12.5e} {:>12.5e} {:>12.5e} {:>11} {:>12} {:>9.2} {:>9.2}",
            r.n,
            r.m,
            r.err0,
            r.err1,
            r.err2,
            r.fine_iters,
            r.homog_iters,
            r.fine_seconds,
            r.homog_seconds
        )?;
    }
    writeln!(w)?;
    writeln!(
        w,
        "least-squares rates in eps: ERR0 {}  ERR1 {}  ERR2 {}",
        rate_cell(rates[0]),
        rate_cell(rates[1]),
        rate_cell(rates[2])
    )?;
    for (label, pick) in [("ERR0", 0usize), ("ERR1", 1), ("ERR2", 2)] {
        let samples: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| {
                (
                    1.0 / r.n as f64,
                    match pick {
                        0 => r.err0,
                        1 => r.err1,
                        _ => r.err2,
                    },
                )
            })
            .collect();
        if samples.iter().all(|&(_, e)| e > 0.0) && samples.len() >= 2 {
            let pairs = pairwise_rates(&samples);
            let joined = pairs
                .iter()
                .map(|r| format!("{r:.3}"))
                .collect::<Vec<_>>()
                .join(", ");
            writeln!(w, "pairwise log2 rates {label}: {joined}")?;
        }
    }
    match failure {
        None => writeln!(w, "\nall solves converged")?,
        Some(e) => writeln!(w, "\nstudy aborted: {e}")?,
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CellRow {
    pub m: usize,
    pub a_hat: [[f64; 2]; 2],
    /// Frobenius distance to the previous row's tensor.
    pub increment: Option<f64>,
}

/// Solves (or loads) the correctors over a list of resolutions and tabulates
/// the homogenized tensor with its successive differences.
pub fn run_cell_only(config: &StudyConfig, resolutions: &[usize]) -> Result<Vec<CellRow>> {
    if resolutions.is_empty() {
        bail!("empty resolution list");
    }
    fs::create_dir_all(&config.out_dir)?;
    let coefficient = config.coefficient()?;
    let mut rows: Vec<CellRow> = Vec::new();
    for &m in resolutions {
        let (set, _) = load_or_solve_correctors(&coefficient, m, config.cg_tol, &config.out_dir)?;
        let increment = rows.last().map(|prev: &CellRow| {
            let mut sum = 0.0;
            for i in 0..2 {
                for l in 0..2 {
                    let d = set.a_hat[i][l] - prev.a_hat[i][l];
                    sum += d * d;
                }
            }
            sum.sqrt()
        });
        rows.push(CellRow {
            m,
            a_hat: set.a_hat,
            increment,
        });
    }
    let path = config.out_dir.join("cell.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "M,A11,A12,A21,A22,increment")?;
    for row in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.m,
            row.a_hat[0][0],
            row.a_hat[0][1],
            row.a_hat[1][0],
            row.a_hat[1][1],
            row.increment.map_or("-".into(), |d| format!("{d:.3e}"))
        )?;
    }
    w.flush()?;
    Ok(rows)
}
