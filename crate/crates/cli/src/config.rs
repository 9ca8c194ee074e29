//! Study configuration: a flat `key = value` text format with optional
//! `[section]` headers (organizational only, keys are global), plus the
//! validation gate that checks every assumption the solvers rely on.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use homfem::cell::CellCoefficient;
use homfem::mesh::BoundaryPartition;
use homfem::MicrostructureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Dirichlet / Neumann / Robin / partial-Robin contact problem solved
    /// by the fixed-point iteration.
    Contact,
    /// Linear Robin problem with α on the whole boundary.
    Robin,
}

impl FromStr for ProblemKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contact" => Ok(ProblemKind::Contact),
            "robin" => Ok(ProblemKind::Robin),
            other => bail!("unknown problem kind {other:?} (expected contact|robin)"),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Contact => "contact",
            ProblemKind::Robin => "robin",
        })
    }
}

impl clap::ValueEnum for ProblemKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[ProblemKind::Contact, ProblemKind::Robin]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(match self {
            ProblemKind::Contact => clap::builder::PossibleValue::new("contact"),
            ProblemKind::Robin => clap::builder::PossibleValue::new("robin"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicrostructureKind {
    /// Square inclusion `[rho, 1-rho]²` with value kappa2 in a kappa1
    /// matrix.
    Inclusion,
    /// Vertical laminate with values kappa1 / kappa2 on equal strips
    /// (closed-form homogenized tensor; mainly for verification).
    Laminate,
}

impl FromStr for MicrostructureKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inclusion" => Ok(MicrostructureKind::Inclusion),
            "laminate" => Ok(MicrostructureKind::Laminate),
            other => bail!("unknown microstructure {other:?} (expected inclusion|laminate)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub problem: ProblemKind,
    pub microstructure: MicrostructureKind,
    pub kappa1: f64,
    pub kappa2: f64,
    pub rho: f64,
    pub alpha: f64,
    pub f: f64,
    pub g: f64,
    /// (N, M) pairs: N cells per axis, M elements per cell per axis.
    pub grids: Vec<(usize, usize)>,
    /// Fixed-point relative update tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Linear-solver relative residual tolerance.
    pub cg_tol: f64,
    pub semi_implicit: bool,
    pub out_dir: PathBuf,
    pub dump_solutions: bool,
}

impl Default for StudyConfig {
    /// The reference experiment: α = 0.5, f = 1, g = 1, κ = (1, 2),
    /// ρ = 0.25, at the reduced fine resolutions (the full-resolution rows
    /// are opt-in via `--full-table`).
    fn default() -> Self {
        StudyConfig {
            problem: ProblemKind::Contact,
            microstructure: MicrostructureKind::Inclusion,
            kappa1: 1.0,
            kappa2: 2.0,
            rho: 0.25,
            alpha: 0.5,
            f: 1.0,
            g: 1.0,
            grids: vec![(16, 32), (32, 32), (64, 32)],
            tol: 1e-10,
            max_iter: 200,
            cg_tol: 1e-10,
            semi_implicit: false,
            out_dir: PathBuf::from("results"),
            dump_solutions: false,
        }
    }
}

/// The four paper-resolution grid rows.
pub const FULL_TABLE_GRIDS: [(usize, usize); 4] = [(16, 128), (32, 64), (64, 32), (128, 16)];

pub fn parse_grids(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut grids = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (n, m) = part
            .split_once(['x', 'X'])
            .ok_or_else(|| anyhow!("grid {part:?} is not of the form NxM"))?;
        grids.push((
            n.trim().parse().context("grid N")?,
            m.trim().parse().context("grid M")?,
        ));
    }
    if grids.is_empty() {
        bail!("empty grid list");
    }
    Ok(grids)
}

impl StudyConfig {
    /// Parses the flat key = value format; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<StudyConfig> {
        let mut config = StudyConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: key {key:?}", lineno + 1);
            match key {
                "problem" => config.problem = value.parse().with_context(ctx)?,
                "microstructure" => config.microstructure = value.parse().with_context(ctx)?,
                "kappa1" => config.kappa1 = value.parse().with_context(ctx)?,
                "kappa2" => config.kappa2 = value.parse().with_context(ctx)?,
                "rho" => config.rho = value.parse().with_context(ctx)?,
                "alpha" => config.alpha = value.parse().with_context(ctx)?,
                "f" => config.f = value.parse().with_context(ctx)?,
                "g" => config.g = value.parse().with_context(ctx)?,
                "grids" => config.grids = parse_grids(value).with_context(ctx)?,
                "tol" => config.tol = value.parse().with_context(ctx)?,
                "max_iter" => config.max_iter = value.parse().with_context(ctx)?,
                "cg_tol" => config.cg_tol = value.parse().with_context(ctx)?,
                "semi_implicit" => config.semi_implicit = value.parse().with_context(ctx)?,
                "out" => config.out_dir = PathBuf::from(value),
                "dump_solutions" => config.dump_solutions = value.parse().with_context(ctx)?,
                other => bail!("line {}: unknown key {other:?}", lineno + 1),
            }
        }
        Ok(config)
    }

    pub fn coefficient(&self) -> Result<CellCoefficient> {
        match self.microstructure {
            MicrostructureKind::Inclusion => Ok(CellCoefficient::Inclusion(
                MicrostructureSpec::new(self.kappa1, self.kappa2, self.rho)
                    .map_err(|e| anyhow!("{e}"))?,
            )),
            MicrostructureKind::Laminate => Ok(CellCoefficient::Laminate {
                a_left: self.kappa1,
                a_right: self.kappa2,
            }),
        }
    }
}

/// One failed assumption, with the rule it violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every precondition the study relies on and reports all failures;
/// never errors.
pub fn validate_config(config: &StudyConfig) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut push = |message: String| violations.push(Violation { message });

    if config.kappa1 <= 0.0 || config.kappa2 <= 0.0 {
        push(format!(
            "coefficient values kappa1 = {}, kappa2 = {} must be positive (uniform ellipticity)",
            config.kappa1, config.kappa2
        ));
    }
    if config.microstructure == MicrostructureKind::Inclusion
        && !(config.rho > 0.0 && config.rho < 0.5)
    {
        push(format!(
            "inclusion inset rho = {} must lie in (0, 0.5) (cell geometry)",
            config.rho
        ));
    }
    match config.problem {
        ProblemKind::Contact => {
            let kappa_min = config.kappa1.min(config.kappa2);
            if kappa_min <= config.alpha.abs() {
                push(format!(
                    "solvability gate kappa1 > |alpha| fails ({kappa_min} <= {}); the contact \
                     fixed point is only a contraction under this gate",
                    config.alpha.abs()
                ));
            }
            if !BoundaryPartition::contact().has_dirichlet() {
                push("boundary partition has no Dirichlet segment".into());
            }
        }
        ProblemKind::Robin => {
            if config.alpha <= 0.0 {
                push(format!(
                    "Robin coefficient alpha = {} must be strictly positive (coercivity of the \
                     Robin form)",
                    config.alpha
                ));
            }
        }
    }
    if config.grids.is_empty() {
        push("grid list is empty".into());
    }
    for &(n, m) in &config.grids {
        if n == 0 || m == 0 {
            push(format!("grid {n}x{m}: N and M must be at least 1"));
            continue;
        }
        if (n * m) % 2 != 0 {
            push(format!(
                "grid {n}x{m}: N*M must be even so the contact-segment split x = 1/2 is a node"
            ));
        }
        if m < 2 {
            push(format!(
                "grid {n}x{m}: cell resolution M must be at least 2"
            ));
        }
        match config.microstructure {
            MicrostructureKind::Inclusion => {
                let cut = config.rho * m as f64;
                if (cut - cut.round()).abs() > 1e-9 {
                    push(format!(
                        "grid {n}x{m}: inclusion interface rho = {} does not align with the \
                         element grid (rho*M must be an integer; M divisible by 4 for rho = 0.25)",
                        config.rho
                    ));
                }
            }
            MicrostructureKind::Laminate => {
                if m % 2 != 0 {
                    push(format!(
                        "grid {n}x{m}: laminate interface at 1/2 requires even M"
                    ));
                }
            }
        }
    }
    if !(config.tol > 0.0 && config.tol < 1.0) {
        push(format!(
            "fixed-point tolerance {} must lie in (0, 1)",
            config.tol
        ));
    }
    if !(config.cg_tol > 0.0 && config.cg_tol < 1.0) {
        push(format!(
            "linear tolerance {} must lie in (0, 1)",
            config.cg_tol
        ));
    }
    if config.max_iter == 0 {
        push("max_iter must be at least 1".into());
    }
    violations
}
