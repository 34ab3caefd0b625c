//! Benchmark runner: builds solution operators, times them, measures their
//! accuracy against a full sparse solve, and writes one CSV row per case.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use hbs_nd::bodyload::BodyLoadSet;
use hbs_nd::config::Config;
use hbs_nd::grid::{build_tree, discretize, DEFAULT_NLEAF};
use hbs_nd::problems::{catalog, NAMES};
use hbs_nd::reference::{error_metrics, random_unit};
use hbs_nd::solution::{BuildOptions, Engine, SolutionOperator, DEFAULT_CROSSOVER, DEFAULT_TOLERANCE};
use hbs_nd::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_ARGS: i32 = 2;
pub const EXIT_BUILD_FAILED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineChoice {
    Dense,
    Accel,
    Both,
}

impl EngineChoice {
    fn engines(self) -> Vec<Engine> {
        match self {
            EngineChoice::Dense => vec![Engine::Dense],
            EngineChoice::Accel => vec![Engine::Accelerated],
            EngineChoice::Both => vec![Engine::Dense, Engine::Accelerated],
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "hbs-nd", about = "Build and benchmark boundary solution operators")]
pub struct Cli {
    /// Problem names, comma separated, or `all`.
    #[arg(long, default_value = "laplace")]
    pub problem: String,
    /// Grid points per side, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub n: Vec<usize>,
    #[arg(long, value_enum, default_value_t = EngineChoice::Accel)]
    pub engine: EngineChoice,
    /// Relative truncation tolerance.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub epsilon: f64,
    /// Boundary size from which Schur complements are compressed.
    #[arg(long, default_value_t = DEFAULT_CROSSOVER)]
    pub crossover: usize,
    /// Maximum nodes per quadtree leaf.
    #[arg(long, default_value_t = DEFAULT_NLEAF)]
    pub nleaf: usize,
    /// Leaf size of the HBS index trees.
    #[arg(long, default_value_t = hbs_nd::hbs::DEFAULT_LEAF_SIZE)]
    pub hbs_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Fail with exit code 4 when e1 or e2 exceeds --check-tol.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub check_tol: f64,
    /// Builds per case; the median time is reported.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Body-load node list (`i j` per line).
    #[arg(long)]
    pub bodyloads: Option<PathBuf>,
    /// Write rows here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write per-level build diagnostics here.
    #[arg(long)]
    pub diag_csv: Option<PathBuf>,
    /// `key = value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip the reference solves (e1, e2 reported as NaN).
    #[arg(long)]
    pub no_errors: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub problem: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub engine: String,
    pub epsilon: f64,
    pub crossover: usize,
    #[serde(rename = "T_build_s")]
    pub t_build_s: f64,
    #[serde(rename = "T_solve_s")]
    pub t_solve_s: f64,
    #[serde(rename = "M_bytes")]
    pub m_bytes: usize,
    #[serde(rename = "M_over_n")]
    pub m_over_n: f64,
    pub e1: f64,
    pub e2: f64,
    pub max_rank: usize,
    pub status: String,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "problem", "n", "N", "engine", "epsilon", "crossover", "T_build_s", "T_solve_s", "M_bytes", "M_over_n", "e1",
    "e2", "max_rank", "status",
];

impl Cli {
    /// Fill options the command line left at their defaults from `--config`.
    pub fn merge_config(mut self, raw_args: &[String]) -> Result<Self> {
        let Some(path) = &self.config else { return Ok(self) };
        let cfg = Config::load(path)?;
        let given = |flag: &str| raw_args.iter().any(|a| a == &format!("--{flag}") || a.starts_with(&format!("--{flag}=")));
        for key in cfg.keys() {
            let known = [
                "problem", "n", "engine", "epsilon", "crossover", "nleaf", "hbs-leaf", "seed", "threads", "check-tol",
                "repeats", "bodyloads",
            ];
            if !known.contains(&key) {
                return Err(Error::Parse(format!("unknown config key `{key}`")));
            }
        }
        let set = |key: &str| cfg.get(key).filter(|_| !given(key));
        if let Some(v) = set("problem") {
            self.problem = v.to_string();
        }
        if let Some(v) = set("n") {
            self.n = v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| Error::Parse(format!("`n`: {e}"))))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = set("engine") {
            self.engine = EngineChoice::from_str(v, true).map_err(Error::Parse)?;
        }
        macro_rules! num {
            ($key:literal, $field:ident) => {
                if !given($key) {
                    if let Some(v) = cfg.parsed($key)? {
                        self.$field = v;
                    }
                }
            };
        }
        num!("epsilon", epsilon);
        num!("crossover", crossover);
        num!("nleaf", nleaf);
        num!("hbs-leaf", hbs_leaf);
        num!("seed", seed);
        num!("threads", threads);
        num!("check-tol", check_tol);
        num!("repeats", repeats);
        if let Some(v) = set("bodyloads") {
            self.bodyloads = Some(PathBuf::from(v));
        }
        Ok(self)
    }

    pub fn problems(&self) -> Result<Vec<String>> {
        if self.problem == "all" {
            return Ok(NAMES.iter().map(|s| s.to_string()).collect());
        }
        self.problem
            .split(',')
            .map(|p| {
                let p = p.trim();
                if NAMES.contains(&p) {
                    Ok(p.to_string())
                } else {
                    Err(Error::UnknownProblem(p.to_string()))
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.problems()?;
        if self.n.iter().any(|&n| n < 4) {
            return Err(Error::InvalidArgument("--n values must be at least 4".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument("--epsilon must lie in (0, 1)".into()));
        }
        if self.hbs_leaf == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("--hbs-leaf and --repeats must be positive".into()));
        }
        Ok(())
    }

    pub fn options(&self) -> BuildOptions {
        BuildOptions {
            tolerance: self.epsilon,
            crossover: self.crossover,
            hbs_leaf: self.hbs_leaf,
            ..Default::default()
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Median time of applying `G` to a random vector.
fn time_solve(op: &SolutionOperator, seed: u64) -> Result<f64> {
    let g = random_unit(op.boundary_len(), seed);
    // Each sample averages enough applications to span ~20 ms.
    let t0 = Instant::now();
    std::hint::black_box(op.apply_dtn(&g)?);
    let once = t0.elapsed().as_secs_f64().max(1e-7);
    let inner = ((0.02 / once).ceil() as usize).clamp(1, 1000);
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let t0 = Instant::now();
        for _ in 0..inner {
            std::hint::black_box(op.apply_dtn(&g)?);
        }
        times.push(t0.elapsed().as_secs_f64() / inner as f64);
    }
    Ok(median(times))
}

/// Outcome of one (problem, n, engine) case.
pub struct CaseResult {
    pub row: Row,
    pub diagnostics: String,
    pub failed_build: bool,
    pub failed_check: bool,
}

pub fn run_case(cli: &Cli, problem: &str, n: usize, engine: Engine) -> Result<CaseResult> {
    let spec = catalog(problem, n, cli.seed)?;
    let op = discretize(&spec)?;
    let tree = build_tree(op.side(), cli.nleaf)?;
    let loads = match &cli.bodyloads {
        Some(path) => Some(BodyLoadSet::parse(n, &std::fs::read_to_string(path)?)?),
        None => None,
    };
    let options = cli.options();
    let mut row = Row {
        problem: problem.to_string(),
        n,
        big_n: op.len(),
        engine: engine.to_string(),
        epsilon: cli.epsilon,
        crossover: cli.crossover,
        t_build_s: f64::NAN,
        t_solve_s: f64::NAN,
        m_bytes: 0,
        m_over_n: f64::NAN,
        e1: f64::NAN,
        e2: f64::NAN,
        max_rank: 0,
        status: "ok".into(),
    };
    let mut times = Vec::new();
    let mut built = None;
    for _ in 0..cli.repeats {
        let t0 = Instant::now();
        let result = match (&loads, engine) {
            (Some(l), e) => hbs_nd::bodyload::build_body_operator(&op, &tree, l, e, &options),
            (None, Engine::Dense) => hbs_nd::dense_nd::build_root_dense(&op, &tree, None, &options),
            (None, Engine::Accelerated) => hbs_nd::accel_nd::build_root_accel(&op, &tree, None, &options),
        };
        times.push(t0.elapsed().as_secs_f64());
        match result {
            Ok(sol) => built = Some(sol),
            Err(e @ Error::Singular { .. }) => {
                log::error!("{problem} n={n} {engine}: {e}");
                row.status = "singular".into();
                return Ok(CaseResult { row, diagnostics: String::new(), failed_build: true, failed_check: false });
            }
            Err(e) => return Err(e),
        }
    }
    let sol = built.expect("at least one repeat");
    row.t_build_s = median(times);
    row.t_solve_s = time_solve(&sol, cli.seed)?;
    row.m_bytes = sol.storage_bytes();
    row.m_over_n = row.m_bytes as f64 / n as f64;
    row.max_rank = sol.report.levels.iter().map(|l| l.max_rank).max().unwrap_or(0);
    if !cli.no_errors {
        let (e1, e2) = error_metrics(&sol, &op, cli.seed)?;
        row.e1 = e1;
        row.e2 = e2;
    }
    let mut failed_check = false;
    if cli.check && !(row.e1 <= cli.check_tol && row.e2 <= cli.check_tol) {
        row.status = "check_failed".into();
        failed_check = true;
    } else if !sol.report.warnings.is_empty() {
        row.status = "warn".into();
    }
    let diagnostics = sol
        .report
        .levels
        .iter()
        .map(|l| format!("{problem},{n},{engine},{}\n", l.csv_row()))
        .collect();
    Ok(CaseResult { row, diagnostics, failed_build: false, failed_check })
}

/// Run every requested case; returns the rows and the process exit code.
pub fn run(cli: &Cli) -> Result<(Vec<Row>, i32)> {
    cli.validate()?;
    let mut rows = Vec::new();
    let mut code = EXIT_OK;
    let mut diag = format!("problem,n,engine,{}\n", hbs_nd::solution::LevelDiagnostics::CSV_HEADER);
    for problem in cli.problems()? {
        for &n in &cli.n {
            for engine in cli.engine.engines() {
                let case = run_case(cli, &problem, n, engine)?;
                log::info!("{:?}", case.row);
                if case.failed_build {
                    code = EXIT_BUILD_FAILED;
                } else if case.failed_check && code == EXIT_OK {
                    code = EXIT_CHECK_FAILED;
                }
                diag.push_str(&case.diagnostics);
                rows.push(case.row);
            }
        }
    }
    if let Some(path) = &cli.diag_csv {
        std::fs::write(path, diag)?;
    }
    Ok((rows, code))
}

pub fn write_rows<W: std::io::Write>(w: W, rows: &[Row]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<Row>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
