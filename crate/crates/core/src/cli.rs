//! Command-line front end.
//!
//! Settings come from three layers, later ones winning: built-in defaults,
//! an optional config file (`--config`), and command-line flags. The config
//! file is flat `key = value` text whose keys are the long flag names, plus
//! the family parameters `horizon`, `x0`, `slope`, `intercept` and `noise`:
//!
//! ```text
//! # linear terminal with additive backward noise
//! problem = additive-noise
//! slope = 2
//! noise = 0.5
//! n = 8,16,32
//! samples = 100
//! ```

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::brownian::TimeGrid;
use crate::experiment::{
    convergence_study, oracle_rmse, trace_sample, ConvergenceReport, Metric, OracleConfig,
    StudyConfig,
};
use crate::model::{by_name, FamilyParams, MilsteinForm, Problem, FAMILIES};
use crate::quadrature::MAX_ORDER;
use crate::solver::{write_trace, TerminalZ};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Table,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(Error::invalid(format!(
                "unknown format {other:?} (expected csv | table)"
            ))),
        }
    }
}

/// Run convergence studies of the splitting-up scheme for BDSDEs.
#[derive(Debug, Parser, Default)]
#[command(name = "bdsde", version, about)]
pub struct Args {
    /// Built-in problem: example1, example2, example3, example1-printed,
    /// example2-printed, zero-driver, additive-noise.
    #[arg(long)]
    pub problem: Option<String>,
    /// Flat `key = value` file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated step counts [default: 8,16,32,64,128].
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Monte Carlo samples of B [default: 300].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Base seed [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gauss–Hermite nodes [default: 8].
    #[arg(long)]
    pub gh_order: Option<usize>,
    /// Odd number of grid nodes [default: 257].
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// Grid half-width [default: 5 sqrt(T) + sqrt(2T) max|a_j|].
    #[arg(long)]
    pub grid_radius: Option<f64>,
    /// point-at-x0 | grid-l2 [default: point-at-x0].
    #[arg(long)]
    pub metric: Option<String>,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv | table [default: csv].
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Dump every level of sample 0 at the finest N to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// complete | y-only [default: complete].
    #[arg(long)]
    pub milstein: Option<String>,
    /// finite-difference | exact [default: finite-difference].
    #[arg(long)]
    pub terminal_z: Option<String>,
    /// Compare against brute-force Monte Carlo kernels (N <= 8, grid <= 33 nodes).
    #[arg(long)]
    pub oracle: bool,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub params: FamilyParams,
    pub n_list: Vec<usize>,
    pub study: StudyConfig,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub trace: Option<PathBuf>,
    pub oracle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: String::new(),
            params: FamilyParams::default(),
            n_list: vec![8, 16, 32, 64, 128],
            study: StudyConfig::default(),
            out: None,
            format: Format::Csv,
            threads: None,
            trace: None,
            oracle: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "problem" => self.problem = v.to_string(),
            "n" => self.n_list = parse_list(&key, v)?,
            "samples" => self.study.samples = parse_value(&key, v)?,
            "seed" => self.study.seed = parse_value(&key, v)?,
            "gh-order" => self.study.gh_order = parse_value(&key, v)?,
            "grid-count" => self.study.grid_count = parse_value(&key, v)?,
            "grid-radius" => self.study.grid_radius = Some(parse_value(&key, v)?),
            "metric" => self.study.metric = v.parse()?,
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => self.format = v.parse()?,
            "threads" => self.threads = Some(parse_value(&key, v)?),
            "trace" => self.trace = Some(PathBuf::from(v)),
            "milstein" => self.study.scheme.milstein = v.parse::<MilsteinForm>()?,
            "terminal-z" => self.study.scheme.terminal_z = v.parse::<TerminalZ>()?,
            "oracle" => self.oracle = parse_value(&key, v)?,
            "horizon" => self.params.horizon = parse_value(&key, v)?,
            "x0" => self.params.x0 = parse_value(&key, v)?,
            "slope" => self.params.slope = parse_value(&key, v)?,
            "intercept" => self.params.intercept = parse_value(&key, v)?,
            "noise" => self.params.noise = parse_value(&key, v)?,
            _ => return Err(Error::invalid(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Apply every setting of a config file.
    pub fn apply_file_text(&mut self, path: &str, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                path: format!("{path}:{}", lineno + 1),
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_file_text(&path.display().to_string(), &text)
    }

    /// Defaults, then `--config`, then flags.
    pub fn from_args(args: &Args) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(path) = &args.config {
            c.apply_file(path)?;
        }
        if let Some(p) = &args.problem {
            c.problem = p.clone();
        }
        if let Some(n) = &args.n {
            c.n_list = n.clone();
        }
        if let Some(v) = args.samples {
            c.study.samples = v;
        }
        if let Some(v) = args.seed {
            c.study.seed = v;
        }
        if let Some(v) = args.gh_order {
            c.study.gh_order = v;
        }
        if let Some(v) = args.grid_count {
            c.study.grid_count = v;
        }
        if let Some(v) = args.grid_radius {
            c.study.grid_radius = Some(v);
        }
        if let Some(v) = &args.metric {
            c.study.metric = v.parse::<Metric>()?;
        }
        if let Some(v) = &args.out {
            c.out = Some(v.clone());
        }
        if let Some(v) = &args.format {
            c.format = v.parse()?;
        }
        if let Some(v) = args.threads {
            c.threads = Some(v);
        }
        if let Some(v) = &args.trace {
            c.trace = Some(v.clone());
        }
        if let Some(v) = &args.milstein {
            c.study.scheme.milstein = v.parse()?;
        }
        if let Some(v) = &args.terminal_z {
            c.study.scheme.terminal_z = v.parse()?;
        }
        c.oracle |= args.oracle;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.is_empty() {
            return Err(Error::invalid(format!(
                "no problem given; use --problem with one of {}",
                FAMILIES.join(", ")
            )));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::invalid("--n needs positive step counts"));
        }
        if self.study.samples == 0 {
            return Err(Error::invalid("--samples must be at least 1"));
        }
        if !(1..=MAX_ORDER).contains(&self.study.gh_order) {
            return Err(Error::invalid(format!(
                "--gh-order must be in 1..={MAX_ORDER}"
            )));
        }
        if self.study.grid_count < 5 || self.study.grid_count.is_multiple_of(2) {
            return Err(Error::invalid("--grid-count must be odd and at least 5"));
        }
        if let Some(r) = self.study.grid_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("--grid-radius must be positive"));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let p = by_name(&self.problem, &self.params)?;
        p.validate(self.study.seed)?;
        Ok(p)
    }
}

/// Execute a resolved configuration, writing the report to `stdout` unless
/// an output file is set.
pub fn run(config: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    config.validate()?;
    let problem = config.build_problem()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))?;

    let text = pool.install(|| -> Result<String> {
        if config.oracle {
            oracle_text(&problem, config)
        } else {
            let report = convergence_study(&problem, &config.n_list, &config.study)?;
            Ok(render(&report, config.format))
        }
    })?;

    match &config.out {
        Some(path) => fs::write(path, &text)
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?,
        None => stdout.write_all(text.as_bytes())?,
    }

    if let Some(path) = &config.trace {
        let finest = *config.n_list.iter().max().expect("validated nonempty");
        let (grid, levels) = pool.install(|| trace_sample(&problem, finest, &config.study, 0))?;
        let file = fs::File::create(path)
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
        write_trace(std::io::BufWriter::new(file), &grid, &levels)?;
    }
    Ok(())
}

fn render(report: &ConvergenceReport, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    }
}

fn oracle_text(problem: &Problem, config: &RunConfig) -> Result<String> {
    use std::fmt::Write as _;
    let mut s =
        String::from("N,quad_err_y,oracle_err_y,oracle_se_y,quad_err_z,oracle_err_z,oracle_se_z\n");
    for &n in &config.n_list {
        let time = TimeGrid::new(n, problem.horizon())?;
        let c = oracle_rmse(problem, &time, &config.study, &OracleConfig::default())?;
        let _ = writeln!(
            s,
            "{n},{},{},{},{},{},{}",
            c.quadrature[0],
            c.oracle[0],
            c.oracle_se[0],
            c.quadrature[1],
            c.oracle[1],
            c.oracle_se[1]
        );
    }
    Ok(s)
}

/// Parse `args` (including the program name) and run. Errors are returned
/// rather than printed; clap's own help and usage errors are returned as
/// [`clap::Error`] through the outer result.
pub fn run_from_args<I, T>(
    args: I,
    stdout: &mut dyn Write,
) -> std::result::Result<Result<()>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(args)?;
    Ok(RunConfig::from_args(&args).and_then(|c| run(&c, stdout)))
}
