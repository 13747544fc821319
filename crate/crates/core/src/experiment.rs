//! Monte Carlo error studies over many `B` paths.
//!
//! Every sample `k` solves the scheme along its own path and compares
//! `(Y~^0, Y^0, Z^0)` against the exact `(Y_0, Y_0, Z_0)` evaluated with
//! `B_0 = 0` and the sampled `B_T`. The RMSE over samples is reported per
//! refinement level, and the convergence rate (CR) is the least-squares slope
//! of `log(error)` against `log(dt)`.
//!
//! All levels of a study share one underlying trajectory per sample: the path
//! is drawn at the finest `N` and coarsened by pairwise summation of
//! increments. Samples run in parallel, but their errors are reduced in sample
//! order, so a report does not depend on the thread count.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::brownian::{sample_path, sample_seed, BrownianPath, NormalStream, TimeGrid};
use crate::model::Problem;
use crate::quadrature::{hermite_rule, ConditionalExpectation, QuadratureRule, DEFAULT_ORDER};
use crate::solver::{default_radius, solve_backward, SchemeSettings, SolveResult};
use crate::spatial::{build_grid, SpaceGrid, ValueLevel, DEFAULT_COUNT};
use crate::{Error, Result};

/// Errors below this are treated as exact and left out of rate fits.
pub const RATE_FLOOR: f64 = 1e-10;

/// Where the error at `t = 0` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// The single node `x = X_0`.
    #[default]
    PointAtX0,
    /// `sqrt(h * sum e_j^2)` over the nodes with `|x - X_0| <= radius / 2`.
    GridL2,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::PointAtX0 => "point-at-x0",
            Metric::GridL2 => "grid-l2",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point-at-x0" => Ok(Metric::PointAtX0),
            "grid-l2" => Ok(Metric::GridL2),
            other => Err(Error::invalid(format!(
                "unknown metric {other:?} (expected point-at-x0 | grid-l2)"
            ))),
        }
    }
}

/// Numerical settings of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub samples: usize,
    pub seed: u64,
    pub metric: Metric,
    pub gh_order: usize,
    pub grid_count: usize,
    /// `None` selects [`default_radius`].
    pub grid_radius: Option<f64>,
    pub scheme: SchemeSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            samples: 300,
            seed: 42,
            metric: Metric::PointAtX0,
            gh_order: DEFAULT_ORDER,
            grid_count: DEFAULT_COUNT,
            grid_radius: None,
            scheme: SchemeSettings::default(),
        }
    }
}

impl StudyConfig {
    pub fn rule(&self) -> Result<QuadratureRule> {
        hermite_rule(self.gh_order)
    }

    /// Grid centered at the problem's `X_0`.
    pub fn grid(&self, problem: &Problem, rule: &QuadratureRule) -> Result<SpaceGrid> {
        let radius = self
            .grid_radius
            .unwrap_or_else(|| default_radius(problem.horizon(), rule));
        build_grid(problem.x0(), radius, self.grid_count)
    }
}

/// RMSEs of one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelErrors {
    pub n: usize,
    pub dt: f64,
    pub err_y_tilde: f64,
    pub err_y: f64,
    pub err_z: f64,
}

/// Fitted convergence rates; `None` when fewer than two levels are usable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rates {
    pub y_tilde: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub problem: String,
    pub levels: Vec<LevelErrors>,
    pub rates: Rates,
    pub samples: usize,
    pub seed: u64,
    pub metric: Metric,
}

/// Least-squares slope of `log(err)` against `log(dt)`, skipping errors that
/// are not finite or below [`RATE_FLOOR`].
pub fn fit_rate(dts: &[f64], errs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .zip(errs)
        .filter(|(_, &e)| e.is_finite() && e >= RATE_FLOOR)
        .map(|(&d, &e)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn fit_rates(levels: &[LevelErrors]) -> Rates {
    let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
    let col = |f: fn(&LevelErrors) -> f64| levels.iter().map(f).collect::<Vec<_>>();
    Rates {
        y_tilde: fit_rate(&dts, &col(|l| l.err_y_tilde)),
        y: fit_rate(&dts, &col(|l| l.err_y)),
        z: fit_rate(&dts, &col(|l| l.err_z)),
    }
}

/// Squared errors `[y_tilde, y, z]` of one solve under `metric`.
pub fn squared_errors(
    problem: &Problem,
    grid: &SpaceGrid,
    level0: &ValueLevel,
    b_terminal: f64,
    metric: Metric,
) -> Result<[f64; 3]> {
    let exact = |x: f64| -> Result<(f64, f64)> {
        match (
            problem.exact_y(0.0, x, 0.0, b_terminal),
            problem.exact_z(0.0, x, 0.0, b_terminal),
        ) {
            (Some(y), Some(z)) => Ok((y, z)),
            _ => Err(Error::invalid(format!(
                "{} has no exact solution",
                problem.name()
            ))),
        }
    };
    let nodes: std::ops::Range<usize> = match metric {
        Metric::PointAtX0 => grid.center_index()..grid.center_index() + 1,
        Metric::GridL2 => grid.middle_half(),
    };
    let weight = match metric {
        Metric::PointAtX0 => 1.0,
        Metric::GridL2 => grid.spacing(),
    };
    let mut acc = [0.0; 3];
    for j in nodes {
        let (y, z) = exact(grid.node(j))?;
        acc[0] += weight * (level0.y_tilde[j] - y).powi(2);
        acc[1] += weight * (level0.y[j] - y).powi(2);
        acc[2] += weight * (level0.z[j] - z).powi(2);
    }
    Ok(acc)
}

fn require_exact(problem: &Problem) -> Result<()> {
    if problem.has_exact_solution() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} has no exact solution to measure errors against",
            problem.name()
        )))
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::invalid("need at least one Monte Carlo sample"));
    }
    Ok(())
}

/// Ordered square-root-of-mean reduction of per-sample squared errors.
fn root_mean(per_sample: &[[f64; 3]]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for e in per_sample {
        for c in 0..3 {
            acc[c] += e[c];
        }
    }
    acc.map(|s| (s / per_sample.len() as f64).sqrt())
}

/// Collect per-sample results in sample order, reporting the lowest failing
/// sample index.
fn collect_samples<T: Send>(
    samples: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..samples).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| Error::Sample {
                index: k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// `(err_y_tilde, err_y, err_z)` at one level with independently drawn paths.
pub fn rmse(problem: &Problem, time: &TimeGrid, config: &StudyConfig) -> Result<[f64; 3]> {
    require_exact(problem)?;
    check_samples(config.samples)?;
    let rule = config.rule()?;
    let grid = config.grid(problem, &rule)?;
    let per_sample = collect_samples(config.samples, |k| {
        let path = sample_path(time, sample_seed(config.seed, k as u64));
        let res = solve_backward(
            problem,
            &grid,
            &mut &rule,
            time,
            &path,
            &config.scheme,
            false,
        )?;
        squared_errors(
            problem,
            &grid,
            &res.level0,
            path.b_terminal(),
            config.metric,
        )
    })?;
    Ok(root_mean(&per_sample))
}

fn halvings(n: usize, finest: usize) -> Result<u32> {
    let ratio = finest / n;
    if n == 0 || !finest.is_multiple_of(n) || !ratio.is_power_of_two() {
        return Err(Error::invalid(format!(
            "level N = {n} is not a power-of-two coarsening of N = {finest}"
        )));
    }
    Ok(ratio.trailing_zeros())
}

/// Run every level of `n_list` with common random numbers and fit rates.
pub fn convergence_study(
    problem: &Problem,
    n_list: &[usize],
    config: &StudyConfig,
) -> Result<ConvergenceReport> {
    require_exact(problem)?;
    check_samples(config.samples)?;
    if n_list.is_empty() {
        return Err(Error::invalid("need at least one refinement level"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "levels must be strictly increasing, got {n_list:?}"
        )));
    }
    let finest = *n_list.last().expect("nonempty");
    let shifts = n_list
        .iter()
        .map(|&n| halvings(n, finest))
        .collect::<Result<Vec<_>>>()?;
    let times = n_list
        .iter()
        .map(|&n| TimeGrid::new(n, problem.horizon()))
        .collect::<Result<Vec<_>>>()?;
    let rule = config.rule()?;
    let grid = config.grid(problem, &rule)?;
    let fine_time = times[times.len() - 1];

    let per_sample = collect_samples(config.samples, |k| {
        let fine = sample_path(&fine_time, sample_seed(config.seed, k as u64));
        times
            .iter()
            .zip(&shifts)
            .map(|(time, &s)| {
                let path = fine.coarsen(s)?;
                let res = solve_backward(
                    problem,
                    &grid,
                    &mut &rule,
                    time,
                    &path,
                    &config.scheme,
                    false,
                )?;
                squared_errors(
                    problem,
                    &grid,
                    &res.level0,
                    path.b_terminal(),
                    config.metric,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let levels: Vec<LevelErrors> = times
        .iter()
        .enumerate()
        .map(|(l, time)| {
            let column: Vec<[f64; 3]> = per_sample.iter().map(|s| s[l]).collect();
            let [err_y_tilde, err_y, err_z] = root_mean(&column);
            LevelErrors {
                n: time.n_steps(),
                dt: time.dt(),
                err_y_tilde,
                err_y,
                err_z,
            }
        })
        .collect();
    Ok(ConvergenceReport {
        problem: problem.name().to_string(),
        rates: fit_rates(&levels),
        levels,
        samples: config.samples,
        seed: config.seed,
        metric: config.metric,
    })
}

/// All levels of sample `k` at `n` steps, for trace output.
pub fn trace_sample(
    problem: &Problem,
    n: usize,
    config: &StudyConfig,
    k: usize,
) -> Result<(SpaceGrid, Vec<ValueLevel>)> {
    let rule = config.rule()?;
    let grid = config.grid(problem, &rule)?;
    let time = TimeGrid::new(n, problem.horizon())?;
    let path = sample_path(&time, sample_seed(config.seed, k as u64));
    let res: SolveResult = solve_backward(
        problem,
        &grid,
        &mut &rule,
        &time,
        &path,
        &config.scheme,
        true,
    )
    .map_err(|e| Error::Sample {
        index: k,
        source: Box::new(e),
    })?;
    Ok((grid, res.levels.unwrap_or_default()))
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

fn parse_rate(s: &str) -> Result<Option<f64>> {
    if s == "undefined" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("bad rate {s:?}")))
}

impl ConvergenceReport {
    /// CSV with header `N,dt,err_ytilde,err_y,err_z`, then a `# run:` comment
    /// and, with two or more levels, a `# rates:` comment.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,dt,err_ytilde,err_y,err_z\n");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l.n, l.dt, l.err_y_tilde, l.err_y, l.err_z
            );
        }
        let _ = writeln!(
            s,
            "# run: problem={} samples={} seed={} metric={}",
            self.problem,
            self.samples,
            self.seed,
            self.metric.as_str()
        );
        if self.levels.len() >= 2 {
            let _ = writeln!(
                s,
                "# rates: cr_ytilde={} cr_y={} cr_z={}",
                fmt_rate(self.rates.y_tilde),
                fmt_rate(self.rates.y),
                fmt_rate(self.rates.z)
            );
        }
        s
    }

    /// Inverse of [`to_csv`](Self::to_csv).
    pub fn parse_csv(text: &str) -> Result<ConvergenceReport> {
        let bad = |m: String| Error::invalid(format!("malformed report: {m}"));
        let mut lines = text.lines();
        match lines.next() {
            Some("N,dt,err_ytilde,err_y,err_z") => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let mut report = ConvergenceReport {
            problem: String::new(),
            levels: Vec::new(),
            rates: Rates::default(),
            samples: 0,
            seed: 0,
            metric: Metric::default(),
        };
        for line in lines {
            if let Some(rest) = line.strip_prefix("# run:") {
                for kv in rest.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv.to_string()))?;
                    match k {
                        "problem" => report.problem = v.to_string(),
                        "samples" => report.samples = v.parse().map_err(|_| bad(kv.to_string()))?,
                        "seed" => report.seed = v.parse().map_err(|_| bad(kv.to_string()))?,
                        "metric" => report.metric = v.parse()?,
                        _ => return Err(bad(format!("unknown key {k}"))),
                    }
                }
            } else if let Some(rest) = line.strip_prefix("# rates:") {
                for kv in rest.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv.to_string()))?;
                    match k {
                        "cr_ytilde" => report.rates.y_tilde = parse_rate(v)?,
                        "cr_y" => report.rates.y = parse_rate(v)?,
                        "cr_z" => report.rates.z = parse_rate(v)?,
                        _ => return Err(bad(format!("unknown key {k}"))),
                    }
                }
            } else if !line.trim().is_empty() {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad(format!("expected 5 columns in {line:?}")));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| bad(format!("bad number {s:?}")))
                };
                report.levels.push(LevelErrors {
                    n: f[0].parse().map_err(|_| bad(format!("bad N {:?}", f[0])))?,
                    dt: num(f[1])?,
                    err_y_tilde: num(f[2])?,
                    err_y: num(f[3])?,
                    err_z: num(f[4])?,
                });
            }
        }
        Ok(report)
    }

    /// Aligned table with one `N = 2^k` row per level and a `CR` row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: {} samples, seed {}, metric {}",
            self.problem,
            self.samples,
            self.seed,
            self.metric.as_str()
        );
        let _ = writeln!(s, "{:<10} {:>12} {:>12} {:>12}", "N", "Ytilde", "Y", "Z");
        for l in &self.levels {
            let label = if l.n.is_power_of_two() {
                format!("2^{}", l.n.trailing_zeros())
            } else {
                l.n.to_string()
            };
            let _ = writeln!(
                s,
                "{:<10} {:>12} {:>12} {:>12}",
                label,
                sci(l.err_y_tilde),
                sci(l.err_y),
                sci(l.err_z)
            );
        }
        if self.levels.len() >= 2 {
            let r = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<10} {:>12} {:>12} {:>12}",
                "CR",
                r(self.rates.y_tilde),
                r(self.rates.y),
                r(self.rates.z)
            );
        }
        s
    }
}

/// `1.5770e-02` style scientific notation.
fn sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.4e}");
    match s.split_once('e') {
        Some((m, e)) => {
            let exp: i32 = e.parse().unwrap_or(0);
            let sign = if exp < 0 { '-' } else { '+' };
            format!("{m}e{sign}{:02}", exp.abs())
        }
        None => s,
    }
}

/// Conditional expectations by plain Monte Carlo over `dW ~ N(0, dt)`.
///
/// Used as an independent reference for the Gauss–Hermite kernels.
pub struct MonteCarloKernel {
    normals: NormalStream,
    samples: usize,
}

impl MonteCarloKernel {
    pub fn new(seed: u64, samples: usize) -> Self {
        MonteCarloKernel {
            normals: NormalStream::new(seed),
            samples: samples.max(1),
        }
    }
}

fn finite_probe(v: f64, at: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "integrand",
            at,
        })
    }
}

impl ConditionalExpectation for MonteCarloKernel {
    fn moments<F: FnMut(f64) -> f64>(&mut self, mut h: F, x: f64, dt: f64) -> Result<(f64, f64)> {
        let sd = dt.sqrt();
        let (mut m0, mut m1) = (0.0, 0.0);
        for _ in 0..self.samples {
            let dw = sd * self.normals.next_normal();
            let v = finite_probe(h(x + dw), x + dw)?;
            m0 += v;
            m1 += v * dw;
        }
        let m = self.samples as f64;
        Ok((m0 / m, m1 / m))
    }

    fn mean_pair<F: FnMut(f64) -> (f64, f64)>(
        &mut self,
        mut h: F,
        x: f64,
        dt: f64,
    ) -> Result<(f64, f64)> {
        let sd = dt.sqrt();
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..self.samples {
            let xp = x + sd * self.normals.next_normal();
            let (va, vb) = h(xp);
            a += finite_probe(va, xp)?;
            b += finite_probe(vb, xp)?;
        }
        let m = self.samples as f64;
        Ok((a / m, b / m))
    }

    fn reach(&self, _dt: f64) -> Option<f64> {
        None
    }
}

/// Largest `N` accepted by [`oracle_rmse`].
pub const ORACLE_MAX_STEPS: usize = 8;
/// Largest grid accepted by [`oracle_rmse`].
pub const ORACLE_MAX_COUNT: usize = 33;

/// Settings of the brute-force comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Monte Carlo draws per conditional expectation.
    pub inner_samples: usize,
    /// Independent repetitions of the oracle pipeline on the same paths; the
    /// spread across them gives the oracle standard error.
    pub replicates: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            inner_samples: 100_000,
            replicates: 6,
        }
    }
}

/// Quadrature and brute-force RMSEs `(err_y, err_z)` on the same paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparison {
    pub quadrature: [f64; 2],
    /// Mean over replicates.
    pub oracle: [f64; 2],
    /// Standard error of `oracle`.
    pub oracle_se: [f64; 2],
}

impl OracleComparison {
    /// `|oracle - quadrature|` in units of the oracle standard error.
    pub fn z_scores(&self) -> [f64; 2] {
        [0, 1].map(|c| {
            let d = (self.oracle[c] - self.quadrature[c]).abs();
            if self.oracle_se[c] > 0.0 {
                d / self.oracle_se[c]
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

/// RMSEs of `(Y^0, Z^0)` with the Gauss–Hermite kernels and with
/// [`MonteCarloKernel`], on a small grid (`count <= 33`) and `N <= 8`.
pub fn oracle_rmse(
    problem: &Problem,
    time: &TimeGrid,
    config: &StudyConfig,
    oracle: &OracleConfig,
) -> Result<OracleComparison> {
    require_exact(problem)?;
    check_samples(config.samples)?;
    if time.n_steps() > ORACLE_MAX_STEPS {
        return Err(Error::invalid(format!(
            "oracle runs are limited to N <= {ORACLE_MAX_STEPS}, got {}",
            time.n_steps()
        )));
    }
    if config.grid_count > ORACLE_MAX_COUNT {
        return Err(Error::invalid(format!(
            "oracle runs are limited to {ORACLE_MAX_COUNT} grid nodes, got {}",
            config.grid_count
        )));
    }
    if oracle.replicates < 2 {
        return Err(Error::invalid(
            "oracle needs at least two replicates for a standard error",
        ));
    }
    let rule = config.rule()?;
    let grid = config.grid(problem, &rule)?;
    let paths: Vec<BrownianPath> = (0..config.samples)
        .map(|k| sample_path(time, sample_seed(config.seed, k as u64)))
        .collect();
    let yz = |e: [f64; 3]| [e[1], e[2]];

    let quad = collect_samples(config.samples, |k| {
        let res = solve_backward(
            problem,
            &grid,
            &mut &rule,
            time,
            &paths[k],
            &config.scheme,
            false,
        )?;
        squared_errors(
            problem,
            &grid,
            &res.level0,
            paths[k].b_terminal(),
            config.metric,
        )
        .map(yz)
    })?;

    let mut reps = Vec::with_capacity(oracle.replicates);
    for r in 0..oracle.replicates {
        let rep_seed = sample_seed(config.seed ^ 0x6f72_6163_6c65, r as u64);
        let sq = collect_samples(config.samples, |k| {
            let mut kernel =
                MonteCarloKernel::new(sample_seed(rep_seed, k as u64), oracle.inner_samples);
            let res = solve_backward(
                problem,
                &grid,
                &mut kernel,
                time,
                &paths[k],
                &config.scheme,
                false,
            )?;
            squared_errors(
                problem,
                &grid,
                &res.level0,
                paths[k].b_terminal(),
                config.metric,
            )
            .map(yz)
        })?;
        reps.push(rms2(&sq));
    }
    let m = reps.len() as f64;
    let mean = [0, 1].map(|c| reps.iter().map(|r| r[c]).sum::<f64>() / m);
    let se = [0, 1].map(|c| {
        let var = reps.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    });
    Ok(OracleComparison {
        quadrature: rms2(&quad),
        oracle: mean,
        oracle_se: se,
    })
}

fn rms2(sq: &[[f64; 2]]) -> [f64; 2] {
    let n = sq.len() as f64;
    [0, 1].map(|c| (sq.iter().map(|s| s[c]).sum::<f64>() / n).sqrt())
}
