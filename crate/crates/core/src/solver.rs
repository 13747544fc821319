//! Backward recursion of the splitting-up scheme for one `B` path.
//!
//! From level `i + 1` to level `i`, at every grid node `x`:
//!
//! ```text
//! H(x')   = Y^{i+1}(x') + dt f(t_{i+1}, x', Y^{i+1}(x'), Z^{i+1}(x'), B_{t_{i+1}}, B_T)
//! Y~^i(x) = E[H(x + dW)]
//! Z^i(x)  = E[H(x + dW) dW] / dt
//! Y^i(x)  = Y~^i(x) + dB_i E[g(t_{i+1}, x + dW, Y~^i(x))]
//!                   + (dB_i^2 - dt)/2 E[c(t_{i+1}, x + dW, Y~^i(x))]
//! ```
//!
//! `c` is the Milstein coefficient selected by [`MilsteinForm`]. The scheme is
//! explicit: every right-hand side is taken at level `i + 1`, and `Y~^i` is
//! held fixed at the launch node inside the corrector.

use std::io::Write;

use crate::brownian::{BrownianPath, TimeGrid};
use crate::model::{MilsteinForm, Problem};
use crate::quadrature::{ConditionalExpectation, QuadratureRule};
use crate::spatial::{build_grid, SpaceGrid, ValueLevel};
use crate::{Error, Result};

/// How `Z^N` is seeded at the terminal time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalZ {
    /// Central difference of the terminal function with step equal to the
    /// grid spacing.
    #[default]
    FiniteDifference,
    /// The problem's exact `Z` at `t = T`.
    Exact,
}

impl TerminalZ {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalZ::FiniteDifference => "finite-difference",
            TerminalZ::Exact => "exact",
        }
    }
}

impl std::str::FromStr for TerminalZ {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-difference" => Ok(TerminalZ::FiniteDifference),
            "exact" => Ok(TerminalZ::Exact),
            other => Err(Error::invalid(format!(
                "unknown terminal-Z seed {other:?} (expected finite-difference | exact)"
            ))),
        }
    }
}

/// Scheme options that are not part of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchemeSettings {
    pub terminal_z: TerminalZ,
    pub milstein: MilsteinForm,
}

/// Output of [`solve_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub level0: ValueLevel,
    /// Levels `0..=N` indexed by time index, present in trace mode.
    pub levels: Option<Vec<ValueLevel>>,
}

/// Grid radius covering the reach of the probes over the whole horizon plus
/// five standard deviations of `W_T`: `5 sqrt(T) + sqrt(2 T) max|a_j|`.
pub fn default_radius(horizon: f64, rule: &QuadratureRule) -> f64 {
    5.0 * horizon.sqrt() + (2.0 * horizon).sqrt() * rule.max_abs_node()
}

/// Default grid for `problem`: centered at `X_0`, [`default_radius`] wide.
pub fn default_grid(problem: &Problem, rule: &QuadratureRule, count: usize) -> Result<SpaceGrid> {
    build_grid(problem.x0(), default_radius(problem.horizon(), rule), count)
}

/// Level `N`: `Y = Y~ = Phi(x, B_T)` and `Z` per `terminal_z`.
pub fn terminal_level(
    problem: &Problem,
    grid: &SpaceGrid,
    time: &TimeGrid,
    path: &BrownianPath,
    terminal_z: TerminalZ,
) -> Result<ValueLevel> {
    let n = time.n_steps();
    let b_terminal = path.b_terminal();
    let h = grid.spacing();
    let mut y = Vec::with_capacity(grid.count());
    let mut z = Vec::with_capacity(grid.count());
    for j in 0..grid.count() {
        let x = grid.node(j);
        let phi = problem.terminal(x, b_terminal);
        let zj = match terminal_z {
            TerminalZ::FiniteDifference => {
                (problem.terminal(x + h, b_terminal) - problem.terminal(x - h, b_terminal))
                    / (2.0 * h)
            }
            TerminalZ::Exact => problem
                .exact_z(time.horizon(), x, b_terminal, b_terminal)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "{} has no exact Z for the terminal seed",
                        problem.name()
                    ))
                })?,
        };
        if !phi.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal",
                at: x,
            }
            .at_node(n, j, x));
        }
        if !zj.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal z",
                at: x,
            }
            .at_node(n, j, x));
        }
        y.push(phi);
        z.push(zj);
    }
    Ok(ValueLevel {
        time_index: n,
        y_tilde: y.clone(),
        y,
        z,
    })
}

fn check_level(grid: &SpaceGrid, level: &ValueLevel) -> Result<()> {
    let n = grid.count();
    if level.y.len() != n || level.z.len() != n || level.y_tilde.len() != n {
        return Err(Error::invalid(format!(
            "level {} does not match the {n}-node grid",
            level.time_index
        )));
    }
    Ok(())
}

/// Predictor from level `i + 1 = next.time_index` to level `i`: returns
/// `(Y~^i, Z^i)` on the grid.
pub fn step_bsde<K: ConditionalExpectation>(
    problem: &Problem,
    grid: &SpaceGrid,
    kernel: &mut K,
    time: &TimeGrid,
    next: &ValueLevel,
    path: &BrownianPath,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_level(grid, next)?;
    if next.time_index == 0 || next.time_index > time.n_steps() {
        return Err(Error::invalid(format!(
            "no step below level {}",
            next.time_index
        )));
    }
    let i = next.time_index - 1;
    let dt = time.dt();
    let t_next = time.time(i + 1);
    let (b_next, b_terminal) = (path.at(i + 1), path.b_terminal());
    let mut y_tilde = Vec::with_capacity(grid.count());
    let mut z = Vec::with_capacity(grid.count());
    for j in 0..grid.count() {
        let x = grid.node(j);
        let h = |xp: f64| {
            let st = grid.stencil(xp);
            let y = SpaceGrid::apply_stencil(&next.y, st);
            let zp = SpaceGrid::apply_stencil(&next.z, st);
            y + dt * problem.f(t_next, xp, y, zp, b_next, b_terminal)
        };
        let (m0, m1) = kernel.moments(h, x, dt).map_err(|e| e.at_node(i, j, x))?;
        let zj = m1 / dt;
        if !m0.is_finite() {
            return Err(Error::NonFinite {
                what: "y_tilde",
                at: x,
            }
            .at_node(i, j, x));
        }
        if !zj.is_finite() {
            return Err(Error::NonFinite { what: "z", at: x }.at_node(i, j, x));
        }
        y_tilde.push(m0);
        z.push(zj);
    }
    Ok((y_tilde, z))
}

/// Milstein corrector on interval `i`: returns `Y^i` from `Y~^i`.
#[allow(clippy::too_many_arguments)]
pub fn step_sde<K: ConditionalExpectation>(
    problem: &Problem,
    grid: &SpaceGrid,
    kernel: &mut K,
    time: &TimeGrid,
    i: usize,
    y_tilde: &[f64],
    path: &BrownianPath,
    milstein: MilsteinForm,
) -> Result<Vec<f64>> {
    if y_tilde.len() != grid.count() {
        return Err(Error::invalid("y_tilde does not match the grid"));
    }
    if i >= time.n_steps() || path.n_steps() != time.n_steps() {
        return Err(Error::invalid(format!(
            "no interval {i} on this time grid/path"
        )));
    }
    let dt = time.dt();
    let t_next = time.time(i + 1);
    let (b_next, b_terminal) = (path.at(i + 1), path.b_terminal());
    let db = path.increments()[i];
    let half_ito = 0.5 * (db * db - dt);
    let mut y = Vec::with_capacity(grid.count());
    for (j, &xi) in y_tilde.iter().enumerate() {
        let x = grid.node(j);
        if !xi.is_finite() {
            return Err(Error::NonFinite {
                what: "y_tilde",
                at: x,
            }
            .at_node(i, j, x));
        }
        let (eg, ec) = kernel
            .mean_pair(
                |xp| problem.noise_terms(milstein, t_next, xp, xi, b_next, b_terminal),
                x,
                dt,
            )
            .map_err(|e| e.at_node(i, j, x))?;
        let yj = xi + db * eg + half_ito * ec;
        if !yj.is_finite() {
            return Err(Error::NonFinite { what: "y", at: x }.at_node(i, j, x));
        }
        y.push(yj);
    }
    Ok(y)
}

fn check_inputs(
    problem: &Problem,
    grid: &SpaceGrid,
    time: &TimeGrid,
    path: &BrownianPath,
) -> Result<()> {
    if path.n_steps() != time.n_steps() {
        return Err(Error::invalid(format!(
            "path has {} steps, time grid has {}",
            path.n_steps(),
            time.n_steps()
        )));
    }
    if (time.horizon() - problem.horizon()).abs() > 1e-12 * problem.horizon() {
        return Err(Error::invalid(format!(
            "time grid horizon {} differs from problem horizon {}",
            time.horizon(),
            problem.horizon()
        )));
    }
    if grid.count() < 5 {
        return Err(Error::invalid("grid too small"));
    }
    Ok(())
}

/// Run the full recursion `N -> 0` along `path`.
///
/// With `trace` every level is kept in [`SolveResult::levels`].
#[allow(clippy::too_many_arguments)]
pub fn solve_backward<K: ConditionalExpectation>(
    problem: &Problem,
    grid: &SpaceGrid,
    kernel: &mut K,
    time: &TimeGrid,
    path: &BrownianPath,
    settings: &SchemeSettings,
    trace: bool,
) -> Result<SolveResult> {
    run(problem, grid, kernel, time, path, settings, trace, true)
}

/// Plain explicit Euler BSDE solver: the predictor alone, `Y^i = Y~^i`.
///
/// `f` still receives `B` so that problems can be shared with the full scheme.
pub fn solve_bsde<K: ConditionalExpectation>(
    problem: &Problem,
    grid: &SpaceGrid,
    kernel: &mut K,
    time: &TimeGrid,
    path: &BrownianPath,
    terminal_z: TerminalZ,
) -> Result<SolveResult> {
    let settings = SchemeSettings {
        terminal_z,
        ..SchemeSettings::default()
    };
    run(problem, grid, kernel, time, path, &settings, false, false)
}

#[allow(clippy::too_many_arguments)]
fn run<K: ConditionalExpectation>(
    problem: &Problem,
    grid: &SpaceGrid,
    kernel: &mut K,
    time: &TimeGrid,
    path: &BrownianPath,
    settings: &SchemeSettings,
    trace: bool,
    with_noise: bool,
) -> Result<SolveResult> {
    check_inputs(problem, grid, time, path)?;
    let mut current = terminal_level(problem, grid, time, path, settings.terminal_z)?;
    let mut levels = trace.then(|| Vec::with_capacity(time.n_steps() + 1));
    for i in (0..time.n_steps()).rev() {
        let (y_tilde, z) = step_bsde(problem, grid, kernel, time, &current, path)?;
        let y = if with_noise {
            step_sde(
                problem,
                grid,
                kernel,
                time,
                i,
                &y_tilde,
                path,
                settings.milstein,
            )?
        } else {
            y_tilde.clone()
        };
        let level = ValueLevel {
            time_index: i,
            y_tilde,
            y,
            z,
        };
        if let Some(ls) = levels.as_mut() {
            ls.push(std::mem::replace(&mut current, level));
        } else {
            current = level;
        }
    }
    if let Some(ls) = levels.as_mut() {
        ls.push(current.clone());
        ls.reverse();
    }
    Ok(SolveResult {
        level0: current,
        levels,
    })
}

/// Write levels as whitespace-separated columns
/// `time_index node y_tilde y z`, where `node` is the grid coordinate.
pub fn write_trace<W: Write>(mut out: W, grid: &SpaceGrid, levels: &[ValueLevel]) -> Result<()> {
    writeln!(out, "# time_index node y_tilde y z")?;
    for level in levels {
        for j in 0..grid.count() {
            writeln!(
                out,
                "{} {} {} {} {}",
                level.time_index,
                grid.node(j),
                level.y_tilde[j],
                level.y[j],
                level.z[j]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::{sample_path, sample_seed, NormalStream};
    use crate::model::{self, FamilyParams};
    use crate::quadrature::hermite_rule;
    use approx::assert_abs_diff_eq;

    fn rule() -> QuadratureRule {
        hermite_rule(8).unwrap()
    }

    fn level(time_index: usize, y: Vec<f64>, z: Vec<f64>) -> ValueLevel {
        ValueLevel {
            time_index,
            y_tilde: y.clone(),
            y,
            z,
        }
    }

    fn constant(name: &str, f: f64, g: f64, terminal: f64) -> Problem {
        Problem::new(
            name,
            1.0,
            0.0,
            move |_, _, _, _, _, _| f,
            move |_, _, _, _, _| g,
            move |_, _| terminal,
        )
        .unwrap()
        .with_g_y_g(|_, _, _, _, _| 0.0)
        .with_g_b(|_, _, _, _, _| 0.0)
    }

    fn fixed_path(n: usize) -> BrownianPath {
        sample_path(&TimeGrid::new(n, 1.0).unwrap(), 1)
    }

    #[test]
    fn terminal_of_example_3() {
        let p = model::example_3();
        let grid = build_grid(0.0, 4.0, 33).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = fixed_path(4);
        let l = terminal_level(&p, &grid, &time, &path, TerminalZ::FiniteDifference).unwrap();
        assert_eq!(l.time_index, 4);
        for j in 0..grid.count() {
            assert_abs_diff_eq!(
                l.y[j],
                1.0 + grid.node(j) + path.b_terminal() / 2.0,
                epsilon = 1e-14
            );
            assert_eq!(l.y[j], l.y_tilde[j]);
            assert_abs_diff_eq!(l.z[j], 1.0, epsilon = 1e-10);
        }
        let exact = terminal_level(&p, &grid, &time, &path, TerminalZ::Exact).unwrap();
        assert!(exact.z.iter().all(|&v| v == 1.0));
        let zero = terminal_level(
            &constant("zero", 0.0, 0.0, 0.0),
            &grid,
            &time,
            &path,
            TerminalZ::FiniteDifference,
        )
        .unwrap();
        assert!(zero.y.iter().chain(&zero.z).all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_reports_bad_node() {
        let p = Problem::new(
            "bad",
            1.0,
            0.0,
            |_, _, _, _, _, _| 0.0,
            |_, _, _, _, _| 0.0,
            |x, _| if x > 0.9 { f64::NAN } else { x },
        )
        .unwrap();
        let grid = build_grid(0.0, 1.0, 5).unwrap();
        let err = terminal_level(
            &p,
            &grid,
            &TimeGrid::new(2, 1.0).unwrap(),
            &fixed_path(2),
            TerminalZ::FiniteDifference,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Solver {
                    level: 2,
                    node: 3,
                    ..
                } | Error::Solver {
                    level: 2,
                    node: 4,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn bsde_step_martingale_of_identity() {
        let p = constant("zero", 0.0, 0.0, 0.0);
        let grid = build_grid(0.0, 6.0, 121).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let next = level(8, grid.nodes(), vec![1.0; grid.count()]);
        let (yt, z) = step_bsde(&p, &grid, &mut &rule(), &time, &next, &fixed_path(8)).unwrap();
        for j in grid.middle_half() {
            assert_abs_diff_eq!(yt[j], grid.node(j), epsilon = 1e-8);
            assert_abs_diff_eq!(z[j], 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn bsde_step_constants() {
        let grid = build_grid(0.0, 3.0, 31).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = fixed_path(4);
        let next = level(3, vec![2.5; 31], vec![0.0; 31]);
        let (yt, z) = step_bsde(
            &constant("c", 0.0, 0.0, 0.0),
            &grid,
            &mut &rule(),
            &time,
            &next,
            &path,
        )
        .unwrap();
        for j in 0..31 {
            assert_abs_diff_eq!(yt[j], 2.5, epsilon = 1e-13);
            assert_abs_diff_eq!(z[j], 0.0, epsilon = 1e-12);
        }
        let next = level(3, vec![0.0; 31], vec![0.0; 31]);
        let (yt, z) = step_bsde(
            &constant("one", 1.0, 0.0, 0.0),
            &grid,
            &mut &rule(),
            &time,
            &next,
            &path,
        )
        .unwrap();
        for j in 0..31 {
            assert_abs_diff_eq!(yt[j], 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(z[j], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sde_step_closed_forms() {
        let grid = build_grid(0.0, 2.0, 9).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = fixed_path(4);
        let dt = time.dt();
        let yt: Vec<f64> = grid.nodes().iter().map(|x| x.sin() + 0.3).collect();
        let db = path.increments()[1];

        let y = step_sde(
            &constant("g0", 0.0, 0.0, 0.0),
            &grid,
            &mut &rule(),
            &time,
            1,
            &yt,
            &path,
            MilsteinForm::Complete,
        )
        .unwrap();
        assert_eq!(y, yt);

        let y = step_sde(
            &constant("g1", 0.0, 1.0, 0.0),
            &grid,
            &mut &rule(),
            &time,
            1,
            &yt,
            &path,
            MilsteinForm::Complete,
        )
        .unwrap();
        for j in 0..9 {
            assert_abs_diff_eq!(y[j], yt[j] + db, epsilon = 1e-13);
        }

        // g = y: g_y g = y, no b_t dependence
        let lin = Problem::new(
            "lin",
            1.0,
            0.0,
            |_, _, _, _, _, _| 0.0,
            |_, _, y, _, _| y,
            |x, _| x,
        )
        .unwrap()
        .with_g_y_g(|_, _, y, _, _| y)
        .with_g_b(|_, _, _, _, _| 0.0);
        let y = step_sde(
            &lin,
            &grid,
            &mut &rule(),
            &time,
            1,
            &yt,
            &path,
            MilsteinForm::Complete,
        )
        .unwrap();
        for j in 0..9 {
            let want = yt[j] * (1.0 + db + 0.5 * (db * db - dt));
            assert!((y[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn sde_step_linear_with_constant_coefficients() {
        // g = a y + c, f = 0: Milstein update y + (a y + c) dB + a (a y + c)(dB^2 - dt)/2
        let (a, c) = (0.7, -0.4);
        let p = Problem::new(
            "affine",
            1.0,
            0.0,
            |_, _, _, _, _, _| 0.0,
            move |_, _, y, _, _| a * y + c,
            |x, _| x,
        )
        .unwrap()
        .with_g_y_g(move |_, _, y, _, _| a * (a * y + c))
        .with_g_b(|_, _, _, _, _| 0.0);
        let grid = build_grid(0.0, 2.0, 9).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let path = fixed_path(8);
        let yt: Vec<f64> = (0..9).map(|j| j as f64 * 0.37 - 1.0).collect();
        let i = 5;
        let db = path.increments()[i];
        let y = step_sde(
            &p,
            &grid,
            &mut &rule(),
            &time,
            i,
            &yt,
            &path,
            MilsteinForm::Complete,
        )
        .unwrap();
        for j in 0..9 {
            let g = a * yt[j] + c;
            let want = yt[j] + g * db + 0.5 * a * g * (db * db - time.dt());
            assert!((y[j] - want).abs() <= 1e-12, "{} vs {want}", y[j]);
        }
    }

    #[test]
    fn noise_equal_to_current_b_is_exact() {
        // f = 0, g = b_t, terminal 0: Y_t = int_t^T B_s d<-B_s = (B_T^2 - B_t^2 + (T - t))/2
        let p = Problem::new(
            "g=b",
            1.0,
            0.0,
            |_, _, _, _, _, _| 0.0,
            |_, _, _, bt, _| bt,
            |_, _| 0.0,
        )
        .unwrap();
        let grid = build_grid(0.0, 2.0, 9).unwrap();
        let time = TimeGrid::new(16, 1.0).unwrap();
        let path = sample_path(&time, 99);
        let res = solve_backward(
            &p,
            &grid,
            &mut &rule(),
            &time,
            &path,
            &SchemeSettings::default(),
            false,
        )
        .unwrap();
        let bt = path.b_terminal();
        let want = 0.5 * (bt * bt + 1.0);
        for &v in &res.level0.y {
            assert_abs_diff_eq!(v, want, epsilon = 1e-8);
        }
        let y_only = SchemeSettings {
            milstein: MilsteinForm::YOnly,
            ..Default::default()
        };
        let res = solve_backward(&p, &grid, &mut &rule(), &time, &path, &y_only, false).unwrap();
        assert!((res.level0.y[4] - want).abs() > 1e-3);
    }

    #[test]
    fn full_martingale() {
        let p = model::zero_driver(&FamilyParams::default()).unwrap();
        let r = rule();
        // wide enough that clamping at the edges is invisible on the middle half
        let grid = build_grid(0.0, 12.0, 321).unwrap();
        for n in [8usize, 32, 128] {
            let time = TimeGrid::new(n, 1.0).unwrap();
            let path = sample_path(&time, 3);
            let res = solve_backward(
                &p,
                &grid,
                &mut &r,
                &time,
                &path,
                &SchemeSettings::default(),
                false,
            )
            .unwrap();
            for j in grid.middle_half() {
                assert_abs_diff_eq!(res.level0.y[j], grid.node(j), epsilon = 1e-6);
                assert_abs_diff_eq!(res.level0.z[j], 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn default_grid_martingale_leak_is_gaussian_tail() {
        // Probes beyond the default radius see a clamped value; the edge of the
        // middle half sits ~4.57 standard deviations of W_T from the boundary,
        // so Z picks up about P(W_1 > 4.57) ~ 2.4e-6.
        let p = model::zero_driver(&FamilyParams::default()).unwrap();
        let r = rule();
        let grid = default_grid(&p, &r, 257).unwrap();
        let time = TimeGrid::new(128, 1.0).unwrap();
        let res = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &fixed_path(128),
            &SchemeSettings::default(),
            false,
        )
        .unwrap();
        let worst = grid
            .middle_half()
            .map(|j| (res.level0.z[j] - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst > 1e-7 && worst < 5e-6, "{worst}");
        assert!((res.level0.z[grid.center_index()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example_3_z_near_one() {
        let p = model::example_3();
        let r = rule();
        let grid = default_grid(&p, &r, 257).unwrap();
        let time = TimeGrid::new(32, 1.0).unwrap();
        for k in 0..3 {
            let path = sample_path(&time, sample_seed(42, k));
            let res = solve_backward(
                &p,
                &grid,
                &mut &r,
                &time,
                &path,
                &SchemeSettings::default(),
                false,
            )
            .unwrap();
            let worst = grid
                .middle_half()
                .map(|j| (res.level0.z[j] - 1.0).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 0.05, "path {k}: {worst}");
        }
    }

    #[test]
    fn bsde_reduction_is_bitwise() {
        let mut p = model::example_3();
        p = Problem::new(
            "no-noise",
            1.0,
            0.0,
            move |t, x, y, z, bt, b_end| p.f(t, x, y, z, bt, b_end),
            |_, _, _, _, _| 0.0,
            |x, b_end| 1.0 + x + b_end / 2.0,
        )
        .unwrap();
        let r = rule();
        let grid = default_grid(&p, &r, 65).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let path = sample_path(&time, 8);
        let full = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &path,
            &SchemeSettings::default(),
            false,
        )
        .unwrap();
        let bsde = solve_bsde(
            &p,
            &grid,
            &mut &r,
            &time,
            &path,
            TerminalZ::FiniteDifference,
        )
        .unwrap();
        assert_eq!(full.level0, bsde.level0);
    }

    #[test]
    fn level_depends_only_on_later_increments() {
        let p = model::example_1();
        let r = rule();
        let grid = default_grid(&p, &r, 65).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = sample_path(&time, 12);
        let mut inc = path.increments().to_vec();
        inc[0] += 0.8;
        let bumped = BrownianPath::from_increments(inc).unwrap();
        let a = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &path,
            &SchemeSettings::default(),
            true,
        )
        .unwrap();
        let b = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &bumped,
            &SchemeSettings::default(),
            true,
        )
        .unwrap();
        let (la, lb) = (a.levels.unwrap(), b.levels.unwrap());
        for (u, v) in la[1]
            .y
            .iter()
            .zip(&lb[1].y)
            .chain(la[1].z.iter().zip(&lb[1].z))
        {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
        assert!((la[0].y[32] - lb[0].y[32]).abs() > 1e-3);
    }

    #[test]
    fn trace_keeps_all_levels() {
        let p = model::example_3();
        let r = rule();
        let grid = default_grid(&p, &r, 17).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = fixed_path(4);
        let res = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &path,
            &SchemeSettings::default(),
            true,
        )
        .unwrap();
        let levels = res.levels.as_ref().unwrap();
        assert_eq!(levels.len(), 5);
        for (i, l) in levels.iter().enumerate() {
            assert_eq!(l.time_index, i);
        }
        assert_eq!(levels[0], res.level0);
        let mut buf = Vec::new();
        write_trace(&mut buf, &grid, levels).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 17);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], "0");
    }

    #[test]
    fn blowup_is_reported_with_context() {
        let p = Problem::new(
            "riccati",
            1.0,
            0.0,
            |_, _, y, _, _, _| 1e200 * y * y,
            |_, _, _, _, _| 0.0,
            |_, _| 1e150,
        )
        .unwrap();
        let r = rule();
        let grid = build_grid(0.0, 3.0, 9).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let err = solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &fixed_path(4),
            &SchemeSettings::default(),
            false,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Solver {
                    level: 3,
                    node: 0,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn mismatched_inputs() {
        let p = model::example_3();
        let r = rule();
        let grid = default_grid(&p, &r, 17).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        assert!(solve_backward(
            &p,
            &grid,
            &mut &r,
            &time,
            &fixed_path(8),
            &SchemeSettings::default(),
            false
        )
        .is_err());
        let half = TimeGrid::new(4, 0.5).unwrap();
        assert!(solve_backward(
            &p,
            &grid,
            &mut &r,
            &half,
            &fixed_path(4),
            &SchemeSettings::default(),
            false
        )
        .is_err());
    }

    #[test]
    fn one_step_matches_brute_force_expectation() {
        // smooth synthetic level data
        let p = Problem::new(
            "synthetic",
            1.0,
            0.0,
            |t, x, y, z, bt, _| 0.3 * y.sin() - 0.2 * z * z + t * x.cos() + bt,
            |_, _, _, _, _| 0.0,
            |_, _| 0.0,
        )
        .unwrap();
        let grid = build_grid(0.0, 4.0, 161).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let path = fixed_path(4);
        let next = level(
            3,
            grid.nodes()
                .iter()
                .map(|x| (0.8 * x).sin() + 0.1 * x * x)
                .collect(),
            grid.nodes()
                .iter()
                .map(|x| 0.8 * (0.8 * x).cos() + 0.2 * x)
                .collect(),
        );
        let (yt, z) = step_bsde(&p, &grid, &mut &rule(), &time, &next, &path).unwrap();
        let dt = time.dt();
        let (t_next, b_next, b_end) = (time.time(3), path.at(3), path.b_terminal());
        let mut normals = NormalStream::new(0xfeed);
        let m = 1_000_000usize;
        for &j in &[60usize, 80, 95] {
            let x = grid.node(j);
            let (mut s0, mut q0, mut s1, mut q1) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..m {
                let dw = dt.sqrt() * normals.next_normal();
                let xp = x + dw;
                let st = grid.stencil(xp);
                let y = SpaceGrid::apply_stencil(&next.y, st);
                let zz = SpaceGrid::apply_stencil(&next.z, st);
                let h = y + dt * p.f(t_next, xp, y, zz, b_next, b_end);
                let hz = h * dw / dt;
                s0 += h;
                q0 += h * h;
                s1 += hz;
                q1 += hz * hz;
            }
            let mf = m as f64;
            let (mean0, mean1) = (s0 / mf, s1 / mf);
            let se0 = ((q0 / mf - mean0 * mean0) / mf).sqrt();
            let se1 = ((q1 / mf - mean1 * mean1) / mf).sqrt();
            assert!(
                (yt[j] - mean0).abs() <= 4.0 * se0,
                "y_tilde at {x}: {} vs {mean0} (se {se0})",
                yt[j]
            );
            assert!(
                (z[j] - mean1).abs() <= 4.0 * se1,
                "z at {x}: {} vs {mean1} (se {se1})",
                z[j]
            );
        }
    }
}
