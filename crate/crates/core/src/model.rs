//! BDSDE problem definitions.
//!
//! A [`Problem`] bundles the coefficients of
//!
//! ```text
//! Y_t = Phi(X_T, B_T) + int_t^T f ds - int_t^T Z dW + int_t^T g d<-B,   X_t = X_0 + W_t
//! ```
//!
//! Coefficients receive the current value `b_t` of the backward noise and its
//! terminal value `b_T` in addition to `(t, x, y[, z])`, since the solution
//! is conditioned on the whole `B` path.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// `f(t, x, y, z, b_t, b_T)`.
pub type Driver = Arc<dyn Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `g(t, x, y, b_t, b_T)` and functions of the same shape.
pub type NoiseCoefficient = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `Phi(x, b_T)`.
pub type Terminal = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Exact `Y` or `Z` as a function of `(t, x, b_t, b_T)`.
pub type ExactSolution = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Relative step for finite-difference fallbacks.
const FD_STEP: f64 = 1e-6;

/// Which second-order term the Milstein corrector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MilsteinForm {
    /// `g_y g - g_b`: accounts for `g` depending on `b_t` as well as on `y`.
    #[default]
    Complete,
    /// `g_y g` only; exact for coefficients that do not read `b_t`.
    YOnly,
}

impl MilsteinForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            MilsteinForm::Complete => "complete",
            MilsteinForm::YOnly => "y-only",
        }
    }
}

impl std::str::FromStr for MilsteinForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(MilsteinForm::Complete),
            "y-only" => Ok(MilsteinForm::YOnly),
            other => Err(Error::invalid(format!(
                "unknown Milstein form {other:?} (expected complete | y-only)"
            ))),
        }
    }
}

/// Coefficient bundle of a scalar BDSDE.
#[derive(Clone)]
pub struct Problem {
    name: String,
    horizon: f64,
    x0: f64,
    f: Driver,
    g: NoiseCoefficient,
    g_y_g: Option<NoiseCoefficient>,
    g_b: Option<NoiseCoefficient>,
    terminal: Terminal,
    exact_y: Option<ExactSolution>,
    exact_z: Option<ExactSolution>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("g_y_g", &self.g_y_g.is_some())
            .field("g_b", &self.g_b.is_some())
            .field("exact", &self.has_exact_solution())
            .finish()
    }
}

impl Problem {
    /// A problem with driver `f`, noise coefficient `g` and terminal `Phi`.
    ///
    /// Without [`with_g_y_g`](Self::with_g_y_g) / [`with_g_b`](Self::with_g_b)
    /// the corresponding derivatives are taken by central differences.
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        x0: f64,
        f: impl Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !x0.is_finite() {
            return Err(Error::invalid(format!(
                "initial state must be finite, got {x0}"
            )));
        }
        Ok(Problem {
            name: name.into(),
            horizon,
            x0,
            f: Arc::new(f),
            g: Arc::new(g),
            g_y_g: None,
            g_b: None,
            terminal: Arc::new(terminal),
            exact_y: None,
            exact_z: None,
        })
    }

    /// Supply the product `g_y * g` analytically.
    pub fn with_g_y_g(
        mut self,
        h: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.g_y_g = Some(Arc::new(h));
        self
    }

    /// Supply `dg/db_t` analytically.
    pub fn with_g_b(
        mut self,
        h: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.g_b = Some(Arc::new(h));
        self
    }

    pub fn with_exact(
        mut self,
        y: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        z: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.exact_y = Some(Arc::new(y));
        self.exact_z = Some(Arc::new(z));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    #[inline]
    pub fn f(&self, t: f64, x: f64, y: f64, z: f64, b_t: f64, b_terminal: f64) -> f64 {
        (self.f)(t, x, y, z, b_t, b_terminal)
    }

    #[inline]
    pub fn g(&self, t: f64, x: f64, y: f64, b_t: f64, b_terminal: f64) -> f64 {
        (self.g)(t, x, y, b_t, b_terminal)
    }

    /// `(g_y g)(t, x, y)`, by central difference in `y` when not supplied.
    #[inline]
    pub fn g_y_g(&self, t: f64, x: f64, y: f64, b_t: f64, b_terminal: f64) -> f64 {
        match &self.g_y_g {
            Some(h) => h(t, x, y, b_t, b_terminal),
            None => {
                let d = FD_STEP * y.abs().max(1.0);
                let gy = (self.g(t, x, y + d, b_t, b_terminal)
                    - self.g(t, x, y - d, b_t, b_terminal))
                    / (2.0 * d);
                gy * self.g(t, x, y, b_t, b_terminal)
            }
        }
    }

    /// `dg/db_t`, by central difference when not supplied.
    #[inline]
    pub fn g_b(&self, t: f64, x: f64, y: f64, b_t: f64, b_terminal: f64) -> f64 {
        match &self.g_b {
            Some(h) => h(t, x, y, b_t, b_terminal),
            None => {
                let d = FD_STEP * b_t.abs().max(1.0);
                (self.g(t, x, y, b_t + d, b_terminal) - self.g(t, x, y, b_t - d, b_terminal))
                    / (2.0 * d)
            }
        }
    }

    /// `g` and the coefficient of `(dB^2 - dt) / 2` in the Milstein corrector.
    #[inline]
    pub fn noise_terms(
        &self,
        form: MilsteinForm,
        t: f64,
        x: f64,
        y: f64,
        b_t: f64,
        b_terminal: f64,
    ) -> (f64, f64) {
        let g = self.g(t, x, y, b_t, b_terminal);
        let second = match form {
            MilsteinForm::Complete => {
                self.g_y_g(t, x, y, b_t, b_terminal) - self.g_b(t, x, y, b_t, b_terminal)
            }
            MilsteinForm::YOnly => self.g_y_g(t, x, y, b_t, b_terminal),
        };
        (g, second)
    }

    #[inline]
    pub fn terminal(&self, x: f64, b_terminal: f64) -> f64 {
        (self.terminal)(x, b_terminal)
    }

    pub fn has_exact_solution(&self) -> bool {
        self.exact_y.is_some() && self.exact_z.is_some()
    }

    pub fn exact_y(&self, t: f64, x: f64, b_t: f64, b_terminal: f64) -> Option<f64> {
        self.exact_y.as_ref().map(|h| h(t, x, b_t, b_terminal))
    }

    pub fn exact_z(&self, t: f64, x: f64, b_t: f64, b_terminal: f64) -> Option<f64> {
        self.exact_z.as_ref().map(|h| h(t, x, b_t, b_terminal))
    }

    /// Randomised smoke check: coefficients are finite on a box around `x0`,
    /// and a supplied exact solution matches the terminal condition at `T`.
    pub fn validate(&self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_max = self.horizon;
        for _ in 0..256 {
            let t = rng.random_range(0.0..=t_max);
            let x = self.x0 + rng.random_range(-8.0..8.0);
            let y = rng.random_range(-4.0..4.0);
            let z = rng.random_range(-4.0..4.0);
            let b_t = rng.random_range(-3.0..3.0);
            let b_terminal = rng.random_range(-3.0..3.0);
            let values = [
                ("f", self.f(t, x, y, z, b_t, b_terminal)),
                ("g", self.g(t, x, y, b_t, b_terminal)),
                ("g_y_g", self.g_y_g(t, x, y, b_t, b_terminal)),
                ("g_b", self.g_b(t, x, y, b_t, b_terminal)),
                ("terminal", self.terminal(x, b_terminal)),
            ];
            for (what, v) in values {
                if !v.is_finite() {
                    return Err(Error::NonFinite { what, at: x });
                }
            }
            if let Some(ey) = self.exact_y(t_max, x, b_terminal, b_terminal) {
                let phi = self.terminal(x, b_terminal);
                if (ey - phi).abs() > 1e-10 * phi.abs().max(1.0) {
                    return Err(Error::invalid(format!(
                        "{}: exact solution at T ({ey}) differs from terminal ({phi}) at x = {x}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parameters shared by the built-in coefficient families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    pub horizon: f64,
    pub x0: f64,
    /// Terminal slope for the linear families.
    pub slope: f64,
    /// Terminal intercept for the linear families.
    pub intercept: f64,
    /// Constant noise coefficient for `additive-noise`.
    pub noise: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            horizon: 1.0,
            x0: 0.0,
            slope: 1.0,
            intercept: 0.0,
            noise: 0.0,
        }
    }
}

/// Names accepted by [`by_name`].
pub const FAMILIES: &[&str] = &[
    "example1",
    "example2",
    "example3",
    "example1-printed",
    "example2-printed",
    "zero-driver",
    "additive-noise",
];

/// Look up a built-in problem family.
pub fn by_name(name: &str, p: &FamilyParams) -> Result<Problem> {
    match name {
        "example1" => example_1_with(p.horizon, p.x0),
        "example2" => example_2_with(p.horizon, p.x0),
        "example3" => example_3_with(p.horizon, p.x0),
        "example1-printed" => example_1_printed(p.horizon, p.x0),
        "example2-printed" => example_2_printed(p.horizon, p.x0),
        "zero-driver" => zero_driver(p),
        "additive-noise" => additive_noise(p),
        other => Err(Error::invalid(format!(
            "unknown problem {other:?}; expected one of {}",
            FAMILIES.join(", ")
        ))),
    }
}

/// Example 1 with `T = 1`, `X_0 = 0`.
pub fn example_1() -> Problem {
    example_1_with(1.0, 0.0).expect("valid defaults")
}

/// Example 2 with `T = 1`, `X_0 = 0`.
pub fn example_2() -> Problem {
    example_2_with(1.0, 0.0).expect("valid defaults")
}

/// Example 3 with `T = 1`, `X_0 = 0`.
pub fn example_3() -> Problem {
    example_3_with(1.0, 0.0).expect("valid defaults")
}

/// Example 1: `Y_t = sin(t + W_t) + (B_T - B_t)/4`, `Z_t = cos(t + W_t)`.
///
/// `f = y/2 - z + (b_t - b_T)/8` and `g = (cos^2(t + w) + s^2)/4` with
/// `s = y + (b_t - b_T)/4`, so that `s = sin(t + W_t)` and `g = 1/4` along
/// the solution.
pub fn example_1_with(horizon: f64, x0: f64) -> Result<Problem> {
    let big_t = horizon;
    let shift = |y: f64, bt: f64, b_end: f64| y + (bt - b_end) / 4.0;
    Ok(Problem::new(
        "example1",
        horizon,
        x0,
        |_t, _x, y, z, bt, b_terminal| y / 2.0 - z + (bt - b_terminal) / 8.0,
        move |t, x, y, bt, b_terminal| {
            let c = (t + x - x0).cos();
            let s = shift(y, bt, b_terminal);
            0.25 * (c * c + s * s)
        },
        move |x, _b_terminal| (big_t + x - x0).sin(),
    )?
    .with_g_y_g(move |t, x, y, bt, b_terminal| {
        let c = (t + x - x0).cos();
        let s = shift(y, bt, b_terminal);
        0.5 * s * 0.25 * (c * c + s * s)
    })
    .with_g_b(move |_t, _x, y, bt, b_terminal| 0.125 * shift(y, bt, b_terminal))
    .with_exact(
        move |t, x, bt, b_terminal| (t + x - x0).sin() - bt / 4.0 + b_terminal / 4.0,
        move |t, x, _bt, _b_terminal| (t + x - x0).cos(),
    ))
}

/// Example 1 with the noise coefficient exactly as commonly printed,
/// `g = (cos^2(t + w) + y - ((b_t - b_T)/8)^2) / 4`.
///
/// This `g` is not `1/4` along the stated exact solution, so the scheme
/// converges to a different process and the errors against the stated
/// solution plateau. Kept for comparison.
pub fn example_1_printed(horizon: f64, x0: f64) -> Result<Problem> {
    let base = example_1_with(horizon, x0)?;
    let g = move |t: f64, x: f64, y: f64, bt: f64, b_terminal: f64| {
        let c = (t + x - x0).cos();
        let d = (bt - b_terminal) / 8.0;
        0.25 * (c * c + y - d * d)
    };
    let mut p = Problem::new(
        "example1-printed",
        horizon,
        x0,
        move |t, x, y, z, bt, b_end| base.f(t, x, y, z, bt, b_end),
        g,
        move |x, _| (horizon + x - x0).sin(),
    )?
    .with_g_y_g(move |t, x, y, bt, b_terminal| 0.25 * g(t, x, y, bt, b_terminal))
    .with_g_b(|_t, _x, _y, bt, b_terminal| -(bt - b_terminal) / 128.0);
    let exact = example_1_with(horizon, x0)?;
    p.exact_y = exact.exact_y.clone();
    p.exact_z = exact.exact_z.clone();
    Ok(p)
}

/// Example 2: `Y_t = sin(W_t) + t + B_t`, `Z_t = cos(W_t)`.
///
/// `f = -(y - t - b_t)^2 - cos^2 w + sin(w)/2`, `g = -(y - t - b_t)^2 - cos^2 w`,
/// giving `f = sin(w)/2 - 1` and `g = -1` along the solution.
pub fn example_2_with(horizon: f64, x0: f64) -> Result<Problem> {
    Ok(Problem::new(
        "example2",
        horizon,
        x0,
        move |t, x, y, _z, bt, _b_terminal| {
            let w = x - x0;
            let d = y - t - bt;
            -d * d - w.cos().powi(2) + 0.5 * w.sin()
        },
        move |t, x, y, bt, _b_terminal| {
            let d = y - t - bt;
            -d * d - (x - x0).cos().powi(2)
        },
        move |x, b_terminal| (x - x0).sin() + horizon + b_terminal,
    )?
    .with_g_y_g(move |t, x, y, bt, _b_terminal| {
        let d = y - t - bt;
        -2.0 * d * (-d * d - (x - x0).cos().powi(2))
    })
    .with_g_b(|t, _x, y, bt, _b_terminal| 2.0 * (y - t - bt))
    .with_exact(
        move |t, x, bt, _b_terminal| (x - x0).sin() + t + bt,
        move |_t, x, _bt, _b_terminal| (x - x0).cos(),
    ))
}

/// Example 2 with the opposite overall sign on `f` and `g`, as commonly
/// printed: `f = (y - t - b_t)^2 + cos^2 w - sin(w)/2`, `g = (y - t - b_t)^2 + cos^2 w`.
///
/// Along the stated solution these have the wrong sign for the equation, and
/// the quadratic driver makes the scheme diverge. Kept for comparison.
pub fn example_2_printed(horizon: f64, x0: f64) -> Result<Problem> {
    let mut p = Problem::new(
        "example2-printed",
        horizon,
        x0,
        move |t, x, y, _z, bt, _b_terminal| {
            let w = x - x0;
            let d = y - t - bt;
            d * d + w.cos().powi(2) - 0.5 * w.sin()
        },
        move |t, x, y, bt, _b_terminal| {
            let d = y - t - bt;
            d * d + (x - x0).cos().powi(2)
        },
        move |x, b_terminal| (x - x0).sin() + horizon + b_terminal,
    )?
    .with_g_y_g(move |t, x, y, bt, _b_terminal| {
        let d = y - t - bt;
        2.0 * d * (d * d + (x - x0).cos().powi(2))
    })
    .with_g_b(|t, _x, y, bt, _b_terminal| -2.0 * (y - t - bt));
    let exact = example_2_with(horizon, x0)?;
    p.exact_y = exact.exact_y.clone();
    p.exact_z = exact.exact_z.clone();
    Ok(p)
}

/// Example 3: `Y_t = t + W_t + B_t/2`, `Z_t = 1`.
///
/// `f = -sin^2(y)/2 - cos^2(t + w + b_t/2)/2 - z^2/2`,
/// `g = -sin^2(y)/2 - cos^2(t + w + b_t/2)/2`.
pub fn example_3_with(horizon: f64, x0: f64) -> Result<Problem> {
    let g = move |t: f64, x: f64, y: f64, bt: f64, _b_terminal: f64| {
        let phase = t + (x - x0) + bt / 2.0;
        -0.5 * y.sin().powi(2) - 0.5 * phase.cos().powi(2)
    };
    Ok(Problem::new(
        "example3",
        horizon,
        x0,
        move |t, x, y, z, bt, b_terminal| g(t, x, y, bt, b_terminal) - 0.5 * z * z,
        g,
        move |x, b_terminal| horizon + (x - x0) + b_terminal / 2.0,
    )?
    .with_g_y_g(move |t, x, y, bt, b_terminal| -y.sin() * y.cos() * g(t, x, y, bt, b_terminal))
    .with_g_b(move |t, x, _y, bt, _b_terminal| {
        let phase = t + (x - x0) + bt / 2.0;
        0.5 * phase.sin() * phase.cos()
    })
    .with_exact(
        move |t, x, bt, _b_terminal| t + (x - x0) + bt / 2.0,
        |_t, _x, _bt, _b_terminal| 1.0,
    ))
}

/// `f = g = 0` with a linear terminal: `Y_t = slope * X_t + intercept`, `Z = slope`.
pub fn zero_driver(p: &FamilyParams) -> Result<Problem> {
    let FamilyParams {
        slope, intercept, ..
    } = *p;
    Ok(Problem::new(
        "zero-driver",
        p.horizon,
        p.x0,
        |_, _, _, _, _, _| 0.0,
        |_, _, _, _, _| 0.0,
        move |x, _| slope * x + intercept,
    )?
    .with_g_y_g(|_, _, _, _, _| 0.0)
    .with_g_b(|_, _, _, _, _| 0.0)
    .with_exact(
        move |_, x, _, _| slope * x + intercept,
        move |_, _, _, _| slope,
    ))
}

/// `f = 0`, `g = noise`: `Y_t = slope * X_t + intercept + noise (B_T - B_t)`.
pub fn additive_noise(p: &FamilyParams) -> Result<Problem> {
    let FamilyParams {
        slope,
        intercept,
        noise,
        ..
    } = *p;
    Ok(Problem::new(
        "additive-noise",
        p.horizon,
        p.x0,
        |_, _, _, _, _, _| 0.0,
        move |_, _, _, _, _| noise,
        move |x, _| slope * x + intercept,
    )?
    .with_g_y_g(|_, _, _, _, _| 0.0)
    .with_g_b(|_, _, _, _, _| 0.0)
    .with_exact(
        move |_, x, bt, b_terminal| slope * x + intercept + noise * (b_terminal - bt),
        move |_, _, _, _| slope,
    ))
}
