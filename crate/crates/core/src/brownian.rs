//! Seeded sampling of the backward noise `B` on a uniform time grid.
//!
//! Each Monte Carlo sample `k` draws its path from its own generator, seeded
//! with [`sample_seed`]`(base, k)`, so the stream a sample sees never depends
//! on scheduling. The generator is ChaCha8 and normals come from the
//! Box–Muller transform, both pairs of every uniform draw being used.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Uniform partition `t_i = i * dt` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
    dt: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(TimeGrid {
            n_steps,
            horizon,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_i`; `time(n_steps)` is exactly the horizon.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }
}

/// One realisation of `B` on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BrownianPath {
    /// Build a path from its increments `dB_i = B_{t_{i+1}} - B_{t_i}`.
    pub fn from_increments(increments: Vec<f64>) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::invalid("a path needs at least one increment"));
        }
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        let mut acc = 0.0;
        cumulative.push(acc);
        for &d in &increments {
            acc += d;
            cumulative.push(acc);
        }
        Ok(BrownianPath {
            increments,
            cumulative,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `B_{t_0}, ..., B_{t_N}` with `B_{t_0} = 0`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `B_{t_i}`.
    pub fn at(&self, i: usize) -> f64 {
        self.cumulative[i]
    }

    pub fn b_terminal(&self) -> f64 {
        self.cumulative[self.increments.len()]
    }

    /// Sum adjacent pairs of increments `halvings` times, halving the step
    /// count each time.
    pub fn coarsen(&self, halvings: u32) -> Result<Self> {
        let mut inc = self.increments.clone();
        for _ in 0..halvings {
            if !inc.len().is_multiple_of(2) {
                return Err(Error::invalid(format!(
                    "cannot halve a path with {} steps",
                    inc.len()
                )));
            }
            inc = inc.chunks_exact(2).map(|p| p[0] + p[1]).collect();
        }
        BrownianPath::from_increments(inc)
    }
}

/// splitmix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for Monte Carlo sample `k`:
/// `mix64(mix64(base) + (k + 1) * 0x9e3779b97f4a7c15)`.
pub fn sample_seed(base: u64, k: u64) -> u64 {
    mix64(mix64(base).wrapping_add(k.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Standard normals via Box–Muller on ChaCha8 uniforms.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Draw `N` independent `N(0, dt)` increments.
pub fn sample_path(grid: &TimeGrid, seed: u64) -> BrownianPath {
    let mut normals = NormalStream::new(seed);
    let sd = grid.dt().sqrt();
    let inc = (0..grid.n_steps())
        .map(|_| sd * normals.next_normal())
        .collect();
    BrownianPath::from_increments(inc).expect("grid has at least one step")
}
