//! Uniform 1-D grids and cubic Lagrange interpolation of grid functions.
//!
//! The value functions `Y^i(.)`, `Z^i(.)` of each time level are stored as
//! samples on a [`SpaceGrid`]. Quadrature probes fall between nodes, so they
//! are read back through a 4-point Lagrange stencil. Probes outside the grid
//! take the value at the nearest boundary node.

use crate::{Error, Result};

/// Default number of nodes.
pub const DEFAULT_COUNT: usize = 257;

/// Uniform grid `center - radius, ..., center + radius` with an odd number of
/// nodes so that `center` is itself a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    center: f64,
    radius: f64,
    count: usize,
    spacing: f64,
}

impl SpaceGrid {
    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Index of the center node.
    pub fn center_index(&self) -> usize {
        self.count / 2
    }

    /// Node `j`, computed from the center so that the center node is exact.
    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.center + (j as f64 - self.center_index() as f64) * self.spacing
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.node(j)).collect()
    }

    pub fn min(&self) -> f64 {
        self.node(0)
    }

    pub fn max(&self) -> f64 {
        self.node(self.count - 1)
    }

    /// Indices of the nodes with `|x - center| <= radius / 2`.
    pub fn middle_half(&self) -> std::ops::Range<usize> {
        let c = self.center_index();
        let k = c / 2;
        (c - k)..(c + k + 1)
    }

    /// Cubic Lagrange weights for `x`: returns the first stencil index and the
    /// four weights. Nodes and out-of-range points get a single unit weight.
    #[inline]
    pub fn stencil(&self, x: f64) -> (usize, [f64; 4]) {
        let n = self.count;
        let pos = (x.clamp(self.min(), self.max()) - self.min()) / self.spacing;
        let nearest = pos.round();
        if (pos - nearest).abs() <= 1e-12 || x <= self.min() || x >= self.max() {
            let j = if x <= self.min() {
                0
            } else if x >= self.max() {
                n - 1
            } else {
                nearest as usize
            };
            let start = j.saturating_sub(1).min(n - 4);
            let mut w = [0.0; 4];
            w[j - start] = 1.0;
            return (start, w);
        }
        let start = (pos.floor() as usize).saturating_sub(1).min(n - 4);
        let u = pos - start as f64;
        let (u1, u2, u3) = (u - 1.0, u - 2.0, u - 3.0);
        (
            start,
            [
                -u1 * u2 * u3 / 6.0,
                u * u2 * u3 / 2.0,
                -u * u1 * u3 / 2.0,
                u * u1 * u2 / 6.0,
            ],
        )
    }

    /// Evaluate the interpolant of `values` using a precomputed stencil.
    #[inline]
    pub fn apply_stencil(values: &[f64], (start, w): (usize, [f64; 4])) -> f64 {
        w[0] * values[start]
            + w[1] * values[start + 1]
            + w[2] * values[start + 2]
            + w[3] * values[start + 3]
    }
}

/// Build a uniform grid of `count` nodes spanning `center +- radius`.
pub fn build_grid(center: f64, radius: f64, count: usize) -> Result<SpaceGrid> {
    if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
        return Err(Error::invalid(format!(
            "grid needs a finite center and positive radius, got center={center} radius={radius}"
        )));
    }
    if count < 5 || count.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "grid node count must be odd and at least 5, got {count}"
        )));
    }
    Ok(SpaceGrid {
        center,
        radius,
        count,
        spacing: 2.0 * radius / (count - 1) as f64,
    })
}

/// Piecewise cubic interpolation of grid samples, constant outside the grid.
pub fn interpolate(values: &[f64], grid: &SpaceGrid, x: f64) -> Result<f64> {
    if values.len() != grid.count() {
        return Err(Error::invalid(format!(
            "value array has {} entries, grid has {} nodes",
            values.len(),
            grid.count()
        )));
    }
    Ok(SpaceGrid::apply_stencil(values, grid.stencil(x)))
}

/// Grid samples of `(Y~^i, Y^i, Z^i)` at time level `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueLevel {
    pub time_index: usize,
    pub y_tilde: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl ValueLevel {
    /// First non-finite entry as `(node, which array)`.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        for (name, arr) in [("y_tilde", &self.y_tilde), ("y", &self.y), ("z", &self.z)] {
            if let Some(j) = arr.iter().position(|v| !v.is_finite()) {
                return Some((j, name));
            }
        }
        None
    }
}
