//! Gauss–Hermite quadrature and the conditional-expectation kernels of the
//! scheme.
//!
//! Every conditional expectation `E_{t_i}[h(X^{i+1})]` given `X^i = x` is an
//! integral against the density of `x + dW`, `dW ~ N(0, dt)`. With the change
//! of variables `x' = x + sqrt(2 dt) u` it becomes
//!
//! ```text
//! E[h(x + dW)] = pi^{-1/2} * int h(x + sqrt(2 dt) u) exp(-u^2) du
//!             ~= pi^{-1/2} * sum_j w_j h(x + sqrt(2 dt) a_j)
//! ```
//!
//! where `(a_j, w_j)` is the Gauss–Hermite rule for the weight `exp(-u^2)`.
//! The weighted sum is accumulated in node order and multiplied by
//! `pi^{-1/2}` once at the end, so results are reproducible given identical
//! integrands.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Largest supported number of nodes.
pub const MAX_ORDER: usize = 64;

/// Default node count used by the solver (exact through degree 15).
pub const DEFAULT_ORDER: usize = 8;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// A Gauss–Hermite rule for the weight function `exp(-u^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Number of nodes `q`.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Abscissas in strictly increasing order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest `|a_j|`; the probe reach of one step is `sqrt(2 dt) * max_abs_node()`.
    pub fn max_abs_node(&self) -> f64 {
        self.nodes.last().copied().unwrap_or(0.0).abs()
    }

    /// `int h(u) exp(-u^2) du` approximated by the rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| w * h(a))
            .sum()
    }

    /// `E[h(x + dW)]` with `dW ~ N(0, dt)`.
    pub fn conditional_mean<F: FnMut(f64) -> f64>(&self, mut h: F, x: f64, dt: f64) -> Result<f64> {
        check_dt(dt)?;
        let scale = (2.0 * dt).sqrt();
        let mut acc = 0.0;
        for (&a, &w) in self.nodes.iter().zip(&self.weights) {
            let probe = x + scale * a;
            acc += w * finite(h(probe), probe)?;
        }
        Ok(acc * inv_sqrt_pi())
    }

    /// `E[h(x + dW) dW]` with `dW ~ N(0, dt)`. The caller divides by `dt` to
    /// obtain the `Z` estimate.
    pub fn conditional_mean_times_dw<F: FnMut(f64) -> f64>(
        &self,
        h: F,
        x: f64,
        dt: f64,
    ) -> Result<f64> {
        self.conditional_moments(h, x, dt).map(|(_, m1)| m1)
    }

    /// Both `E[h(x + dW)]` and `E[h(x + dW) dW]` from a single sweep over the
    /// probes.
    pub fn conditional_moments<F: FnMut(f64) -> f64>(
        &self,
        mut h: F,
        x: f64,
        dt: f64,
    ) -> Result<(f64, f64)> {
        check_dt(dt)?;
        let scale = (2.0 * dt).sqrt();
        let (mut m0, mut m1) = (0.0, 0.0);
        for (&a, &w) in self.nodes.iter().zip(&self.weights) {
            let dw = scale * a;
            let probe = x + dw;
            let v = finite(h(probe), probe)?;
            m0 += w * v;
            m1 += w * dw * v;
        }
        Ok((m0 * inv_sqrt_pi(), m1 * inv_sqrt_pi()))
    }
}

/// Conditional expectations over the forward increment `dW ~ N(0, dt)`.
///
/// The solver is generic over this trait so that the Gauss–Hermite rule can
/// be swapped for a brute-force sampler when validating a configuration.
pub trait ConditionalExpectation {
    /// `(E[h(x + dW)], E[h(x + dW) dW])`.
    fn moments<F: FnMut(f64) -> f64>(&mut self, h: F, x: f64, dt: f64) -> Result<(f64, f64)>;

    /// `(E[h(x + dW).0], E[h(x + dW).1])` for two integrands sharing probes.
    fn mean_pair<F: FnMut(f64) -> (f64, f64)>(
        &mut self,
        h: F,
        x: f64,
        dt: f64,
    ) -> Result<(f64, f64)>;

    /// Largest distance from `x` at which the kernel evaluates `h`, if bounded.
    fn reach(&self, dt: f64) -> Option<f64>;
}

impl ConditionalExpectation for &QuadratureRule {
    fn moments<F: FnMut(f64) -> f64>(&mut self, h: F, x: f64, dt: f64) -> Result<(f64, f64)> {
        self.conditional_moments(h, x, dt)
    }

    fn mean_pair<F: FnMut(f64) -> (f64, f64)>(
        &mut self,
        mut h: F,
        x: f64,
        dt: f64,
    ) -> Result<(f64, f64)> {
        check_dt(dt)?;
        let scale = (2.0 * dt).sqrt();
        let (mut m_a, mut m_b) = (0.0, 0.0);
        for (&a, &w) in self.nodes.iter().zip(&self.weights) {
            let probe = x + scale * a;
            let (va, vb) = h(probe);
            m_a += w * finite(va, probe)?;
            m_b += w * finite(vb, probe)?;
        }
        Ok((m_a * inv_sqrt_pi(), m_b * inv_sqrt_pi()))
    }

    fn reach(&self, dt: f64) -> Option<f64> {
        Some((2.0 * dt).sqrt() * self.max_abs_node())
    }
}

/// Build the `q`-point Gauss–Hermite rule.
///
/// Roots of the physicists' Hermite polynomial `H_q` are found by Newton
/// iteration on the orthonormal three-term recurrence, starting from the
/// usual asymptotic guesses for the largest roots and extrapolating inward.
/// Weights are `2 / (psi_q'(a_j))^2` for the orthonormal `psi_q`.
pub fn hermite_rule(q: usize) -> Result<QuadratureRule> {
    if q == 0 || q > MAX_ORDER {
        return Err(Error::invalid(format!(
            "Gauss–Hermite order must be in 1..={MAX_ORDER}, got {q}"
        )));
    }
    let half = q.div_ceil(2);
    // Positive roots, largest first.
    let mut roots = vec![0.0f64; half];
    let mut weights = vec![0.0f64; half];
    let n = q as f64;
    let mut z = 0.0f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * n.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * roots[0],
            3 => 1.91 * z - 0.91 * roots[1],
            _ => 2.0 * z - roots[i - 2],
        };
        if q % 2 == 1 && i == half - 1 {
            z = 0.0;
        }
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = orthonormal_hermite(q, z);
            let step = p / dp;
            z -= step;
            if step.abs() <= NEWTON_TOL * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::invalid(format!(
                "Newton iteration for Gauss–Hermite root {i} of order {q} did not converge"
            )));
        }
        let deriv = orthonormal_hermite(q, z).1;
        roots[i] = z;
        weights[i] = 2.0 / (deriv * deriv);
    }
    let mut nodes = Vec::with_capacity(q);
    let mut w = Vec::with_capacity(q);
    for i in 0..half {
        nodes.push(-roots[i]);
        w.push(weights[i]);
    }
    let mirrored = if q % 2 == 1 { half - 1 } else { half };
    for i in (0..mirrored).rev() {
        nodes.push(roots[i]);
        w.push(weights[i]);
    }
    if q % 2 == 1 {
        nodes[half - 1] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights: w })
}

/// Orthonormal Hermite function value and derivative factor at `z`:
/// `(p_q(z), sqrt(2q) p_{q-1}(z))`, with `p_0 = pi^{-1/4}`.
fn orthonormal_hermite(q: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=q {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * q as f64).sqrt() * p2)
}

fn inv_sqrt_pi() -> f64 {
    0.5 * std::f64::consts::FRAC_2_SQRT_PI
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "time step must be positive and finite, got {dt}"
        )))
    }
}

#[inline]
fn finite(v: f64, probe: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "integrand",
            at: probe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// int u^k exp(-u^2) du = Gamma((k+1)/2) for even k, 0 for odd k.
    fn gaussian_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        // Gamma(m + 1/2) = (2m-1)!! / 2^m * sqrt(pi)
        let m = k / 2;
        let mut v = PI.sqrt();
        for i in 1..=m {
            v *= (2 * i - 1) as f64 / 2.0;
        }
        v
    }

    #[test]
    fn one_point_rule() {
        let r = hermite_rule(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_abs_diff_eq!(r.weights()[0], PI.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn two_point_rule_matches_roots_of_h2() {
        // H_2(u) = 4u^2 - 2  =>  u = +-1/sqrt(2); equal weights sqrt(pi)/2
        let r = hermite_rule(2).unwrap();
        let root = 0.5f64.sqrt();
        assert_abs_diff_eq!(r.nodes()[0], -root, epsilon = 1e-14);
        assert_abs_diff_eq!(r.nodes()[1], root, epsilon = 1e-14);
        for &w in r.weights() {
            assert_abs_diff_eq!(w, PI.sqrt() / 2.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(
            r.nodes()[1],
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(r.weights()[0], 0.8862269255, epsilon = 1e-10);
    }

    #[test]
    fn three_point_rule_matches_roots_of_h3() {
        // H_3(u) = 8u^3 - 12u  =>  u in {0, +-sqrt(3/2)}; weights from exactness on 1, u^2, u^4
        let r = hermite_rule(3).unwrap();
        let root = 1.5f64.sqrt();
        assert_abs_diff_eq!(r.nodes()[0], -root, epsilon = 1e-14);
        assert_eq!(r.nodes()[1], 0.0);
        assert_abs_diff_eq!(r.nodes()[2], root, epsilon = 1e-14);
        // w_0 (2 * 3/2) = sqrt(pi)/2 and w_mid = sqrt(pi) - 2 w_0
        let w_outer = PI.sqrt() / 6.0;
        assert_abs_diff_eq!(r.weights()[0], w_outer, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[1], PI.sqrt() - 2.0 * w_outer, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights()[0], 0.2954089752, epsilon = 1e-10);
        assert_abs_diff_eq!(r.weights()[1], 1.1816359006, epsilon = 1e-10);
        assert_abs_diff_eq!(r.nodes()[2], 1.2247448714, epsilon = 1e-10);
    }

    #[test]
    fn rule_invariants_all_orders() {
        for q in 1..=MAX_ORDER {
            let r = hermite_rule(q).unwrap();
            assert_eq!(r.order(), q);
            let sum: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(sum, PI.sqrt(), epsilon = 1e-12);
            assert!(r.weights().iter().all(|&w| w > 0.0), "q={q}");
            for pair in r.nodes().windows(2) {
                assert!(pair[0] < pair[1], "q={q} nodes not increasing");
            }
            for j in 0..q {
                assert_abs_diff_eq!(r.nodes()[j], -r.nodes()[q - 1 - j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn monomial_exactness_through_degree_2q_minus_1() {
        for q in 1..=20 {
            let r = hermite_rule(q).unwrap();
            for k in 0..(2 * q as u32) {
                let approx = r.integrate(|u| u.powi(k as i32));
                let exact = gaussian_moment(k);
                // relative to the size of the integrand mass for odd k
                let scale = gaussian_moment(k + k % 2).max(1.0);
                assert!(
                    (approx - exact).abs() <= 1e-10 * scale,
                    "q={q} k={k}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn order_out_of_range_is_rejected() {
        assert!(matches!(hermite_rule(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(hermite_rule(65), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn conditional_mean_examples() {
        let r = hermite_rule(8).unwrap();
        assert_abs_diff_eq!(
            r.conditional_mean(|_| 3.5, -2.0, 0.7).unwrap(),
            3.5,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            r.conditional_mean(|x| x, 1.5, 0.25).unwrap(),
            1.5,
            epsilon = 1e-13
        );
        let r2 = hermite_rule(2).unwrap();
        assert_abs_diff_eq!(
            r2.conditional_mean(|x| x * x, 0.0, 0.25).unwrap(),
            0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn conditional_mean_times_dw_examples() {
        let r = hermite_rule(2).unwrap();
        assert_abs_diff_eq!(
            r.conditional_mean_times_dw(|_| 1.0, 0.3, 0.25).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            r.conditional_mean_times_dw(|x| x, 4.0, 0.25).unwrap(),
            0.25,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            r.conditional_mean_times_dw(|x| x * x, 1.0, 0.25).unwrap(),
            0.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn non_finite_integrand_reports_probe() {
        let r = hermite_rule(3).unwrap();
        let err = r
            .conditional_mean(|x| if x > 0.5 { f64::NAN } else { 0.0 }, 0.0, 1.0)
            .unwrap_err();
        match err {
            Error::NonFinite { at, .. } => assert_abs_diff_eq!(at, 3f64.sqrt(), epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(r.conditional_mean(|x| x, 0.0, 0.0).is_err());
    }

    /// Closed-form E[(x + dW)^k] from the binomial expansion and Gaussian moments.
    fn shifted_gaussian_moment(x: f64, dt: f64, k: u32) -> f64 {
        let mut total = 0.0;
        let mut binom = 1.0;
        for m in 0..=k {
            if m > 0 {
                binom *= (k - m + 1) as f64 / m as f64;
            }
            if m % 2 == 0 {
                // E[dW^m] = (m-1)!! dt^{m/2}
                let mut dfact = 1.0;
                let mut i = m as i64 - 1;
                while i > 1 {
                    dfact *= i as f64;
                    i -= 2;
                }
                total += binom * x.powi((k - m) as i32) * dfact * dt.powi(m as i32 / 2);
            }
        }
        total
    }

    proptest! {
        #[test]
        fn polynomial_exactness(
            q in 1usize..=12,
            coeffs in prop::collection::vec(-2.0f64..2.0, 24),
            x in -2.0f64..2.0,
            dt in 0.01f64..1.0,
        ) {
            let r = hermite_rule(q).unwrap();
            let deg = 2 * q - 1;
            let c = &coeffs[..=deg.min(coeffs.len() - 1)];
            let poly = |u: f64| c.iter().rev().fold(0.0, |acc, &a| acc * u + a);
            let got = r.conditional_mean(poly, x, dt).unwrap();
            let want: f64 = c.iter().enumerate()
                .map(|(k, &a)| a * shifted_gaussian_moment(x, dt, k as u32))
                .sum();
            let scale: f64 = c.iter().enumerate()
                .map(|(k, &a)| (a * shifted_gaussian_moment(x.abs(), dt, k as u32)).abs())
                .sum::<f64>()
                .max(1.0);
            prop_assert!((got - want).abs() <= 1e-9 * scale, "{got} vs {want}");
        }

        #[test]
        fn linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, x in -1.0f64..1.0, dt in 0.01f64..0.5) {
            let r = hermite_rule(8).unwrap();
            let h1 = |u: f64| u.sin();
            let h2 = |u: f64| (-u * u).exp();
            let lhs = r.conditional_mean(|u| a * h1(u) + b * h2(u), x, dt).unwrap();
            let rhs = a * r.conditional_mean(h1, x, dt).unwrap() + b * r.conditional_mean(h2, x, dt).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
