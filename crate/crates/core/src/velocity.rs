//! Finite-difference velocities reconstructed from sampled positions.
//!
//! Index conventions, with `N` observation intervals and positions
//! `X_0..=X_N`:
//!
//! * `midpoint(n) = (X_{n+1} - X_n) / tau` for `n = 0..N`, the velocity
//!   at `t_{n+1/2}`;
//! * `centered(n) = (X_{n+1} - X_{n-1}) / (2 tau)` for `n = 1..N`;
//! * `increment(n) = midpoint(n) - midpoint(n-1)` for `n = 1..N`.
//!
//! Boundary values are undefined and never fabricated.

use crate::error::{Error, Result};
use crate::simulate::{FineVelocities, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    tau: f64,
    d: usize,
    midpoint: Vec<f64>,
    centered: Vec<f64>,
}

impl VelocitySeries {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of midpoint velocities, equal to `N`.
    pub fn len(&self) -> usize {
        self.midpoint.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.midpoint.is_empty()
    }

    /// `Ũ_{n+1/2}`, valid for `n < N`.
    #[inline]
    pub fn midpoint(&self, n: usize) -> &[f64] {
        &self.midpoint[n * self.d..(n + 1) * self.d]
    }

    /// `Ũ_n`, valid for `1 <= n < N`.
    #[inline]
    pub fn centered(&self, n: usize) -> &[f64] {
        debug_assert!(n >= 1);
        &self.centered[(n - 1) * self.d..n * self.d]
    }

    /// Writes `Ũ_{n+1/2} - Ũ_{n-1/2}` into `out`, valid for `1 <= n < N`.
    #[inline]
    pub fn increment_into(&self, n: usize, out: &mut [f64]) {
        let (a, b) = (self.midpoint(n), self.midpoint(n - 1));
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x - y;
        }
    }

    /// Range of `n` for which `centered` and `increment` are defined.
    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.len()
    }
}

/// Builds midpoint and centered velocities from a trajectory.
pub fn midpoint_velocities(traj: &Trajectory) -> Result<VelocitySeries> {
    let np = traj.n_positions();
    if np < 2 {
        return Err(Error::invalid(format!(
            "velocity reconstruction needs at least 2 positions, got {np}"
        )));
    }
    let (d, tau) = (traj.d(), traj.tau());
    let n = np - 1;
    let mut midpoint = Vec::with_capacity(n * d);
    for k in 0..n {
        let (a, b) = (traj.position(k), traj.position(k + 1));
        midpoint.extend(a.iter().zip(b).map(|(x0, x1)| (x1 - x0) / tau));
    }
    // Averaging the stored midpoints keeps the centered identity exact.
    let mut centered = Vec::with_capacity(n.saturating_sub(1) * d);
    for k in 1..n {
        let (a, b) = (&midpoint[(k - 1) * d..k * d], &midpoint[k * d..(k + 1) * d]);
        centered.extend(a.iter().zip(b).map(|(v0, v1)| 0.5 * (v0 + v1)));
    }
    Ok(VelocitySeries {
        tau,
        d,
        midpoint,
        centered,
    })
}

/// Largest deviation between `midpoint(n)` and a left-point rectangle
/// quadrature of the fine-grid velocity over `[t_n, t_{n+1}]`.
///
/// The simulator integrates positions with the trapezoidal rule, so the
/// deviation measures the quadrature gap, which is `O(h)` per interval.
pub fn local_time_average_check(fine: &FineVelocities, series: &VelocitySeries) -> Result<f64> {
    let m = fine.substeps;
    let d = fine.d;
    if d != series.d() || fine.values.len() < (series.len() * m + 1) * d {
        return Err(Error::invalid(
            "fine-grid velocities do not cover the velocity series",
        ));
    }
    let mut worst = 0.0f64;
    for n in 0..series.len() {
        for i in 0..d {
            let avg = (0..m)
                .map(|k| fine.values[(n * m + k) * d + i])
                .sum::<f64>()
                / m as f64;
            worst = worst.max((series.midpoint(n)[i] - avg).abs());
        }
    }
    Ok(worst)
}
