//! Drift and diffusion estimators driven by position-only observations.
//!
//! All drift estimators read the data through [`ObservationAccess`], which
//! separates the point where gain features are evaluated from the
//! second-order velocity increment entering the innovation. The unbiased
//! schemes evaluate the gain at `n` and the increment at `n + 2`, so the
//! positions feeding the gain (`X_{n-1}, X_n, X_{n+1}`) never come after
//! those feeding the increment (`X_{n+1}, X_{n+2}, X_{n+3}`).

mod kalman;
mod mle;
#[cfg(test)]
mod probe;
mod sgd;
mod sigma;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::simulate::{fmt_f64, Trajectory};
use crate::velocity::{midpoint_velocities, VelocitySeries};

pub use kalman::{
    history_columns as kalman_history_columns, kalman_run, kalman_run_on, KalmanOptions,
    KalmanState, SigmaMode,
};
pub use mle::{mle_fit, mle_objective, MleObjective, MleResult};
pub use sgd::{
    sgd_run_on, sgd_standard_run, sgd_unbiased_run, SgdScheme, SgdState, UnbiasedVariant,
};
pub use sigma::estimate_sigma;

/// Forward shift of the innovation used by the unbiased schemes.
pub const INNOVATION_SHIFT: usize = 2;

/// Read access to positions and reconstructed velocities.
pub trait ObservationAccess {
    fn tau(&self) -> f64;
    /// Number of observation intervals `N`.
    fn n_obs(&self) -> usize;
    fn d(&self) -> usize;
    /// `(X_{t_n}, Ũ_n)` at which gain features are evaluated.
    /// Reads positions `n - 1, n, n + 1`.
    fn gain_point(&self, n: usize) -> (&[f64], &[f64]);
    /// `(X_{t_n}, Ũ_n)` at which the drift inside an innovation is evaluated.
    fn drift_point(&self, n: usize) -> (&[f64], &[f64]) {
        self.gain_point(n)
    }
    /// `Ũ_{n+1/2} - Ũ_{n-1/2}`. Reads positions `n - 1, n, n + 1`.
    fn increment_into(&self, n: usize, out: &mut [f64]);
}

/// A trajectory paired with its finite-difference velocities.
#[derive(Debug, Clone)]
pub struct Observed<'a> {
    traj: &'a Trajectory,
    series: VelocitySeries,
}

impl<'a> Observed<'a> {
    pub fn new(traj: &'a Trajectory) -> Result<Self> {
        Ok(Self {
            traj,
            series: midpoint_velocities(traj)?,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        self.traj
    }

    pub fn series(&self) -> &VelocitySeries {
        &self.series
    }
}

impl ObservationAccess for Observed<'_> {
    fn tau(&self) -> f64 {
        self.traj.tau()
    }

    fn n_obs(&self) -> usize {
        self.traj.n_obs()
    }

    fn d(&self) -> usize {
        self.traj.d()
    }

    #[inline]
    fn gain_point(&self, n: usize) -> (&[f64], &[f64]) {
        (self.traj.position(n), self.series.centered(n))
    }

    #[inline]
    fn increment_into(&self, n: usize, out: &mut [f64]) {
        self.series.increment_into(n, out)
    }
}

/// Step-size schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    /// `alpha = c1 / (c2 + t_n)` with `t_n = n tau`.
    #[serde(rename = "paper_schedule")]
    Hyperbolic { c1: f64, c2: f64 },
    /// `alpha = a / n`.
    Harmonic { a: f64 },
}

impl LearningRate {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRate::Hyperbolic { c1, c2 } => c1 > 0.0 && c2 > 0.0,
            LearningRate::Harmonic { a } => a > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "learning-rate constants must be positive: {self:?}"
            )))
        }
    }

    /// Step size at iteration `n >= 1`.
    #[inline]
    pub fn rate(&self, n: usize, tau: f64) -> f64 {
        match *self {
            LearningRate::Hyperbolic { c1, c2 } => c1 / (c2 + n as f64 * tau),
            LearningRate::Harmonic { a } => a / n as f64,
        }
    }
}

/// Scratch buffers for innovation evaluation.
pub(crate) struct Workspace {
    pub feat: Vec<f64>,
    pub drift: Vec<f64>,
    pub incr: Vec<f64>,
    pub innov: Vec<f64>,
}

impl Workspace {
    pub fn new(d: usize, d_theta: usize) -> Self {
        Self {
            feat: vec![0.0; d * d_theta],
            drift: vec![0.0; d],
            incr: vec![0.0; d],
            innov: vec![0.0; d],
        }
    }
}

/// Writes `(diff) - (f(x, u) + F(x, u) theta) tau` into `ws.innov`,
/// where `diff` is the increment at `diff_index` and `(x, u)` is the
/// drift point at `drift_index`.
#[inline]
pub(crate) fn innovation_into<A: ObservationAccess + ?Sized>(
    obs: &A,
    model: &ModelSpec,
    diff_index: usize,
    drift_index: usize,
    theta: &[f64],
    ws: &mut Workspace,
) {
    let tau = obs.tau();
    obs.increment_into(diff_index, &mut ws.incr);
    let (x, u) = obs.drift_point(drift_index);
    model.total_drift_into(x, u, theta, &mut ws.feat, &mut ws.drift);
    for ((o, dv), g) in ws.innov.iter_mut().zip(&ws.incr).zip(&ws.drift) {
        *o = dv - g * tau;
    }
}

/// The innovation `ΔI_n(θ) = (Ũ_{n+1/2} - Ũ_{n-1/2}) - (f + F θ)(X_{t_n}, Ũ_n) τ`.
pub fn innovation(
    obs: &Observed<'_>,
    model: &ModelSpec,
    n: usize,
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_model(obs, model)?;
    check_theta(model, theta)?;
    let n_obs = obs.n_obs();
    if n == 0 || n + 1 > n_obs {
        return Err(Error::invalid(format!(
            "innovation index {n} outside the interior range 1..={}",
            n_obs.saturating_sub(1)
        )));
    }
    let mut ws = Workspace::new(model.d(), model.d_theta());
    innovation_into(obs, model, n, n, theta, &mut ws);
    Ok(ws.innov)
}

pub(crate) fn check_model<A: ObservationAccess + ?Sized>(obs: &A, model: &ModelSpec) -> Result<()> {
    if obs.d() != model.d() {
        return Err(Error::invalid(format!(
            "trajectory dimension {} does not match model dimension {}",
            obs.d(),
            model.d()
        )));
    }
    Ok(())
}

pub(crate) fn check_theta(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != model.d_theta() {
        return Err(Error::invalid(format!(
            "parameter vector has length {}, model expects {}",
            theta.len(),
            model.d_theta()
        )));
    }
    Ok(())
}

pub(crate) fn require_n_obs<A: ObservationAccess + ?Sized>(
    obs: &A,
    min: usize,
    what: &str,
) -> Result<()> {
    if obs.n_obs() < min {
        return Err(Error::invalid(format!(
            "{what} needs at least N = {min} observation intervals, got {}",
            obs.n_obs()
        )));
    }
    Ok(())
}

/// Per-step record of an online estimator: `(n, values)` with a fixed
/// number of values per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub steps: Vec<usize>,
    pub width: usize,
    pub values: Vec<f64>,
}

impl History {
    pub fn new(width: usize) -> Self {
        Self {
            steps: Vec::new(),
            width,
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, n: usize, row: impl IntoIterator<Item = f64>) {
        self.steps.push(n);
        let before = self.values.len();
        self.values.extend(row);
        debug_assert_eq!(self.values.len() - before, self.width);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Column `j` over all recorded steps.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[j]).collect()
    }

    /// Writes `n,t,<columns>` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, tau: f64, columns: &[String]) -> Result<()> {
        if columns.len() != self.width {
            return Err(Error::invalid("history column names do not match width"));
        }
        writeln!(w, "n,t,{}", columns.join(","))?;
        for (i, &n) in self.steps.iter().enumerate() {
            let mut line = format!("{n},{}", fmt_f64(n as f64 * tau));
            for v in self.row(i) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
