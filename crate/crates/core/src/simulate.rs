//! Reference trajectories of the data-generating SDE.
//!
//! The velocity is advanced by Euler–Maruyama at a fine step `h`; the
//! position integrates the velocity with the trapezoidal rule over each
//! fine step. Positions (and optionally velocities) are retained every
//! `tau / h` fine steps.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::rng::rng_from_seed;

/// Relative slack allowed when checking that `tau` is a multiple of `h`.
const MULTIPLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Fine integration step.
    pub h: f64,
    /// Observation interval; must be an integer multiple of `h`.
    pub tau: f64,
    /// Number of observation intervals `N`; `N + 1` positions are kept.
    pub n_obs: usize,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    /// Duration simulated and discarded before the first observation.
    pub burn_in: f64,
    pub seed: u64,
    /// Keep `U` at each observation time (diagnostics only).
    pub record_velocities: bool,
}

impl SimConfig {
    /// Scalar config starting from rest with no burn-in.
    pub fn new(tau: f64, substeps: usize, n_obs: usize, seed: u64) -> Self {
        Self {
            h: tau / substeps as f64,
            tau,
            n_obs,
            x0: vec![0.0],
            u0: vec![0.0],
            burn_in: 0.0,
            seed,
            record_velocities: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Number of fine steps per observation interval.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        let ratio = self.tau / self.h;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > MULTIPLE_TOL * k {
            return Err(Error::invalid(format!(
                "tau ({}) must be an integer multiple of h ({}); ratio is {ratio}",
                self.tau, self.h
            )));
        }
        Ok(k as usize)
    }

    fn burn_in_steps(&self) -> Result<usize> {
        if !(self.burn_in >= 0.0) || !self.burn_in.is_finite() {
            return Err(Error::invalid(format!(
                "burn_in must be finite and >= 0, got {}",
                self.burn_in
            )));
        }
        Ok((self.burn_in / self.h).round() as usize)
    }

    pub fn validate(&self, d: usize) -> Result<usize> {
        let m = self.substeps()?;
        if self.n_obs < 4 {
            return Err(Error::invalid(format!(
                "n_obs must be >= 4, got {}",
                self.n_obs
            )));
        }
        if self.x0.len() != d || self.u0.len() != d {
            return Err(Error::invalid(format!(
                "initial state has shape ({}, {}), model expects d = {d}",
                self.x0.len(),
                self.u0.len()
            )));
        }
        self.burn_in_steps()?;
        Ok(m)
    }
}

/// Positions sampled at `t_n = n tau`, `n = 0..=N`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    tau: f64,
    d: usize,
    positions: Vec<f64>,
    true_velocities: Option<Vec<f64>>,
    seed: Option<u64>,
}

impl Trajectory {
    /// Wraps externally supplied positions (row-major, `N + 1` rows of `d`).
    pub fn from_positions(tau: f64, d: usize, positions: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        if d == 0 || !positions.len().is_multiple_of(d) {
            return Err(Error::invalid("positions length is not a multiple of d"));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("positions must be finite"));
        }
        Ok(Self {
            tau,
            d,
            positions,
            true_velocities: None,
            seed: None,
        })
    }

    pub fn with_true_velocities(mut self, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != self.positions.len() {
            return Err(Error::invalid(
                "true velocities must match positions in length",
            ));
        }
        self.true_velocities = Some(velocities);
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of observation intervals `N` (there are `N + 1` positions).
    pub fn n_obs(&self) -> usize {
        (self.positions.len() / self.d).saturating_sub(1)
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len() / self.d
    }

    #[inline]
    pub fn position(&self, n: usize) -> &[f64] {
        &self.positions[n * self.d..(n + 1) * self.d]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn true_velocities(&self) -> Option<&[f64]> {
        self.true_velocities.as_deref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Writes `t,x_0..x_{d-1}[,u_0..u_{d-1}]` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.d).map(|i| format!("x_{i}")));
        if self.true_velocities.is_some() {
            header.extend((0..self.d).map(|i| format!("u_{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.n_positions() {
            let mut row = vec![fmt_f64(n as f64 * self.tau)];
            row.extend(self.position(n).iter().map(|&v| fmt_f64(v)));
            if let Some(u) = &self.true_velocities {
                row.extend(u[n * self.d..(n + 1) * self.d].iter().map(|&v| fmt_f64(v)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Trajectory::write_csv`]. `tau` is
    /// taken from the first two time stamps.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty trajectory file"))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::invalid("trajectory header must start with 't'"));
        }
        let d = cols.iter().filter(|c| c.starts_with("x_")).count();
        let du = cols.iter().filter(|c| c.starts_with("u_")).count();
        if d == 0 || (du != 0 && du != d) || cols.len() != 1 + d + du {
            return Err(Error::invalid(format!(
                "malformed trajectory header '{header}'"
            )));
        }
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("line {}: {e}", i + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::invalid(format!(
                    "line {}: expected {} fields, found {}",
                    i + 2,
                    cols.len(),
                    vals.len()
                )));
            }
            times.push(vals[0]);
            positions.extend_from_slice(&vals[1..1 + d]);
            velocities.extend_from_slice(&vals[1 + d..]);
        }
        if times.len() < 2 {
            return Err(Error::invalid("trajectory needs at least two rows"));
        }
        let traj = Self::from_positions(times[1] - times[0], d, positions)?;
        if du > 0 {
            traj.with_true_velocities(velocities)
        } else {
            Ok(traj)
        }
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Velocity on the fine integration grid, for quadrature checks.
#[derive(Debug, Clone)]
pub struct FineVelocities {
    pub h: f64,
    pub substeps: usize,
    pub d: usize,
    /// `N * substeps + 1` rows of `d`, starting at the first observation.
    pub values: Vec<f64>,
}

/// Standard Gaussian increments scaled to a fine step.
pub struct BrownianIncrements {
    rng: ChaCha8Rng,
    scale: f64,
}

impl BrownianIncrements {
    pub fn new(h: f64, seed: u64) -> Self {
        Self {
            rng: rng_from_seed(seed),
            scale: h.sqrt(),
        }
    }

    /// Fills `out` with independent `N(0, h)` draws.
    #[inline]
    pub fn fill(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = self.scale * z;
        }
    }
}

/// Simulates the data SDE and subsamples positions every `tau`.
pub fn generate_reference(model: &ModelSpec, cfg: &SimConfig) -> Result<Trajectory> {
    integrate(model, cfg, false).map(|(t, _)| t)
}

/// Like [`generate_reference`] but also returns the fine-grid velocity path.
pub fn generate_with_fine_velocities(
    model: &ModelSpec,
    cfg: &SimConfig,
) -> Result<(Trajectory, FineVelocities)> {
    let (traj, fine) = integrate(model, cfg, true)?;
    Ok((traj, fine.expect("fine path requested")))
}

fn integrate(
    model: &ModelSpec,
    cfg: &SimConfig,
    keep_fine: bool,
) -> Result<(Trajectory, Option<FineVelocities>)> {
    let theta = model
        .theta_star()
        .ok_or_else(|| Error::invalid("data generation requires theta_star"))?
        .to_vec();
    let d = model.d();
    let m = cfg.validate(d)?;
    let burn = cfg.burn_in_steps()?;
    let h = cfg.h;
    let noise_scale = model.sigma().sqrt();

    let mut x = cfg.x0.clone();
    let mut u = cfg.u0.clone();
    let mut g = vec![0.0; d];
    let mut feat = vec![0.0; d * model.d_theta()];
    let mut dw = vec![0.0; d];
    let mut noise = BrownianIncrements::new(h, cfg.seed);

    let mut positions = Vec::with_capacity((cfg.n_obs + 1) * d);
    let mut velocities = cfg
        .record_velocities
        .then(|| Vec::with_capacity((cfg.n_obs + 1) * d));
    let mut fine = keep_fine.then(|| Vec::with_capacity((cfg.n_obs * m + 1) * d));

    let total = burn + cfg.n_obs * m;
    for k in 0..=total {
        if k >= burn {
            let j = k - burn;
            if let Some(f) = fine.as_mut() {
                f.extend_from_slice(&u);
            }
            if j % m == 0 {
                positions.extend_from_slice(&x);
                if let Some(v) = velocities.as_mut() {
                    v.extend_from_slice(&u);
                }
            }
        }
        if k == total {
            break;
        }
        model.total_drift_into(&x, &u, &theta, &mut feat, &mut g);
        noise.fill(&mut dw);
        for i in 0..d {
            let u_next = u[i] + g[i] * h + noise_scale * dw[i];
            x[i] += 0.5 * (u[i] + u_next) * h;
            u[i] = u_next;
        }
        if x.iter().chain(&u).any(|v| !v.is_finite()) {
            let step = k + 1;
            return Err(Error::SimulationDiverged {
                time: (step as f64 - burn as f64) * h,
                step,
            });
        }
    }

    let traj = Trajectory {
        tau: cfg.tau,
        d,
        positions,
        true_velocities: velocities,
        seed: Some(cfg.seed),
    };
    let fine = fine.map(|values| FineVelocities {
        h,
        substeps: m,
        d,
        values,
    });
    Ok((traj, fine))
}

/// Monte Carlo moments of integrated Brownian motion over `[0, tau]`,
/// built with the same fine-step construction the simulator uses for
/// positions (trapezoidal quadrature of an Euler–Maruyama Brownian path).
///
/// Returns `(var(∫W dt), E[W_tau ∫W dt])`, whose exact values are
/// `tau³/3` and `tau²/2`.
pub fn integrated_bm_moments(tau: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    integrated_bm_moments_with(tau, 100, n_samples, seed)
}

pub fn integrated_bm_moments_with(
    tau: f64,
    substeps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 1 || !(tau > 0.0) || substeps == 0 {
        return Err(Error::invalid(
            "integrated_bm_moments needs tau > 0, substeps >= 1 and n_samples >= 1",
        ));
    }
    let h = tau / substeps as f64;
    let mut noise = BrownianIncrements::new(h, seed);
    let mut dw = [0.0];
    let (mut s_ii, mut s_wi) = (0.0, 0.0);
    for _ in 0..n_samples {
        let (mut w, mut integral) = (0.0f64, 0.0f64);
        for _ in 0..substeps {
            noise.fill(&mut dw);
            let w_next = w + dw[0];
            integral += 0.5 * (w + w_next) * h;
            w = w_next;
        }
        s_ii += integral * integral;
        s_wi += w * integral;
    }
    // Both quantities have known zero mean.
    Ok((s_ii / n_samples as f64, s_wi / n_samples as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_cubic, make_ou};

    #[test]
    fn straight_line_motion_is_exact() {
        let model = make_ou(0.0, 0.0).unwrap();
        let mut cfg = SimConfig::new(0.5, 8, 10, 1);
        cfg.u0 = vec![1.0];
        let traj = generate_reference(&model, &cfg).unwrap();
        let expect: Vec<f64> = (0..=10).map(|n| n as f64 * 0.5).collect();
        assert_eq!(traj.positions(), &expect[..]);
    }

    #[test]
    fn rejects_non_multiple_tau() {
        let model = make_ou(0.0, 1.0).unwrap();
        let mut cfg = SimConfig::new(0.025, 100, 10, 1);
        cfg.h = 0.0003;
        assert!(matches!(
            generate_reference(&model, &cfg),
            Err(Error::InvalidArgument(msg)) if msg.contains("multiple")
        ));
        let mut cfg = SimConfig::new(0.025, 100, 3, 1);
        cfg.n_obs = 3;
        assert!(generate_reference(&model, &cfg).is_err());
    }

    #[test]
    fn preset_step_ratio_is_accepted() {
        let cfg = SimConfig {
            h: 0.025 / 100.0,
            ..SimConfig::new(0.025, 100, 10, 0)
        };
        assert_eq!(cfg.substeps().unwrap(), 100);
    }

    #[test]
    fn divergence_is_reported() {
        // dU = -theta u^3 with theta < 0 blows up in finite time.
        let model = make_cubic(-1.0, 0.0).unwrap();
        let mut cfg = SimConfig::new(0.1, 10, 10_000, 0);
        cfg.u0 = vec![5.0];
        match generate_reference(&model, &cfg) {
            Err(Error::SimulationDiverged { time, .. }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn determinism_and_seed_dependence() {
        let model = make_cubic(1.0, 2.0).unwrap();
        let cfg = SimConfig::new(0.025, 10, 500, 42);
        let a = generate_reference(&model, &cfg).unwrap();
        let b = generate_reference(&model, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_reference(&model, &cfg.with_seed(43)).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn burn_in_shifts_recording_window() {
        let model = make_ou(0.0, 0.0).unwrap();
        let mut cfg = SimConfig::new(0.5, 8, 4, 1);
        cfg.u0 = vec![1.0];
        cfg.burn_in = 1.0;
        let traj = generate_reference(&model, &cfg).unwrap();
        assert_eq!(traj.position(0), &[1.0]);
        assert_eq!(traj.position(4), &[3.0]);
    }

    fn rk4_cubic(x0: f64, u0: f64, t_end: f64, dt: f64) -> (f64, f64) {
        let rhs = |x: f64, u: f64| (u, -x + u - u * u * u);
        let steps = (t_end / dt).round() as usize;
        let (mut x, mut u) = (x0, u0);
        for _ in 0..steps {
            let (k1x, k1u) = rhs(x, u);
            let (k2x, k2u) = rhs(x + 0.5 * dt * k1x, u + 0.5 * dt * k1u);
            let (k3x, k3u) = rhs(x + 0.5 * dt * k2x, u + 0.5 * dt * k2u);
            let (k4x, k4u) = rhs(x + dt * k3x, u + dt * k3u);
            x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            u += dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        }
        (x, u)
    }

    fn deterministic_error(substeps: usize) -> f64 {
        let model = make_cubic(1.0, 0.0).unwrap();
        let tau = 0.1;
        let mut cfg = SimConfig::new(tau, substeps, 50, 0);
        cfg.x0 = vec![1.0];
        cfg.u0 = vec![0.5];
        let traj = generate_reference(&model, &cfg).unwrap();
        let h = tau / substeps as f64;
        (1..=50)
            .map(|n| {
                let (x, _) = rk4_cubic(1.0, 0.5, n as f64 * tau, h / 10.0);
                (traj.position(n)[0] - x).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn deterministic_limit_converges_at_first_order() {
        let e1 = deterministic_error(10);
        let e2 = deterministic_error(20);
        assert!(e1 < 0.05, "global error {e1}");
        let ratio = e1 / e2;
        assert!((1.6..2.4).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn brownian_increment_variance_matches_step() {
        let h = 1e-3;
        let mut noise = BrownianIncrements::new(h, 5);
        let mut buf = vec![0.0; 200_000];
        noise.fill(&mut buf);
        let n = buf.len() as f64;
        let mean = buf.iter().sum::<f64>() / n;
        let var = buf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = h * (2.0 / (n - 1.0)).sqrt();
        assert!((var - h).abs() < 3.0 * se, "var {var} vs {h}");
    }

    #[test]
    fn integrated_bm_moments_match_closed_form() {
        let n = 1_000_000;
        let (var, cov) = integrated_bm_moments(1.0, n, 11).unwrap();
        // For jointly Gaussian (W, I): var(I^2) = 2 var(I)^2,
        // var(W I) = var(W) var(I) + cov(W, I)^2.
        let se_var = (2.0f64 / 9.0 / n as f64).sqrt();
        let se_cov = ((1.0 / 3.0 + 0.25) / n as f64).sqrt();
        assert!((var - 1.0 / 3.0).abs() < 3.0 * se_var, "var {var}");
        assert!((cov - 0.5).abs() < 3.0 * se_cov, "cov {cov}");

        let n = 200_000;
        let (var2, _) = integrated_bm_moments(2.0, n, 12).unwrap();
        let se = (8.0 / 3.0) * (2.0 / n as f64).sqrt();
        assert!((var2 - 8.0 / 3.0).abs() < 3.0 * se, "var {var2}");
    }

    #[test]
    fn csv_round_trip_preserves_bits() {
        let model = make_ou(1.0, 1.0).unwrap();
        let mut cfg = SimConfig::new(0.01, 10, 20, 3);
        cfg.record_velocities = true;
        let traj = generate_reference(&model, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_0,u_0\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.positions(), traj.positions());
        assert_eq!(back.true_velocities(), traj.true_velocities());
        assert!((back.tau() - 0.01).abs() < 1e-15);
    }
}
