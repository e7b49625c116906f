//! Parametric drift families `f(x, u) + F(x, u) θ` for second-order SDEs
//!
//! ```text
//! dU = (f(X, U) + F(X, U) θ) dt + √σ dW
//! dX = U dt
//! ```
//!
//! Positions and velocities live in `R^d`, parameters in `R^{d_θ}`. The
//! feature map `F` is returned row-major as a `d × d_θ` block.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Known drift part: writes `f(x, u)` into the output slice (length `d`).
pub type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Feature map: writes `F(x, u)` row-major into the output slice
/// (length `d * d_theta`).
pub type FeatureFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A drift family together with the diffusion constant and, for data
/// generation, the true parameter.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    d: usize,
    d_theta: usize,
    sigma: f64,
    theta_star: Option<Vec<f64>>,
    drift: Arc<DriftFn>,
    features: Arc<FeatureFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("d_theta", &self.d_theta)
            .field("sigma", &self.sigma)
            .field("theta_star", &self.theta_star)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Builds a custom model. Drift callables must be pure.
    pub fn new(
        name: impl Into<String>,
        d: usize,
        d_theta: usize,
        sigma: f64,
        drift: Arc<DriftFn>,
        features: Arc<FeatureFn>,
    ) -> Result<Self> {
        if d == 0 || d_theta == 0 {
            return Err(Error::invalid(
                "model dimensions d and d_theta must be positive",
            ));
        }
        check_sigma(sigma)?;
        Ok(Self {
            name: name.into(),
            d,
            d_theta,
            sigma,
            theta_star: None,
            drift,
            features,
        })
    }

    /// Sets the data-generating parameter, so that `g = f + F θ*`.
    pub fn with_theta_star(mut self, theta_star: Vec<f64>) -> Result<Self> {
        if theta_star.len() != self.d_theta {
            return Err(Error::invalid(format!(
                "theta_star has length {}, expected {}",
                theta_star.len(),
                self.d_theta
            )));
        }
        self.theta_star = Some(theta_star);
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        self.sigma = sigma;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta_star(&self) -> Option<&[f64]> {
        self.theta_star.as_deref()
    }

    /// Evaluates the known drift part without shape checks.
    #[inline]
    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(x, u, out)
    }

    /// Evaluates the feature block without shape checks.
    #[inline]
    pub fn features_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.features)(x, u, out)
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x, u)?;
        let mut out = vec![0.0; self.d];
        self.drift_into(x, u, &mut out);
        Ok(out)
    }

    /// Returns `F(x, u)` row-major, `d × d_theta`.
    pub fn features(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x, u)?;
        let mut out = vec![0.0; self.d * self.d_theta];
        self.features_into(x, u, &mut out);
        Ok(out)
    }

    /// `f(x, u) + F(x, u) θ`.
    pub fn eval_total_drift(&self, x: &[f64], u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x, u)?;
        if theta.len() != self.d_theta {
            return Err(Error::invalid(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.d_theta
            )));
        }
        let mut out = vec![0.0; self.d];
        let mut feat = vec![0.0; self.d * self.d_theta];
        self.total_drift_into(x, u, theta, &mut feat, &mut out);
        Ok(out)
    }

    /// The true drift `g(x, u) = f(x, u) + F(x, u) θ*`.
    pub fn data_drift(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let theta = self
            .theta_star
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("model '{}' has no theta_star", self.name)))?;
        self.eval_total_drift(x, u, theta)
    }

    /// Allocation-free total drift; `feat` is scratch of length `d * d_theta`.
    #[inline]
    pub(crate) fn total_drift_into(
        &self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
        feat: &mut [f64],
        out: &mut [f64],
    ) {
        self.drift_into(x, u, out);
        self.features_into(x, u, feat);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &feat[i * self.d_theta..(i + 1) * self.d_theta];
            *o += row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn check_state(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.d || u.len() != self.d {
            return Err(Error::invalid(format!(
                "state has shape ({}, {}), model expects d = {}",
                x.len(),
                u.len(),
                self.d
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Velocity-only Ornstein–Uhlenbeck model: `f = 0`, `F(x, u) = -u`.
pub fn make_ou(theta_star: f64, sigma: f64) -> Result<ModelSpec> {
    ModelSpec::new(
        "ou",
        1,
        1,
        sigma,
        Arc::new(|_x, _u, out| out[0] = 0.0),
        Arc::new(|_x, u, out| out[0] = -u[0]),
    )?
    .with_theta_star(vec![theta_star])
}

/// Van der Pol-type oscillator with cubic damping:
/// `f(x, u) = -x + u`, `F(x, u) = -u³`.
pub fn make_cubic(theta_star: f64, sigma: f64) -> Result<ModelSpec> {
    ModelSpec::new(
        "cubic",
        1,
        1,
        sigma,
        Arc::new(|x, u, out| out[0] = -x[0] + u[0]),
        Arc::new(|_x, u, out| out[0] = -u[0] * u[0] * u[0]),
    )?
    .with_theta_star(vec![theta_star])
}

/// Names accepted by [`by_name`].
pub const PRESET_NAMES: &[&str] = &["ou", "cubic"];

/// Looks up a built-in model family by name.
pub fn by_name(name: &str, theta_star: f64, sigma: f64) -> Result<ModelSpec> {
    match name {
        "ou" => make_ou(theta_star, sigma),
        "cubic" => make_cubic(theta_star, sigma),
        other => Err(Error::invalid(format!(
            "unknown model '{other}' (expected one of: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
