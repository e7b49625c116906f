use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    check_model, innovation_into, require_n_obs, History, ObservationAccess, Observed, Workspace,
    INNOVATION_SHIFT,
};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::simulate::Trajectory;

/// How the diffusion constant enters the Kalman gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SigmaMode {
    Known {
        sigma: f64,
    },
    /// `σ = 1` in the gain; the unknown scale is carried by the prior
    /// covariance, so `Σ_n` is the posterior covariance divided by `σ`.
    InPrior,
}

impl SigmaMode {
    pub fn gain_sigma(&self) -> f64 {
        match *self {
            SigmaMode::Known { sigma } => sigma,
            SigmaMode::InPrior => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOptions {
    pub m_prior: DVector<f64>,
    pub sigma_prior: DMatrix<f64>,
    pub sigma_mode: SigmaMode,
    pub record_history: bool,
}

impl KalmanOptions {
    pub fn scalar(m_prior: f64, sigma_prior: f64, sigma_mode: SigmaMode) -> Self {
        Self {
            m_prior: DVector::from_element(1, m_prior),
            sigma_prior: DMatrix::from_element(1, 1, sigma_prior),
            sigma_mode,
            record_history: false,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub m: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Number of updates applied.
    pub step: usize,
    /// Rows `m_0.., Sigma_00, Sigma_01, ..` (row-major) per iterate.
    pub history: Option<History>,
}

impl KalmanState {
    /// Posterior standard deviations `sqrt(diag Σ)`.
    pub fn std_devs(&self) -> Vec<f64> {
        self.sigma
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }
}

/// Kalman filter on `θ` with the innovation shifted two samples ahead.
pub fn kalman_run(
    traj: &Trajectory,
    model: &ModelSpec,
    opts: &KalmanOptions,
) -> Result<KalmanState> {
    let obs = Observed::new(traj)?;
    kalman_run_on(&obs, model, opts, INNOVATION_SHIFT)
}

/// Kalman recursion for `n = 1..=N-1-shift`:
///
/// ```text
/// K_n     = Σ_n Fᵀ (F Σ_n Fᵀ + (σ/τ) I)⁻¹        F = F(X_n, Ũ_n), d × d_θ
/// m_{n+1} = m_n + K_n ΔI_{n+shift}(m_n) / τ
/// Σ_{n+1} = Σ_n - K_n F Σ_n
/// ```
///
/// `shift = 0` gives the unmodified filter.
pub fn kalman_run_on<A: ObservationAccess + ?Sized>(
    obs: &A,
    model: &ModelSpec,
    opts: &KalmanOptions,
    shift: usize,
) -> Result<KalmanState> {
    check_model(obs, model)?;
    let (d, p) = (model.d(), model.d_theta());
    validate_prior(opts, p)?;
    let sigma_gain = opts.sigma_mode.gain_sigma();
    if !(sigma_gain >= 0.0) || !sigma_gain.is_finite() {
        return Err(Error::invalid(format!(
            "gain sigma must be >= 0, got {sigma_gain}"
        )));
    }
    require_n_obs(obs, 3 + shift, "Kalman filter")?;

    let tau = obs.tau();
    let noise = DMatrix::<f64>::identity(d, d) * (sigma_gain / tau);
    let mut m = opts.m_prior.clone();
    let mut cov = opts.sigma_prior.clone();
    let mut ws = Workspace::new(d, p);
    let mut feat = vec![0.0; d * p];
    let mut history = opts.record_history.then(|| {
        let mut h = History::new(p + p * p);
        push_row(&mut h, 1, &m, &cov);
        h
    });

    let last = obs.n_obs() - 1 - shift;
    for n in 1..=last {
        let (x, u) = obs.gain_point(n);
        model.features_into(x, u, &mut feat);
        let f = DMatrix::from_row_slice(d, p, &feat);
        innovation_into(obs, model, n + shift, n + shift, m.as_slice(), &mut ws);

        let cov_ft = &cov * f.transpose();
        let inner = &f * &cov_ft + &noise;
        let inner_inv = invert_spd(inner).ok_or(Error::SingularGain { step: n })?;
        let gain = &cov_ft * inner_inv;

        let innov = DVector::from_column_slice(&ws.innov) / tau;
        m += &gain * innov;
        cov -= &gain * &f * &cov;
        cov = (&cov + cov.transpose()) * 0.5;

        if m.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::EstimationDiverged {
                estimator: "Kalman filter",
                step: n,
            });
        }
        if let Some(h) = history.as_mut() {
            push_row(h, n + 1, &m, &cov);
        }
    }

    Ok(KalmanState {
        m,
        sigma: cov,
        step: last,
        history,
    })
}

fn push_row(h: &mut History, n: usize, m: &DVector<f64>, cov: &DMatrix<f64>) {
    let p = m.len();
    let row = m.iter().copied().chain(
        (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| cov[(i, j)]),
    );
    h.push(n, row);
}

fn invert_spd(a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.inverse()),
        None => a.try_inverse(),
    }
}

fn validate_prior(opts: &KalmanOptions, p: usize) -> Result<()> {
    let s = &opts.sigma_prior;
    if opts.m_prior.len() != p || s.nrows() != p || s.ncols() != p {
        return Err(Error::invalid(format!(
            "prior must have mean of length {p} and a {p} x {p} covariance"
        )));
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() > 1e-12 * scale {
        return Err(Error::invalid("prior covariance must be symmetric"));
    }
    if s.clone().cholesky().is_none() {
        return Err(Error::invalid("prior covariance must be positive definite"));
    }
    Ok(())
}

/// Column names matching the history layout.
pub fn history_columns(p: usize) -> Vec<String> {
    let mut cols: Vec<String> = (0..p).map(|i| format!("m_{i}")).collect();
    cols.extend((0..p).flat_map(|i| (0..p).map(move |j| format!("Sigma_{i}{j}"))));
    cols
}
