use serde::{Deserialize, Serialize};

use super::{
    check_model, check_theta, innovation_into, require_n_obs, History, LearningRate,
    ObservationAccess, Observed, Workspace, INNOVATION_SHIFT,
};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::simulate::Trajectory;

/// Where the shifted innovation evaluates its drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnbiasedVariant {
    /// `ΔI_{n+2}(θ_n)`: increment and drift both at `n + 2`.
    ShiftedInnovation,
    /// Increment at `n + 2`, drift at the gain point `n`.
    ShiftedDifference,
}

/// Index layout of one SGD update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgdScheme {
    /// Offset of the velocity increment relative to the gain point.
    pub shift: usize,
    pub variant: UnbiasedVariant,
}

impl SgdScheme {
    pub const STANDARD: SgdScheme = SgdScheme {
        shift: 0,
        variant: UnbiasedVariant::ShiftedInnovation,
    };

    pub fn unbiased(variant: UnbiasedVariant) -> Self {
        Self {
            shift: INNOVATION_SHIFT,
            variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub theta: Vec<f64>,
    /// Number of updates applied.
    pub step: usize,
    /// `(n, θ_n)` for every iterate, starting with `θ_1 = θ_0`.
    pub history: Option<History>,
}

/// Standard (biased) SGD: gain and innovation share the stencil at `n`.
pub fn sgd_standard_run(
    traj: &Trajectory,
    model: &ModelSpec,
    theta0: &[f64],
    lr: LearningRate,
    record_history: bool,
) -> Result<SgdState> {
    let obs = Observed::new(traj)?;
    sgd_run_on(&obs, model, theta0, lr, SgdScheme::STANDARD, record_history)
}

/// SGD with the innovation shifted two samples ahead of the gain.
pub fn sgd_unbiased_run(
    traj: &Trajectory,
    model: &ModelSpec,
    theta0: &[f64],
    lr: LearningRate,
    variant: UnbiasedVariant,
    record_history: bool,
) -> Result<SgdState> {
    let obs = Observed::new(traj)?;
    sgd_run_on(
        &obs,
        model,
        theta0,
        lr,
        SgdScheme::unbiased(variant),
        record_history,
    )
}

/// Runs `θ_{n+1} = θ_n + α_n F(X_n, Ũ_n)ᵀ ΔI` for `n = 1..=N-1-shift`.
pub fn sgd_run_on<A: ObservationAccess + ?Sized>(
    obs: &A,
    model: &ModelSpec,
    theta0: &[f64],
    lr: LearningRate,
    scheme: SgdScheme,
    record_history: bool,
) -> Result<SgdState> {
    check_model(obs, model)?;
    check_theta(model, theta0)?;
    lr.validate()?;
    let shift = scheme.shift;
    require_n_obs(obs, 3 + shift, "SGD")?;

    let (d, p) = (model.d(), model.d_theta());
    let tau = obs.tau();
    let mut theta = theta0.to_vec();
    let mut ws = Workspace::new(d, p);
    let mut gain = vec![0.0; d * p];
    let mut history = record_history.then(|| {
        let mut h = History::new(p);
        h.push(1, theta.iter().copied());
        h
    });

    let last = obs.n_obs() - 1 - shift;
    for n in 1..=last {
        let (x, u) = obs.gain_point(n);
        model.features_into(x, u, &mut gain);
        let drift_index = match scheme.variant {
            UnbiasedVariant::ShiftedInnovation => n + shift,
            UnbiasedVariant::ShiftedDifference => n,
        };
        innovation_into(obs, model, n + shift, drift_index, &theta, &mut ws);

        let alpha = lr.rate(n, tau);
        for (j, th) in theta.iter_mut().enumerate() {
            let grad: f64 = (0..d).map(|i| gain[i * p + j] * ws.innov[i]).sum();
            *th += alpha * grad;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::EstimationDiverged {
                estimator: if shift == 0 {
                    "standard SGD"
                } else {
                    "unbiased SGD"
                },
                step: n,
            });
        }
        if let Some(h) = history.as_mut() {
            h.push(n + 1, theta.iter().copied());
        }
    }

    Ok(SgdState {
        theta,
        step: last,
        history,
    })
}
