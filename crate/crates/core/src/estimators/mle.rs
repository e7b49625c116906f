use nalgebra::{DMatrix, DVector};

use super::{check_model, require_n_obs, ObservationAccess, Observed, INNOVATION_SHIFT};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::simulate::Trajectory;
use crate::stats::NeumaierSum;

/// Normal matrices beyond this condition number are treated as singular.
const MAX_CONDITION: f64 = 1e12;

/// Sufficient statistics of the shifted negative log-likelihood
///
/// ```text
/// L(θ, σ) = A(θ) / σ + (d K / 2) log σ
/// A(θ)    = ½ θᵀ M θ - θᵀ b + 3/(4τ) q
/// M = Σ Fᵀ F τ,   b = Σ Fᵀ (D_{n+2} - f τ),   q = Σ ‖D_{n+2}‖²
/// ```
///
/// with `F, f` evaluated at `(X_n, Ũ_n)`, `D_n = Ũ_{n+1/2} - Ũ_{n-1/2}`
/// and sums over `n = 1..=N-3` (`K = N - 3` terms).
#[derive(Debug, Clone, PartialEq)]
pub struct MleObjective {
    pub normal: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub quad: f64,
    pub terms: usize,
    pub d: usize,
    pub tau: f64,
}

impl MleObjective {
    pub fn residual_energy(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.normal * theta)) - theta.dot(&self.rhs)
            + 0.75 * self.quad / self.tau
    }

    pub fn value(&self, theta: &DVector<f64>, sigma: f64) -> f64 {
        self.residual_energy(theta) / sigma + 0.5 * (self.d * self.terms) as f64 * sigma.ln()
    }

    /// `(∂L/∂θ, ∂L/∂σ)`.
    pub fn gradient(&self, theta: &DVector<f64>, sigma: f64) -> (DVector<f64>, f64) {
        let g_theta = (&self.normal * theta - &self.rhs) / sigma;
        let g_sigma = -self.residual_energy(theta) / (sigma * sigma)
            + 0.5 * (self.d * self.terms) as f64 / sigma;
        (g_theta, g_sigma)
    }

    /// Minimizer of `L(θ, ·)`.
    pub fn sigma_at(&self, theta: &DVector<f64>) -> f64 {
        2.0 * self.residual_energy(theta) / (self.d * self.terms) as f64
    }

    /// Ratio of extreme eigenvalues of the normal matrix.
    pub fn condition(&self) -> f64 {
        let eig = self.normal.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub theta_hat: DVector<f64>,
    pub sigma_hat: f64,
    pub objective_value: f64,
    pub normal_matrix_condition: f64,
}

/// Accumulates the statistics of the shifted likelihood.
pub fn mle_objective(traj: &Trajectory, model: &ModelSpec) -> Result<MleObjective> {
    let obs = Observed::new(traj)?;
    objective_on(&obs, model)
}

fn objective_on<A: ObservationAccess + ?Sized>(obs: &A, model: &ModelSpec) -> Result<MleObjective> {
    check_model(obs, model)?;
    require_n_obs(obs, 3 + INNOVATION_SHIFT, "MLE")?;
    let (d, p) = (model.d(), model.d_theta());
    let tau = obs.tau();
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut quad = NeumaierSum::default();
    let mut feat = vec![0.0; d * p];
    let mut drift = vec![0.0; d];
    let mut incr = vec![0.0; d];
    let mut resid = vec![0.0; d];

    let last = obs.n_obs() - 1 - INNOVATION_SHIFT;
    for n in 1..=last {
        let (x, u) = obs.gain_point(n);
        model.features_into(x, u, &mut feat);
        model.drift_into(x, u, &mut drift);
        obs.increment_into(n + INNOVATION_SHIFT, &mut incr);
        for i in 0..d {
            resid[i] = incr[i] - drift[i] * tau;
        }
        quad.add(incr.iter().map(|v| v * v).sum());
        for j in 0..p {
            rhs[j] += (0..d).map(|i| feat[i * p + j] * resid[i]).sum::<f64>();
            for k in 0..p {
                normal[(j, k)] += tau
                    * (0..d)
                        .map(|i| feat[i * p + j] * feat[i * p + k])
                        .sum::<f64>();
            }
        }
    }

    Ok(MleObjective {
        normal,
        rhs,
        quad: quad.total(),
        terms: last,
        d,
        tau,
    })
}

/// Closed-form minimizer of the shifted likelihood: `θ̂` from the normal
/// equations `M θ̂ = b`, then `σ̂ = 2 A(θ̂) / (d K)`.
pub fn mle_fit(traj: &Trajectory, model: &ModelSpec) -> Result<MleResult> {
    let obj = mle_objective(traj, model)?;
    let condition = obj.condition();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let theta_hat = obj
        .normal
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { condition })?
        .solve(&obj.rhs);
    let sigma_hat = obj.sigma_at(&theta_hat);
    if !(sigma_hat > 0.0) || !sigma_hat.is_finite() {
        return Err(Error::invalid(format!(
            "data carry no quadratic variation; sigma estimate is {sigma_hat}"
        )));
    }
    Ok(MleResult {
        objective_value: obj.value(&theta_hat, sigma_hat),
        theta_hat,
        sigma_hat,
        normal_matrix_condition: condition,
    })
}
