//! Monte Carlo diagnostics: rescaled-innovation statistics, martingale
//! sums of gain times innovation, and replicate bias studies.
//!
//! For driftless data the rescaled increments
//! `Ξ_n = (Ũ_{n+1/2} - Ũ_{n-1/2}) / √(σ τ)` are Gaussian with variance
//! `2/3`, lag-one covariance `1/6` and no correlation beyond lag one.
//! The unshifted gain-innovation sum picks up `τσ/2` per term; the
//! shifted sum has mean zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    kalman_run, mle_fit, sgd_standard_run, sgd_unbiased_run, KalmanOptions, LearningRate, Observed,
    SigmaMode, UnbiasedVariant, Workspace, INNOVATION_SHIFT,
};
use crate::models::ModelSpec;
use crate::rng::replicate_seed;
use crate::simulate::{generate_reference, SimConfig, Trajectory};
use crate::stats::{compensated_sum, NeumaierSum, SampleSummary};
use crate::velocity::{midpoint_velocities, VelocitySeries};

/// Theoretical moments of the rescaled innovations.
pub const XI_VARIANCE: f64 = 2.0 / 3.0;
pub const XI_LAG1: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStats {
    pub n_terms: usize,
    pub mean: f64,
    pub variance: f64,
    /// Autocovariances at lags `0..=max_lag`; `autocov[0] == variance`.
    pub autocov: Vec<f64>,
}

/// `Ξ_n` for every interior `n`, one series per state component.
pub fn rescaled_innovations(series: &VelocitySeries, sigma: f64) -> Result<Vec<Vec<f64>>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let d = series.d();
    let scale = 1.0 / (sigma * series.tau()).sqrt();
    let mut out = vec![Vec::with_capacity(series.interior().len()); d];
    let mut buf = vec![0.0; d];
    for n in series.interior() {
        series.increment_into(n, &mut buf);
        for (comp, v) in out.iter_mut().zip(&buf) {
            comp.push(v * scale);
        }
    }
    Ok(out)
}

/// Sample mean and mean-corrected autocovariances. Lag `k` divides by
/// `n - 1 - k`, so lag 0 is the unbiased sample variance.
pub fn xi_statistics(xi: &[f64], max_lag: usize) -> Result<InnovationStats> {
    let n = xi.len();
    if n <= max_lag + 1 {
        return Err(Error::invalid(format!(
            "need more than {} samples for lag {max_lag}, got {n}",
            max_lag + 1
        )));
    }
    let mean = compensated_sum(xi.iter().copied()) / n as f64;
    let autocov: Vec<f64> = (0..=max_lag)
        .map(|k| {
            let s = compensated_sum((0..n - k).map(|i| (xi[i] - mean) * (xi[i + k] - mean)));
            s / (n - 1 - k) as f64
        })
        .collect();
    Ok(InnovationStats {
        n_terms: n,
        mean,
        variance: autocov[0],
        autocov,
    })
}

/// Simulates `n_replicates` independent trajectories in parallel.
///
/// Replicate `i` uses `replicate_seed(master_seed, i)` regardless of
/// scheduling, so the output is deterministic.
pub fn generate_replicates(
    model: &ModelSpec,
    cfg: &SimConfig,
    n_replicates: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n_replicates)
        .into_par_iter()
        .map(|i| generate_reference(model, &cfg.with_seed(replicate_seed(master_seed, i))))
        .collect()
}

/// Innovation statistics pooled over replicates; standard errors come
/// from the spread between replicates.
#[derive(Debug, Clone)]
pub struct InnovationStudy {
    pub per_replicate: Vec<InnovationStats>,
    pub variance: SampleSummary,
    /// Summary per lag `0..=max_lag`.
    pub autocov: Vec<SampleSummary>,
}

impl InnovationStudy {
    pub fn from_trajectories(trajs: &[Trajectory], sigma: f64, max_lag: usize) -> Result<Self> {
        if trajs.len() < 2 {
            return Err(Error::invalid(
                "an innovation study needs at least 2 replicates",
            ));
        }
        let per_replicate = trajs
            .par_iter()
            .map(|t| {
                let xi = rescaled_innovations(&midpoint_velocities(t)?, sigma)?;
                xi_statistics(&xi[0], max_lag)
            })
            .collect::<Result<Vec<_>>>()?;
        let lag = |k: usize| {
            let v: Vec<f64> = per_replicate.iter().map(|s| s.autocov[k]).collect();
            SampleSummary::from_values(&v)
        };
        let autocov: Vec<SampleSummary> = (0..=max_lag).map(lag).collect();
        Ok(Self {
            variance: autocov[0],
            autocov,
            per_replicate,
        })
    }
}

/// Runs an innovation study on fresh replicates of `model`.
pub fn innovation_study(
    model: &ModelSpec,
    cfg: &SimConfig,
    n_replicates: usize,
    master_seed: u64,
    max_lag: usize,
) -> Result<InnovationStudy> {
    let trajs = generate_replicates(model, cfg, n_replicates, master_seed)?;
    InnovationStudy::from_trajectories(&trajs, model.sigma(), max_lag)
}

/// Gain-times-innovation sum `Σ_n G_nᵀ ΔI_{n+s}(θ)` with gain
/// `G_n = -F(X_n, Ũ_n)` (so that for the OU family the gain is the
/// velocity). `shifted = false` uses `s = 0` over `n = 1..=N-1`;
/// `shifted = true` uses `s = 2` over `n = 1..=N-3`.
pub fn martingale_sum(
    traj: &Trajectory,
    model: &ModelSpec,
    theta: &[f64],
    shifted: bool,
) -> Result<Vec<f64>> {
    use crate::estimators::ObservationAccess;
    let obs = Observed::new(traj)?;
    if obs.d() != model.d() || theta.len() != model.d_theta() {
        return Err(Error::invalid(
            "trajectory, model and theta dimensions disagree",
        ));
    }
    let shift = if shifted { INNOVATION_SHIFT } else { 0 };
    if traj.n_obs() < 3 + shift {
        return Err(Error::invalid(
            "trajectory too short for the martingale sum",
        ));
    }
    let (d, p) = (model.d(), model.d_theta());
    let mut ws = Workspace::new(d, p);
    let mut feat = vec![0.0; d * p];
    let mut acc = vec![NeumaierSum::default(); p];
    for n in 1..=traj.n_obs() - 1 - shift {
        let (x, u) = obs.gain_point(n);
        model.features_into(x, u, &mut feat);
        crate::estimators::innovation_into(&obs, model, n + shift, n + shift, theta, &mut ws);
        for (j, a) in acc.iter_mut().enumerate() {
            a.add(-(0..d).map(|i| feat[i * p + j] * ws.innov[i]).sum::<f64>());
        }
    }
    Ok(acc.iter().map(NeumaierSum::total).collect())
}

/// Monte Carlo mean and standard error of [`martingale_sum`] over fresh
/// replicates, one summary per parameter component.
pub fn martingale_sum_check(
    model: &ModelSpec,
    cfg: &SimConfig,
    theta: &[f64],
    shifted: bool,
    n_replicates: usize,
    master_seed: u64,
) -> Result<Vec<SampleSummary>> {
    if n_replicates < 2 {
        return Err(Error::invalid(
            "martingale check needs at least 2 replicates",
        ));
    }
    let sums = (0..n_replicates)
        .into_par_iter()
        .map(|i| {
            let traj = generate_reference(model, &cfg.with_seed(replicate_seed(master_seed, i)))?;
            martingale_sum(&traj, model, theta, shifted)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_columns(&sums))
}

fn summarize_columns(rows: &[Vec<f64>]) -> Vec<SampleSummary> {
    let p = rows.first().map_or(0, Vec::len);
    (0..p)
        .map(|j| SampleSummary::from_values(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

/// Estimators selectable for replicate studies and experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorChoice {
    StandardSgd {
        theta0: Vec<f64>,
        lr: LearningRate,
    },
    UnbiasedSgd {
        theta0: Vec<f64>,
        lr: LearningRate,
        variant: UnbiasedVariant,
    },
    Kalman {
        m_prior: Vec<f64>,
        /// Row-major prior covariance.
        sigma_prior: Vec<f64>,
        sigma_mode: SigmaMode,
    },
    Mle,
}

impl EstimatorChoice {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorChoice::StandardSgd { .. } => "standard_sgd",
            EstimatorChoice::UnbiasedSgd { .. } => "unbiased_sgd",
            EstimatorChoice::Kalman { .. } => "kalman",
            EstimatorChoice::Mle => "mle",
        }
    }

    pub(crate) fn kalman_options(&self, record_history: bool) -> Result<Option<KalmanOptions>> {
        let EstimatorChoice::Kalman {
            m_prior,
            sigma_prior,
            sigma_mode,
        } = self
        else {
            return Ok(None);
        };
        let p = m_prior.len();
        if sigma_prior.len() != p * p {
            return Err(Error::invalid(format!(
                "sigma_prior must hold {} entries for a {p}-dimensional prior",
                p * p
            )));
        }
        Ok(Some(KalmanOptions {
            m_prior: DVector::from_column_slice(m_prior),
            sigma_prior: DMatrix::from_row_slice(p, p, sigma_prior),
            sigma_mode: *sigma_mode,
            record_history,
        }))
    }
}

/// Final estimate of one estimator on one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: Vec<f64>,
    /// Posterior standard deviations (Kalman only).
    pub posterior_sd: Option<Vec<f64>>,
    /// Diffusion estimate (MLE only).
    pub sigma: Option<f64>,
}

pub fn run_estimator(
    choice: &EstimatorChoice,
    traj: &Trajectory,
    model: &ModelSpec,
) -> Result<Estimate> {
    let plain = |theta: Vec<f64>| Estimate {
        theta,
        posterior_sd: None,
        sigma: None,
    };
    match choice {
        EstimatorChoice::StandardSgd { theta0, lr } => Ok(plain(
            sgd_standard_run(traj, model, theta0, *lr, false)?.theta,
        )),
        EstimatorChoice::UnbiasedSgd {
            theta0,
            lr,
            variant,
        } => Ok(plain(
            sgd_unbiased_run(traj, model, theta0, *lr, *variant, false)?.theta,
        )),
        EstimatorChoice::Kalman { .. } => {
            let opts = choice.kalman_options(false)?.expect("kalman choice");
            let state = kalman_run(traj, model, &opts)?;
            Ok(Estimate {
                theta: state.m.iter().copied().collect(),
                posterior_sd: Some(state.std_devs()),
                sigma: None,
            })
        }
        EstimatorChoice::Mle => {
            let fit = mle_fit(traj, model)?;
            Ok(Estimate {
                theta: fit.theta_hat.iter().copied().collect(),
                posterior_sd: None,
                sigma: Some(fit.sigma_hat),
            })
        }
    }
}

/// Replicate study of one estimator.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub estimates: Vec<Estimate>,
    /// Per parameter component.
    pub summaries: Vec<SampleSummary>,
}

impl BiasReport {
    pub fn from_estimates(estimates: Vec<Estimate>) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::invalid("a bias study needs at least 2 replicates"));
        }
        let rows: Vec<Vec<f64>> = estimates.iter().map(|e| e.theta.clone()).collect();
        Ok(Self {
            summaries: summarize_columns(&rows),
            estimates,
        })
    }

    pub fn mean_final_theta(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean).collect()
    }

    /// Three standard errors of the mean.
    pub fn ci_halfwidth(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| 3.0 * s.std_error).collect()
    }

    /// Whether every component's 3-s.e. interval contains `target`.
    pub fn ci_contains(&self, target: &[f64]) -> bool {
        self.summaries
            .iter()
            .zip(target)
            .all(|(s, &t)| s.covers(t, 3.0))
    }
}

/// Runs an estimator on existing replicate trajectories.
pub fn estimate_on_replicates(
    choice: &EstimatorChoice,
    trajs: &[Trajectory],
    model: &ModelSpec,
) -> Result<BiasReport> {
    let estimates = trajs
        .par_iter()
        .map(|t| run_estimator(choice, t, model))
        .collect::<Result<Vec<_>>>()?;
    BiasReport::from_estimates(estimates)
}

/// Runs `estimator` on `n_replicates` independent trajectories and
/// reports the mean final estimate with a 3-standard-error half-width.
pub fn bias_experiment(
    model: &ModelSpec,
    cfg: &SimConfig,
    estimator: &EstimatorChoice,
    n_replicates: usize,
    master_seed: u64,
) -> Result<BiasReport> {
    if n_replicates < 2 {
        return Err(Error::invalid("a bias study needs at least 2 replicates"));
    }
    let trajs = generate_replicates(model, cfg, n_replicates, master_seed)?;
    estimate_on_replicates(estimator, &trajs, model)
}

/// Kalman filter with `σ` absorbed into the prior, as used by the
/// reference experiment.
pub fn kalman_in_prior(m_prior: f64, sigma_prior: f64) -> EstimatorChoice {
    EstimatorChoice::Kalman {
        m_prior: vec![m_prior],
        sigma_prior: vec![sigma_prior],
        sigma_mode: SigmaMode::InPrior,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_cubic, make_ou};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_velocity_gives_zero_innovations() {
        let traj =
            Trajectory::from_positions(0.1, 1, (0..20).map(|n| 0.5 * n as f64).collect()).unwrap();
        let xi = rescaled_innovations(&midpoint_velocities(&traj).unwrap(), 1.0).unwrap();
        assert!(xi[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rescaling_is_homogeneous_in_sigma() {
        let m = make_ou(0.0, 1.0).unwrap();
        let traj = generate_reference(&m, &SimConfig::new(0.01, 10, 200, 1)).unwrap();
        let s = midpoint_velocities(&traj).unwrap();
        let a = rescaled_innovations(&s, 1.0).unwrap();
        let b = rescaled_innovations(&s, 2.0).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x / 2f64.sqrt() - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert!(rescaled_innovations(&s, 0.0).is_err());
    }

    #[test]
    fn statistics_of_iid_gaussian() {
        let v: f64 = 2.5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, v.sqrt()).unwrap();
        let xs: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
        let st = xi_statistics(&xs, 2).unwrap();
        let n = xs.len() as f64;
        assert_eq!(st.autocov[0], st.variance);
        assert!((st.variance - v).abs() < 3.0 * v * (2.0 / (n - 1.0)).sqrt());
        assert!(st.autocov[1].abs() < 3.0 * v / n.sqrt());
        assert!(xi_statistics(&xs[..3], 2).is_err());
    }

    #[test]
    fn driftless_innovation_moments() {
        let m = make_ou(0.0, 1.0).unwrap();
        let study = innovation_study(&m, &SimConfig::new(0.01, 50, 50_000, 0), 32, 31, 3).unwrap();
        let targets = [XI_VARIANCE, XI_LAG1, 0.0, 0.0];
        for (k, (s, t)) in study.autocov.iter().zip(targets).enumerate() {
            assert!(s.covers(t, 3.0), "lag {k}: {} ± {}", s.mean, s.std_error);
        }
    }

    #[test]
    fn noiseless_sums_vanish() {
        let m = make_ou(0.0, 0.0).unwrap();
        let traj =
            Trajectory::from_positions(0.1, 1, (0..50).map(|n| 0.2 * n as f64).collect()).unwrap();
        for shifted in [false, true] {
            let s = martingale_sum(&traj, &m, &[0.0], shifted).unwrap()[0];
            assert!(s.abs() < 1e-10, "shifted = {shifted}: {s}");
        }
    }

    #[test]
    fn bias_experiment_is_deterministic() {
        let m = make_cubic(1.0, 2.0).unwrap();
        let cfg = SimConfig::new(0.025, 10, 2_000, 0);
        let choice = EstimatorChoice::UnbiasedSgd {
            theta0: vec![2.0],
            lr: LearningRate::Harmonic { a: 6.0 },
            variant: UnbiasedVariant::ShiftedInnovation,
        };
        let a = bias_experiment(&m, &cfg, &choice, 4, 9).unwrap();
        let b = bias_experiment(&m, &cfg, &choice, 4, 9).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.mean_final_theta(), b.mean_final_theta());
        assert!(bias_experiment(&m, &cfg, &choice, 1, 9).is_err());
    }

    #[test]
    fn estimator_choice_round_trips_through_toml() {
        let choice = kalman_in_prior(2.0, 6.0);
        let text = toml::to_string(&choice).unwrap();
        let back: EstimatorChoice = toml::from_str(&text).unwrap();
        assert_eq!(back, choice);
    }
}
