//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: estimator curves on one simulated
//! trajectory, innovation autocovariances over replicates, and the shifted
//! and unshifted gain-innovation sums over replicates. Each has a plain
//! Rust counterpart (suffix `_impl`) used by the native tests.

use hypoelliptic::diagnostics::{
    generate_replicates, martingale_sum, InnovationStudy, XI_LAG1, XI_VARIANCE,
};
use hypoelliptic::estimators::{
    estimate_sigma, kalman_run, mle_fit, sgd_standard_run, sgd_unbiased_run, History,
    KalmanOptions, LearningRate, SigmaMode, UnbiasedVariant,
};
use hypoelliptic::models::by_name;
use hypoelliptic::{generate_reference, make_ou, midpoint_velocities, SimConfig};
use wasm_bindgen::prelude::*;

/// Estimator trajectories sampled at common steps `n`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Curves {
    t: Vec<f64>,
    standard: Vec<f64>,
    unbiased: Vec<f64>,
    kalman_m: Vec<f64>,
    kalman_sd: Vec<f64>,
    sigma_hat: f64,
    mle_theta: f64,
    mle_sigma: f64,
}

#[wasm_bindgen]
impl Curves {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn standard(&self) -> Vec<f64> {
        self.standard.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn unbiased(&self) -> Vec<f64> {
        self.unbiased.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn kalman_m(&self) -> Vec<f64> {
        self.kalman_m.clone()
    }
    /// Square root of the filter covariance at each sampled step.
    #[wasm_bindgen(getter)]
    pub fn kalman_sd(&self) -> Vec<f64> {
        self.kalman_sd.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }
    #[wasm_bindgen(getter)]
    pub fn mle_theta(&self) -> f64 {
        self.mle_theta
    }
    #[wasm_bindgen(getter)]
    pub fn mle_sigma(&self) -> f64 {
        self.mle_sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveParams {
    pub model: String,
    pub theta_star: f64,
    pub sigma: f64,
    pub tau: f64,
    pub substeps: u32,
    pub n_obs: u32,
    pub seed: u32,
    /// Harmonic learning rate `a / n`.
    pub lr_a: f64,
    pub theta0: f64,
    pub prior_var: f64,
    pub max_points: u32,
}

fn check_size(n_obs: u32, substeps: u32) -> Result<(), String> {
    // Keep a single call below ~10^8 fine steps so the page stays usable.
    if u64::from(n_obs) * u64::from(substeps.max(1)) > 100_000_000 {
        return Err("n_obs * substeps must not exceed 1e8".into());
    }
    Ok(())
}

/// Steps `1 = n_0 < ... < n_k = last`, at most `max_points` of them.
fn sample_steps(last: usize, max_points: usize) -> Vec<usize> {
    let k = max_points.clamp(2, last.max(2));
    let mut steps: Vec<usize> = (0..k)
        .map(|i| 1 + ((last - 1) as f64 * i as f64 / (k - 1) as f64).round() as usize)
        .collect();
    steps.dedup();
    steps
}

fn column_at(h: &History, j: usize, steps: &[usize]) -> Vec<f64> {
    // Histories start at n = 1 with one row per step.
    steps.iter().map(|&n| h.row(n - 1)[j]).collect()
}

pub fn estimate_curves_impl(p: &CurveParams) -> Result<Curves, String> {
    check_size(p.n_obs, p.substeps)?;
    let model = by_name(&p.model, p.theta_star, p.sigma).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(
        p.tau,
        p.substeps as usize,
        p.n_obs as usize,
        u64::from(p.seed),
    );
    let traj = generate_reference(&model, &cfg).map_err(|e| e.to_string())?;
    let lr = LearningRate::Harmonic { a: p.lr_a };
    let theta0 = [p.theta0];
    let standard = sgd_standard_run(&traj, &model, &theta0, lr, true).map_err(|e| e.to_string())?;
    let unbiased = sgd_unbiased_run(
        &traj,
        &model,
        &theta0,
        lr,
        UnbiasedVariant::ShiftedInnovation,
        true,
    )
    .map_err(|e| e.to_string())?;
    let kalman = kalman_run(
        &traj,
        &model,
        &KalmanOptions::scalar(p.theta0, p.prior_var, SigmaMode::InPrior).with_history(),
    )
    .map_err(|e| e.to_string())?;
    let sigma_hat = estimate_sigma(&midpoint_velocities(&traj).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mle = mle_fit(&traj, &model).map_err(|e| e.to_string())?;

    let (hs, hu, hk) = (
        standard.history.expect("recorded"),
        unbiased.history.expect("recorded"),
        kalman.history.expect("recorded"),
    );
    let last = hu.len().min(hk.len()).min(hs.len());
    let steps = sample_steps(last, p.max_points as usize);
    Ok(Curves {
        t: steps.iter().map(|&n| n as f64 * p.tau).collect(),
        standard: column_at(&hs, 0, &steps),
        unbiased: column_at(&hu, 0, &steps),
        kalman_m: column_at(&hk, 0, &steps),
        kalman_sd: column_at(&hk, 1, &steps)
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect(),
        sigma_hat,
        mle_theta: mle.theta_hat[0],
        mle_sigma: mle.sigma_hat,
    })
}

/// Runs standard SGD, unbiased SGD and the Kalman filter (σ in the prior)
/// on one simulated trajectory and returns downsampled curves.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn estimate_curves(
    model: &str,
    theta_star: f64,
    sigma: f64,
    tau: f64,
    substeps: u32,
    n_obs: u32,
    seed: u32,
    lr_a: f64,
    theta0: f64,
    prior_var: f64,
    max_points: u32,
) -> Result<Curves, JsError> {
    estimate_curves_impl(&CurveParams {
        model: model.to_string(),
        theta_star,
        sigma,
        tau,
        substeps,
        n_obs,
        seed,
        lr_a,
        theta0,
        prior_var,
        max_points,
    })
    .map_err(|e| JsError::new(&e))
}

/// Autocovariances of the rescaled innovations over replicates.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct XiTable {
    mean: Vec<f64>,
    std_error: Vec<f64>,
    target: Vec<f64>,
}

#[wasm_bindgen]
impl XiTable {
    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn std_error(&self) -> Vec<f64> {
        self.std_error.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }
}

pub fn innovation_table_impl(
    tau: f64,
    substeps: u32,
    n_obs: u32,
    replicates: u32,
    seed: u32,
    max_lag: u32,
) -> Result<XiTable, String> {
    check_size(n_obs.saturating_mul(replicates), substeps)?;
    let model = make_ou(0.0, 1.0).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(tau, substeps as usize, n_obs as usize, 0);
    let trajs = generate_replicates(&model, &cfg, replicates as usize, u64::from(seed))
        .map_err(|e| e.to_string())?;
    let study = InnovationStudy::from_trajectories(&trajs, 1.0, max_lag as usize)
        .map_err(|e| e.to_string())?;
    Ok(XiTable {
        mean: study.autocov.iter().map(|s| s.mean).collect(),
        std_error: study.autocov.iter().map(|s| s.std_error).collect(),
        target: (0..=max_lag)
            .map(|k| match k {
                0 => XI_VARIANCE,
                1 => XI_LAG1,
                _ => 0.0,
            })
            .collect(),
    })
}

/// Innovation statistics for the driftless model (`θ* = 0`, `σ = 1`).
#[wasm_bindgen]
pub fn innovation_table(
    tau: f64,
    substeps: u32,
    n_obs: u32,
    replicates: u32,
    seed: u32,
    max_lag: u32,
) -> Result<XiTable, JsError> {
    innovation_table_impl(tau, substeps, n_obs, replicates, seed, max_lag)
        .map_err(|e| JsError::new(&e))
}

/// Per-replicate gain-innovation sums.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct MartingaleSums {
    unshifted: Vec<f64>,
    shifted: Vec<f64>,
    horizon: f64,
}

#[wasm_bindgen]
impl MartingaleSums {
    #[wasm_bindgen(getter)]
    pub fn unshifted(&self) -> Vec<f64> {
        self.unshifted.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn shifted(&self) -> Vec<f64> {
        self.shifted.clone()
    }
    /// Mean of the unshifted sum predicted for σ = 1: `T / 2`.
    #[wasm_bindgen(getter)]
    pub fn unshifted_target(&self) -> f64 {
        self.horizon / 2.0
    }
}

pub fn martingale_sums_impl(
    tau: f64,
    substeps: u32,
    n_obs: u32,
    replicates: u32,
    seed: u32,
) -> Result<MartingaleSums, String> {
    check_size(n_obs.saturating_mul(replicates), substeps)?;
    let model = make_ou(0.0, 1.0).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(tau, substeps as usize, n_obs as usize, 0);
    let trajs = generate_replicates(&model, &cfg, replicates as usize, u64::from(seed))
        .map_err(|e| e.to_string())?;
    let mut unshifted = Vec::with_capacity(trajs.len());
    let mut shifted = Vec::with_capacity(trajs.len());
    for t in &trajs {
        unshifted.push(martingale_sum(t, &model, &[0.0], false).map_err(|e| e.to_string())?[0]);
        shifted.push(martingale_sum(t, &model, &[0.0], true).map_err(|e| e.to_string())?[0]);
    }
    Ok(MartingaleSums {
        unshifted,
        shifted,
        horizon: n_obs as f64 * tau,
    })
}

/// Gain-innovation sums on driftless data (`θ* = 0`, `σ = 1`).
#[wasm_bindgen]
pub fn martingale_sums(
    tau: f64,
    substeps: u32,
    n_obs: u32,
    replicates: u32,
    seed: u32,
) -> Result<MartingaleSums, JsError> {
    martingale_sums_impl(tau, substeps, n_obs, replicates, seed).map_err(|e| JsError::new(&e))
}
