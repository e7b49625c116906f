use crate::error::{Error, Result};
use crate::stats::NeumaierSum;
use crate::velocity::VelocitySeries;

/// Diffusion constant from the quadratic variation of midpoint velocities:
///
/// ```text
/// σ̂ = 3 / (2 τ K d) Σ_n ‖Ũ_{n+1/2} - Ũ_{n-1/2}‖²
/// ```
///
/// summed over the `K = N - 1` available increments. Each increment has
/// variance `(2/3) σ τ` per component, hence the factor `3/2`.
pub fn estimate_sigma(series: &VelocitySeries) -> Result<f64> {
    let terms = series.interior().len();
    if terms == 0 {
        return Err(Error::invalid(
            "estimate_sigma needs at least one velocity increment (3 positions)",
        ));
    }
    let d = series.d();
    let mut buf = vec![0.0; d];
    let mut acc = NeumaierSum::default();
    for n in series.interior() {
        series.increment_into(n, &mut buf);
        acc.add(buf.iter().map(|v| v * v).sum());
    }
    Ok(3.0 * acc.total() / (2.0 * series.tau() * terms as f64 * d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_cubic, make_ou};
    use crate::simulate::{generate_reference, SimConfig, Trajectory};
    use crate::velocity::midpoint_velocities;

    #[test]
    fn hand_computed_case() {
        // midpoints [0, 1, 0] at tau = 0.5: increments [1, -1].
        let traj = Trajectory::from_positions(0.5, 1, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let s = midpoint_velocities(&traj).unwrap();
        assert_eq!(estimate_sigma(&s).unwrap(), 3.0);
    }

    fn deterministic_estimate(tau: f64) -> f64 {
        let model = make_cubic(1.0, 0.0).unwrap();
        let mut cfg = SimConfig::new(tau, 10, (50.0 / tau) as usize, 0);
        cfg.x0 = vec![1.0];
        let s = midpoint_velocities(&generate_reference(&model, &cfg).unwrap()).unwrap();
        estimate_sigma(&s).unwrap()
    }

    #[test]
    fn deterministic_data_bias_is_first_order_in_tau() {
        // Without noise the increments are g tau, so the estimate is
        // (3/2) tau mean(g^2) and vanishes linearly with tau.
        let e1 = deterministic_estimate(0.02);
        let e2 = deterministic_estimate(0.01);
        assert!(e1 < 0.05, "estimate {e1}");
        assert!((e1 / e2 - 2.0).abs() < 0.1, "ratio {}", e1 / e2);
    }

    #[test]
    fn recovers_ou_diffusion() {
        let model = make_ou(0.0, 1.0).unwrap();
        let traj = generate_reference(&model, &SimConfig::new(0.01, 100, 100_000, 9)).unwrap();
        let est = estimate_sigma(&midpoint_velocities(&traj).unwrap()).unwrap();
        assert!((est - 1.0).abs() < 0.02, "estimate {est}");
    }

    #[test]
    fn too_few_positions() {
        let traj = Trajectory::from_positions(0.5, 1, vec![0.0, 1.0]).unwrap();
        assert!(estimate_sigma(&midpoint_velocities(&traj).unwrap()).is_err());
    }
}
