use super::config::{
    ExperimentConfig, ExperimentKind, KalmanSection, KalmanSigma, MartingaleSection, MleSection,
    ModelSection, SgdSection, SimSection, UnbiasedSgdSection, XiStatsSection,
};
use crate::estimators::{LearningRate, UnbiasedVariant};

/// Master seed shared by all presets.
pub const PRESET_SEED: u64 = 2024;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        (self.build)()
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig1",
        description: "cubic model (theta*=1, sigma=2, tau=0.025, h=tau/100, N=1e5): standard SGD, \
                      unbiased SGD and Kalman (prior m=2, Sigma=6, sigma in prior) from theta0=2 \
                      with alpha=6/n, plus the MLE",
        build: fig1,
    },
    Preset {
        name: "xi-stats",
        description: "OU with theta*=0, sigma=1, tau=0.01, N=1e5, 10 replicates: variance and \
                      lag 1-3 autocovariances of the rescaled innovations (targets 2/3, 1/6, 0, 0)",
        build: xi_stats,
    },
    Preset {
        name: "martingale",
        description: "OU with theta*=0, sigma=1, T=100, 400 replicates: unshifted gain-innovation \
                      sum (mean T*sigma/2) against the shifted sum (mean 0)",
        build: martingale,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

fn base(
    kind: ExperimentKind,
    model: ModelSection,
    sim: SimSection,
    replicates: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        replicates,
        master_seed: PRESET_SEED,
        output_dir: None,
        history_replicates: 1,
        write_trajectory: true,
        model,
        sim,
        lr: None,
        standard_sgd: None,
        unbiased_sgd: None,
        kalman: None,
        mle: None,
        xi_stats: None,
        martingale: None,
        run_info: None,
    }
}

fn fig1() -> ExperimentConfig {
    let tau = 0.025;
    let mut cfg = base(
        ExperimentKind::Estimation,
        ModelSection {
            name: "cubic".into(),
            theta_star: 1.0,
            sigma: 2.0,
        },
        SimSection {
            tau,
            h: tau / 100.0,
            n_obs: 100_000,
            x0: None,
            u0: None,
            burn_in: 0.0,
        },
        1,
    );
    cfg.lr = Some(LearningRate::Harmonic { a: 6.0 });
    cfg.standard_sgd = Some(SgdSection { theta0: vec![2.0] });
    cfg.unbiased_sgd = Some(UnbiasedSgdSection {
        theta0: vec![2.0],
        variant: UnbiasedVariant::ShiftedInnovation,
    });
    cfg.kalman = Some(KalmanSection {
        m_prior: vec![2.0],
        sigma_prior: vec![6.0],
        sigma_mode: KalmanSigma::InPrior,
        sigma: None,
    });
    cfg.mle = Some(MleSection {});
    cfg
}

fn ou_driftless(tau: f64, substeps: usize, n_obs: usize) -> (ModelSection, SimSection) {
    (
        ModelSection {
            name: "ou".into(),
            theta_star: 0.0,
            sigma: 1.0,
        },
        SimSection {
            tau,
            h: tau / substeps as f64,
            n_obs,
            x0: None,
            u0: None,
            burn_in: 0.0,
        },
    )
}

fn xi_stats() -> ExperimentConfig {
    let (model, sim) = ou_driftless(0.01, 100, 100_000);
    let mut cfg = base(ExperimentKind::XiStats, model, sim, 10);
    cfg.xi_stats = Some(XiStatsSection { max_lag: 3 });
    cfg.write_trajectory = false;
    cfg
}

fn martingale() -> ExperimentConfig {
    let (model, sim) = ou_driftless(0.01, 20, 10_000);
    let mut cfg = base(ExperimentKind::Martingale, model, sim, 400);
    cfg.martingale = Some(MartingaleSection {
        theta: Some(vec![0.0]),
    });
    cfg.write_trajectory = false;
    cfg
}
