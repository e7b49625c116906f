//! Experiment runner behind the command-line tool.
//!
//! An experiment simulates `replicates` trajectories (replicate `i` seeded
//! with [`replicate_seed`]`(master_seed, i)`) and then either runs the
//! configured estimators, computes innovation statistics or evaluates
//! gain-innovation sums. Results go to tidy CSV files plus a
//! `metadata.json` that can be fed back as a config.

mod config;
mod presets;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;

use crate::diagnostics::{
    martingale_sum, rescaled_innovations, xi_statistics, EstimatorChoice, InnovationStats, XI_LAG1,
    XI_VARIANCE,
};
use crate::error::Error;
use crate::estimators::{
    estimate_sigma, kalman_history_columns, kalman_run, mle_fit, sgd_standard_run,
    sgd_unbiased_run, History,
};
use crate::models::ModelSpec;
use crate::rng::{replicate_seed, SEED_DERIVATION};
use crate::simulate::{fmt_f64, generate_reference, Trajectory};
use crate::stats::SampleSummary;
use crate::velocity::midpoint_velocities;

pub use config::{
    ConfigError, ExperimentConfig, ExperimentKind, KalmanSection, KalmanSigma, MartingaleSection,
    MleSection, ModelSection, SgdSection, SimSection, Source, UnbiasedSgdSection, Validated,
    XiStatsSection,
};
pub use presets::{preset, Preset, PRESETS, PRESET_SEED};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "HYPOELLIPTIC_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(ConfigError),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: Error,
    },
}

impl From<ConfigError> for ExperimentError {
    fn from(e: ConfigError) -> Self {
        ExperimentError::Config(e)
    }
}

impl ExperimentError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Runtime { .. } => 1,
        }
    }
}

fn runtime(context: impl Into<String>) -> impl FnOnce(Error) -> ExperimentError {
    let context = context.into();
    move |source| ExperimentError::Runtime { context, source }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: Option<PathBuf>,
    /// Files written, in order.
    pub files: Vec<PathBuf>,
    /// Human-readable summary table.
    pub table: String,
}

/// Picks the output directory: explicit argument, then the config's
/// `output_dir`, then [`OUTPUT_DIR_ENV`], then `runs/<name>`.
pub fn resolve_output_dir(explicit: Option<&Path>, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(base) if !base.is_empty() => PathBuf::from(base).join(name),
        _ => PathBuf::from("runs").join(name),
    }
}

/// Runs `cfg`. With `output_dir = None` nothing is written and only the
/// summary table is produced.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    source: Option<&Source>,
    output_dir: Option<&Path>,
) -> Result<RunReport, ExperimentError> {
    let v = cfg.validate(source)?;
    let resolved = cfg.resolved()?;
    let mut out = Outputs::new(output_dir, source)?;

    let seeds: Vec<u64> = (0..cfg.replicates)
        .map(|i| replicate_seed(cfg.master_seed, i))
        .collect();
    let trajs = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            generate_reference(&v.model, &v.sim.with_seed(s))
                .map_err(runtime(format!("replicate {i} (seed {s}): simulation")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    if cfg.write_trajectory {
        out.write("trajectory.csv", |w| trajs[0].write_csv(w))?;
    }

    let table = match cfg.kind {
        ExperimentKind::Estimation => run_estimation(cfg, &v, &trajs, &seeds, &mut out)?,
        ExperimentKind::XiStats => run_xi_stats(&resolved, &v, &trajs, &seeds, &mut out)?,
        ExperimentKind::Martingale => run_martingale(&resolved, &v, &trajs, &seeds, &mut out)?,
    };

    let metadata = metadata_json(&resolved, &v, &seeds);
    out.write("metadata.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &metadata).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })?;

    Ok(RunReport {
        output_dir: output_dir.map(Path::to_path_buf),
        files: out.files,
        table,
    })
}

struct Outputs {
    dir: Option<PathBuf>,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: Option<&Path>, source: Option<&Source>) -> Result<Self, ExperimentError> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| ConfigError {
                line: source.and_then(|s| s.line_of("output_dir")),
                field: Some("output_dir".into()),
                message: format!("cannot create {}: {e}", d.display()),
            })?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            files: Vec::new(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>,
    ) -> Result<(), ExperimentError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(name);
        let context = format!("writing {}", path.display());
        let result = File::create(&path).map_err(Error::from).and_then(|f| {
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush().map_err(Error::from)
        });
        result.map_err(runtime(context))?;
        self.files.push(path);
        Ok(())
    }
}

struct EstimatorOutcome {
    label: &'static str,
    theta: Vec<f64>,
    posterior_sd: Option<Vec<f64>>,
    mle_sigma: Option<f64>,
    history: Option<(History, Vec<String>)>,
}

struct ReplicateOutcome {
    sigma_hat: f64,
    estimators: Vec<EstimatorOutcome>,
}

fn theta_columns(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("theta_{j}")).collect()
}

fn run_one(
    label: &'static str,
    choice: &EstimatorChoice,
    traj: &Trajectory,
    model: &ModelSpec,
    record: bool,
) -> crate::Result<EstimatorOutcome> {
    let p = model.d_theta();
    let plain = |theta: Vec<f64>, history: Option<History>| EstimatorOutcome {
        label,
        theta,
        posterior_sd: None,
        mle_sigma: None,
        history: history.map(|h| (h, theta_columns(p))),
    };
    Ok(match choice {
        EstimatorChoice::StandardSgd { theta0, lr } => {
            let s = sgd_standard_run(traj, model, theta0, *lr, record)?;
            plain(s.theta, s.history)
        }
        EstimatorChoice::UnbiasedSgd {
            theta0,
            lr,
            variant,
        } => {
            let s = sgd_unbiased_run(traj, model, theta0, *lr, *variant, record)?;
            plain(s.theta, s.history)
        }
        EstimatorChoice::Kalman { .. } => {
            let opts = choice.kalman_options(record)?.expect("kalman choice");
            let s = kalman_run(traj, model, &opts)?;
            EstimatorOutcome {
                label,
                theta: s.m.iter().copied().collect(),
                posterior_sd: Some(s.std_devs()),
                mle_sigma: None,
                history: s.history.map(|h| (h, kalman_history_columns(p))),
            }
        }
        EstimatorChoice::Mle => {
            let fit = mle_fit(traj, model)?;
            EstimatorOutcome {
                label,
                theta: fit.theta_hat.iter().copied().collect(),
                posterior_sd: None,
                mle_sigma: Some(fit.sigma_hat),
                history: None,
            }
        }
    })
}

fn run_estimation(
    cfg: &ExperimentConfig,
    v: &Validated,
    trajs: &[Trajectory],
    seeds: &[u64],
    out: &mut Outputs,
) -> Result<String, ExperimentError> {
    let results = trajs
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let ctx = |what: &str| format!("replicate {i} (seed {}): {what}", seeds[i]);
            let series = midpoint_velocities(traj).map_err(runtime(ctx("velocities")))?;
            let sigma_hat = estimate_sigma(&series).map_err(runtime(ctx("diffusion estimator")))?;
            let record = i < cfg.history_replicates;
            let estimators = v
                .estimators
                .iter()
                .map(|(label, choice)| {
                    run_one(label, choice, traj, &v.model, record).map_err(runtime(ctx(label)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ReplicateOutcome {
                sigma_hat,
                estimators,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let tau = v.sim.tau;
    for (i, r) in results.iter().enumerate() {
        for e in &r.estimators {
            if let Some((h, cols)) = &e.history {
                out.write(&format!("{}_history_r{i:03}.csv", e.label), |w| {
                    h.write_csv(w, tau, cols)
                })?;
            }
        }
    }

    let theta_star = v.model.theta_star().map(<[f64]>::to_vec);
    out.write("summary.csv", |w| {
        writeln!(w, "replicate,seed,estimator,quantity,component,value")?;
        for (i, r) in results.iter().enumerate() {
            let row = |w: &mut BufWriter<File>, est: &str, q: &str, j: usize, x: f64| {
                writeln!(w, "{i},{},{est},{q},{j},{}", seeds[i], fmt_f64(x))
            };
            row(w, "diffusion", "sigma_hat", 0, r.sigma_hat)?;
            for e in &r.estimators {
                for (j, &t) in e.theta.iter().enumerate() {
                    row(w, e.label, "theta", j, t)?;
                }
                if let Some(sd) = &e.posterior_sd {
                    for (j, &s) in sd.iter().enumerate() {
                        row(w, e.label, "posterior_sd", j, s)?;
                        if let Some(ts) = &theta_star {
                            let covered = ((e.theta[j] - ts[j]).abs() <= s) as u8 as f64;
                            row(w, e.label, "band_covers_theta_star", j, covered)?;
                        }
                    }
                }
                if let Some(s) = e.mle_sigma {
                    row(w, e.label, "sigma_hat", 0, s)?;
                }
            }
        }
        if results.len() >= 2 {
            for (est, q, j, values) in aggregate_columns(&results) {
                let s = SampleSummary::from_values(&values);
                for (stat, x) in [
                    ("mean", s.mean),
                    ("std_error", s.std_error),
                    ("ci_halfwidth", 3.0 * s.std_error),
                ] {
                    writeln!(w, "all,,{est},{q}_{stat},{j},{}", fmt_f64(x))?;
                }
            }
        }
        Ok(())
    })?;

    Ok(estimation_table(&results, theta_star.as_deref()))
}

/// `(estimator, quantity, component, values across replicates)` for every
/// final estimate, the diffusion estimate first.
fn aggregate_columns(
    results: &[ReplicateOutcome],
) -> Vec<(&'static str, &'static str, usize, Vec<f64>)> {
    let mut cols = vec![(
        "diffusion",
        "sigma_hat",
        0,
        results.iter().map(|r| r.sigma_hat).collect(),
    )];
    let Some(first) = results.first() else {
        return cols;
    };
    for (k, e) in first.estimators.iter().enumerate() {
        for j in 0..e.theta.len() {
            cols.push((
                e.label,
                "theta",
                j,
                results.iter().map(|r| r.estimators[k].theta[j]).collect(),
            ));
        }
        if e.mle_sigma.is_some() {
            let vals = results
                .iter()
                .map(|r| r.estimators[k].mle_sigma.unwrap_or(f64::NAN))
                .collect();
            cols.push((e.label, "sigma_hat", 0, vals));
        }
    }
    cols
}

fn estimation_table(results: &[ReplicateOutcome], theta_star: Option<&[f64]>) -> String {
    let mut s = String::new();
    let n = results.len();
    if let Some(ts) = theta_star {
        s.push_str(&format!("theta* = {ts:?}, replicates = {n}\n"));
    }
    s.push_str(&format!(
        "{:<24} {:>10} {:>12} {:>12}\n",
        "quantity", "component", "mean", "3 s.e."
    ));
    for (est, q, j, vals) in aggregate_columns(results) {
        let sum = SampleSummary::from_values(&vals);
        let ci = if n >= 2 {
            format!("{:12.6}", 3.0 * sum.std_error)
        } else {
            format!("{:>12}", "-")
        };
        s.push_str(&format!(
            "{:<24} {j:>10} {:12.6} {ci}\n",
            format!("{est} {q}"),
            sum.mean
        ));
    }
    for (k, e) in results[0].estimators.iter().enumerate() {
        if let (Some(_), Some(ts)) = (&e.posterior_sd, theta_star) {
            let covered = results
                .iter()
                .filter(|r| {
                    let e = &r.estimators[k];
                    let sd = e.posterior_sd.as_ref().expect("same estimator");
                    e.theta
                        .iter()
                        .zip(sd)
                        .zip(ts)
                        .all(|((t, sd), ts)| (t - ts).abs() <= *sd)
                })
                .count();
            s.push_str(&format!(
                "{} 1-sigma band covers theta*: {covered}/{n}\n",
                e.label
            ));
        }
    }
    s
}

fn run_xi_stats(
    cfg: &ExperimentConfig,
    v: &Validated,
    trajs: &[Trajectory],
    seeds: &[u64],
    out: &mut Outputs,
) -> Result<String, ExperimentError> {
    let max_lag = cfg.xi_stats.as_ref().map_or(3, |x| x.max_lag);
    let sigma = v.model.sigma();
    let stats = trajs
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let ctx = format!("replicate {i} (seed {}): innovation statistics", seeds[i]);
            midpoint_velocities(t)
                .and_then(|s| rescaled_innovations(&s, sigma))
                .and_then(|xi| xi_statistics(&xi[0], max_lag))
                .map_err(runtime(ctx))
        })
        .collect::<Result<Vec<InnovationStats>, _>>()?;

    out.write("xi_stats.csv", |w| {
        writeln!(w, "replicate,seed,n_terms,lag,autocov")?;
        for (i, st) in stats.iter().enumerate() {
            for (k, a) in st.autocov.iter().enumerate() {
                writeln!(w, "{i},{},{},{k},{}", seeds[i], st.n_terms, fmt_f64(*a))?;
            }
        }
        Ok(())
    })?;

    let rows: Vec<(usize, f64, SampleSummary)> = (0..=max_lag)
        .map(|k| {
            let vals: Vec<f64> = stats.iter().map(|s| s.autocov[k]).collect();
            let target = match k {
                0 => XI_VARIANCE,
                1 => XI_LAG1,
                _ => 0.0,
            };
            (k, target, SampleSummary::from_values(&vals))
        })
        .collect();
    out.write("summary.csv", |w| {
        writeln!(w, "lag,target,mean,std_error,within_3se")?;
        for (k, target, s) in &rows {
            writeln!(
                w,
                "{k},{},{},{},{}",
                fmt_f64(*target),
                fmt_f64(s.mean),
                fmt_f64(s.std_error),
                s.covers(*target, 3.0)
            )?;
        }
        Ok(())
    })?;

    let mut table = format!(
        "rescaled innovations, {} replicates of {} terms\n{:>4} {:>10} {:>12} {:>12} {:>8}\n",
        stats.len(),
        stats[0].n_terms,
        "lag",
        "target",
        "mean",
        "s.e.",
        "3 s.e."
    );
    for (k, target, s) in &rows {
        let ok = if s.covers(*target, 3.0) { "ok" } else { "MISS" };
        table.push_str(&format!(
            "{k:>4} {target:>10.6} {:>12.6} {:>12.6} {ok:>8}\n",
            s.mean, s.std_error
        ));
    }
    Ok(table)
}

fn run_martingale(
    cfg: &ExperimentConfig,
    v: &Validated,
    trajs: &[Trajectory],
    seeds: &[u64],
    out: &mut Outputs,
) -> Result<String, ExperimentError> {
    let theta = cfg
        .martingale
        .as_ref()
        .and_then(|m| m.theta.clone())
        .expect("resolved config carries theta");
    let sums = trajs
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let ctx = format!("replicate {i} (seed {}): martingale sums", seeds[i]);
            let a = martingale_sum(t, &v.model, &theta, false).map_err(runtime(ctx.clone()))?;
            let b = martingale_sum(t, &v.model, &theta, true).map_err(runtime(ctx))?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    out.write("martingale.csv", |w| {
        writeln!(w, "replicate,seed,shifted,component,sum")?;
        for (i, (a, b)) in sums.iter().enumerate() {
            for (shifted, s) in [(false, a), (true, b)] {
                for (j, x) in s.iter().enumerate() {
                    writeln!(w, "{i},{},{shifted},{j},{}", seeds[i], fmt_f64(*x))?;
                }
            }
        }
        Ok(())
    })?;

    // Reference values are known for the OU family at its true parameter,
    // where the gain is the velocity.
    let ou_at_truth = v.model.name() == "ou" && v.model.theta_star() == Some(&theta[..]);
    let horizon = v.sim.n_obs as f64 * v.sim.tau;
    let p = theta.len();
    let mut rows = Vec::new();
    for shifted in [false, true] {
        for j in 0..p {
            let vals: Vec<f64> = sums
                .iter()
                .map(|(a, b)| if shifted { b[j] } else { a[j] })
                .collect();
            let target = ou_at_truth.then(|| {
                if shifted {
                    0.0
                } else {
                    horizon * v.model.sigma() / 2.0
                }
            });
            rows.push((shifted, j, target, SampleSummary::from_values(&vals)));
        }
    }
    out.write("summary.csv", |w| {
        writeln!(w, "shifted,component,target,mean,std_error,within_3se")?;
        for (shifted, j, target, s) in &rows {
            let (t, ok) = match target {
                Some(t) => (fmt_f64(*t), s.covers(*t, 3.0).to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{shifted},{j},{t},{},{},{ok}",
                fmt_f64(s.mean),
                fmt_f64(s.std_error)
            )?;
        }
        Ok(())
    })?;

    let mut table = format!(
        "gain-innovation sums at theta = {theta:?}, T = {horizon}, {} replicates\n{:>8} {:>10} {:>12} {:>12} {:>8}\n",
        sums.len(),
        "shifted",
        "target",
        "mean",
        "s.e.",
        "3 s.e."
    );
    for (shifted, _, target, s) in &rows {
        let (t, ok) = match target {
            Some(t) => (
                format!("{t:10.4}"),
                if s.covers(*t, 3.0) { "ok" } else { "MISS" },
            ),
            None => (format!("{:>10}", "-"), "-"),
        };
        table.push_str(&format!(
            "{shifted:>8} {t} {:>12.4} {:>12.4} {ok:>8}\n",
            s.mean, s.std_error
        ));
    }
    Ok(table)
}

fn metadata_json(resolved: &ExperimentConfig, v: &Validated, seeds: &[u64]) -> serde_json::Value {
    let mut value = serde_json::to_value(resolved).expect("config serializes to JSON");
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut notes = vec![
        "initial state defaults to x0 = 0, u0 = 0 with no burn-in unless configured".to_string(),
        "velocity advanced by Euler-Maruyama at step h; position by the trapezoidal rule"
            .to_string(),
        "diffusion estimate normalized per state component".to_string(),
    ];
    if resolved.kalman.is_some() {
        notes.push(
            "kalman.sigma_prior is a variance; the reference setup is quoted both as variance 6 \
             and as N(2, 1), the preset uses 6"
                .to_string(),
        );
    }
    value["run_info"] = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "substeps": v.sim.substeps().unwrap_or(0),
        "seed_derivation": SEED_DERIVATION,
        "replicate_seeds": seeds,
        "notes": notes,
    });
    value
}

/// Reads the output directory back into memory, for determinism checks.
pub fn read_outputs(report: &RunReport) -> io::Result<Vec<(String, Vec<u8>)>> {
    report
        .files
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            fs::read(p).map(|b| (name, b))
        })
        .collect()
}
